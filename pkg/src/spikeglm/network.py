"""Coupled-population models: per-neuron intensities with cross-coupling.

Each neuron's intensity is driven by the shared stimulus, its own spike
history, and the lagged spikes of every other neuron. Because histories
are data rather than parameters, the Hessian blocks between different
neurons' parameters vanish and the population likelihood splits into
independent per-neuron concave problems, fit here in parallel.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .design import Design, _lag_matrix
from .derivatives import gradient, hessian
from .errors import DataFormatError, DimensionMismatchError, InsufficientDataError
from .likelihood import PREDICTOR_CLAMP, GlmParams, log_likelihood
from .optimize import FitOptions, fit


@dataclass(frozen=True)
class NeuronParams:
    """Parameters of one neuron in a population.

    ``couplings[j]`` weights the lagged spikes of neuron ``j`` (oldest
    first); the self term ``couplings[i]`` plays the role of the
    single-neuron history filter. All coupling filters share one lag
    depth.
    """

    stim_filter: np.ndarray
    couplings: tuple
    bias: float

    def __post_init__(self):
        stim = np.asarray(self.stim_filter, dtype=float).reshape(-1).copy()
        if not np.isfinite(stim).all() or not np.isfinite(self.bias):
            raise ValueError("parameters must be finite")
        stim.flags.writeable = False
        coups = []
        for c in self.couplings:
            arr = np.asarray(c, dtype=float).reshape(-1).copy()
            if not np.isfinite(arr).all():
                raise ValueError("coupling filters must be finite")
            arr.flags.writeable = False
            coups.append(arr)
        if coups and len({c.size for c in coups}) != 1:
            raise DimensionMismatchError("coupling filters must share one lag depth")
        object.__setattr__(self, "stim_filter", stim)
        object.__setattr__(self, "couplings", tuple(coups))
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def num_neurons(self):
        return len(self.couplings)

    @property
    def coupling_lags(self):
        return self.couplings[0].size if self.couplings else 0

    def flat_history_filter(self):
        """All coupling filters concatenated in neuron order."""
        if not self.couplings:
            return np.zeros(0)
        return np.concatenate(self.couplings)


@dataclass(frozen=True)
class PopulationData:
    """A shared stimulus plus one aligned spike train per neuron."""

    stimulus: object
    trains: tuple

    def __post_init__(self):
        trains = tuple(self.trains)
        if not trains:
            raise DataFormatError("population needs at least one spike train")
        for idx, train in enumerate(trains):
            if train.num_bins != self.stimulus.num_bins:
                raise DataFormatError(
                    f"train {idx} has {train.num_bins} bins but the stimulus "
                    f"has {self.stimulus.num_bins}"
                )
            if train.delta != self.stimulus.delta:
                raise DataFormatError(f"train {idx} delta mismatch with stimulus")
        object.__setattr__(self, "trains", trains)

    @property
    def num_neurons(self):
        return len(self.trains)

    @property
    def num_bins(self):
        return self.stimulus.num_bins

    @property
    def delta(self):
        return self.stimulus.delta


@dataclass(frozen=True)
class UnfittableNeuron:
    """Marker returned for a neuron whose data cannot support a fit."""

    neuron: int
    reason: str


def _check_population(data, cfg):
    if data.stimulus.num_locations != 1:
        raise DimensionMismatchError(
            "population models use a single-location stimulus; "
            f"got {data.stimulus.num_locations} locations"
        )
    start = max(cfg.stim_lags, cfg.history_lags)
    if start >= data.num_bins:
        raise InsufficientDataError(
            f"lag depths leave no usable bins in {data.num_bins}"
        )
    return start


def _neuron_design(data, cfg, i, start=None):
    """Design for neuron i: stimulus lags plus every neuron's history lags."""
    if start is None:
        start = _check_population(data, cfg)
    num_bins = data.num_bins
    stim = _lag_matrix(data.stimulus.values[0], cfg.stim_lags, start, num_bins)
    histories = np.concatenate(
        [_lag_matrix(t.counts.astype(float), cfg.history_lags, start, num_bins)
         for t in data.trains],
        axis=1,
    )
    return Design(
        stim, histories, data.trains[i].counts[start:],
        np.arange(start, num_bins), data.delta,
    )


def _check_neuron_params(params_i, data, cfg):
    if params_i.num_neurons != data.num_neurons:
        raise DimensionMismatchError(
            f"parameters carry {params_i.num_neurons} coupling filters for "
            f"{data.num_neurons} neurons"
        )
    if params_i.stim_filter.size != cfg.stim_lags:
        raise DimensionMismatchError("stimulus filter length disagrees with config")
    if params_i.coupling_lags != cfg.history_lags:
        raise DimensionMismatchError("coupling lag depth disagrees with config")


def network_intensity(params_i, stim_lags, histories):
    """Intensity of one bin for one neuron given all lagged inputs.

    ``histories`` supplies one lag vector per neuron, paired with the
    matching coupling filter; with all cross filters zero this reduces
    to the single-neuron intensity.
    """
    histories = [np.asarray(h, dtype=float) for h in histories]
    if len(histories) != params_i.num_neurons:
        raise DimensionMismatchError(
            f"{len(histories)} history vectors for {params_i.num_neurons} couplings"
        )
    stim_lags = np.asarray(stim_lags, dtype=float).reshape(-1)
    if stim_lags.size != params_i.stim_filter.size:
        raise DimensionMismatchError("stimulus lag vector length mismatch")
    u = float(params_i.stim_filter @ stim_lags) + params_i.bias
    for coupling, history in zip(params_i.couplings, histories):
        if history.size != coupling.size:
            raise DimensionMismatchError("history vector length mismatch")
        u += float(coupling @ history)
    u = min(max(u, -PREDICTOR_CLAMP), PREDICTOR_CLAMP)
    return math.exp(u)


def _flat_params(params_i):
    return GlmParams(params_i.stim_filter, params_i.flat_history_filter(),
                     params_i.bias)


def neuron_log_likelihood(params_i, data, cfg, i):
    """Neuron i's additive share of the population log-likelihood."""
    _check_neuron_params(params_i, data, cfg)
    design = _neuron_design(data, cfg, i)
    return log_likelihood(_flat_params(params_i), design, data.delta)


def network_log_likelihood(all_params, data, cfg):
    """Population log-likelihood: the sum of per-neuron terms.

    The coupled model factorizes over neurons once histories are treated
    as fixed regressors, so the total is exactly the sum of single-neuron
    log-likelihoods evaluated with coupled intensities.
    """
    all_params = list(all_params)
    if len(all_params) != data.num_neurons:
        raise DimensionMismatchError(
            f"{len(all_params)} parameter sets for {data.num_neurons} neurons"
        )
    return sum(
        neuron_log_likelihood(p, data, cfg, i) for i, p in enumerate(all_params)
    )


def coupling_gradient(params_i, data, cfg, i, j):
    """Gradient of the likelihood in the coupling filter from neuron j to i.

    Pairs neuron j's lagged spikes with neuron i's intensity and observed
    counts: the count-weighted spike sum of the lags minus ``delta``
    times their intensity-weighted sum.
    """
    _check_neuron_params(params_i, data, cfg)
    if not (0 <= i < data.num_neurons and 0 <= j < data.num_neurons):
        raise IndexError(f"neuron index out of range: i={i}, j={j}")
    start = _check_population(data, cfg)
    design = _neuron_design(data, cfg, i, start)
    grad = gradient(_flat_params(params_i), design, data.delta)
    lags = cfg.history_lags
    return grad.history_filter[j * lags:(j + 1) * lags]


def neuron_hessian(params_i, data, cfg):
    """Hessian of neuron i's likelihood over its own parameters.

    Layout is [stim_filter | couplings (neuron order) | bias]. The model
    is a single-neuron GLM with an enlarged regressor, so the matrix is
    negative semidefinite; blocks involving other neurons' parameters
    are identically zero and not represented.
    """
    _check_neuron_params(params_i, data, cfg)
    # Curvature depends only on the intensities, not on which neuron's
    # counts sit in the observed column, so any row set with the shared
    # regressors will do.
    design = _neuron_design(data, cfg, 0)
    return hessian(_flat_params(params_i), design, data.delta)


def _unpack_result(result, num_neurons, coupling_lags):
    flat = result.params
    couplings = tuple(
        flat.history_filter[j * coupling_lags:(j + 1) * coupling_lags]
        for j in range(num_neurons)
    )
    return replace(result, params=NeuronParams(flat.stim_filter, couplings, flat.bias))


def fit_population(data, cfg, options=None, parallel=True, max_workers=None):
    """Fit every neuron's parameters independently.

    Cross-neuron Hessian blocks are zero, so the per-neuron maximum
    likelihood fits jointly maximize the population likelihood. Neurons
    whose usable bins contain no spikes are returned as
    :class:`UnfittableNeuron` rather than failing the whole population.
    Results are ordered by neuron index regardless of scheduling.
    """
    options = options or FitOptions()
    start = _check_population(data, cfg)
    designs = [_neuron_design(data, cfg, i, start) for i in range(data.num_neurons)]

    def fit_one(i):
        if designs[i].total_spikes == 0:
            return UnfittableNeuron(neuron=i, reason="no spikes in usable bins")
        result = fit(designs[i], data.delta, options)
        return _unpack_result(result, data.num_neurons, cfg.history_lags)

    if parallel and data.num_neurons > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(fit_one, range(data.num_neurons)))
    return [fit_one(i) for i in range(data.num_neurons)]
