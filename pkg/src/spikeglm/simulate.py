"""Ground-truth spike-train generation with history feedback.

Spikes are emitted bin by bin: the intensity of bin ``t`` is computed
from the stimulus and the spikes already generated before ``t``, and the
bin fires with probability ``1 - exp(-rate*delta)``, the exact chance of
at least one event in the bin. Counts are therefore binary.

Randomness is drawn from numpy's PCG64 generator through fixed,
documented sub-streams of the configured seed so runs are bit-identical
across platforms:

* stimulus noise:      ``SeedSequence(seed, spawn_key=(0,))``
* neuron ``i`` spikes: ``SeedSequence(seed, spawn_key=(1, i))``

A single-train simulation uses the neuron-0 spike stream, so a
one-neuron population reproduces it exactly. One uniform draw is
consumed per live bin per neuron, in bin order, regardless of outcomes.
"""

import math
import warnings as _warnings
from dataclasses import dataclass

import numpy as np

from .design import SpikeTrain, Stimulus
from .errors import DataFormatError, DimensionMismatchError, IntensityOverflowError
from .likelihood import PREDICTOR_CLAMP
from .network import PopulationData

STIMULUS_KINDS = ("gaussian-white-noise", "constant", "custom")

_STIMULUS_KEY = 0
_SPIKE_KEY = 1


class ResolutionWarning(UserWarning):
    """Emitted when expected counts per bin are too large for binary emission."""


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings: length, bin width, seed, stimulus flavor."""

    num_bins: int
    delta: float
    seed: int
    stimulus_kind: str = "gaussian-white-noise"

    def __post_init__(self):
        if int(self.num_bins) < 1:
            raise DataFormatError("num_bins must be positive")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise DataFormatError("delta must be a positive finite scalar")
        if self.stimulus_kind not in STIMULUS_KINDS:
            raise DataFormatError(
                f"unknown stimulus kind {self.stimulus_kind!r}; "
                f"expected one of {STIMULUS_KINDS}"
            )
        object.__setattr__(self, "num_bins", int(self.num_bins))
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "seed", int(self.seed))


def _stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def stimulus_stream(seed):
    """The generator used for stimulus noise under ``seed``."""
    return _stream(seed, _STIMULUS_KEY)


def spike_stream(seed, neuron):
    """The generator used for neuron ``neuron``'s spike draws under ``seed``."""
    return _stream(seed, _SPIKE_KEY, neuron)


def generate_stimulus(cfg, num_locations=1):
    """Deterministic stimulus for the configured kind and seed.

    Gaussian white noise draws independent standard normals; the constant
    kind is all ones. Custom stimuli are loaded from files, not
    generated.
    """
    if num_locations < 1:
        raise DataFormatError("num_locations must be >= 1")
    if cfg.stimulus_kind == "constant":
        values = np.ones((num_locations, cfg.num_bins))
    elif cfg.stimulus_kind == "gaussian-white-noise":
        values = stimulus_stream(cfg.seed).standard_normal(
            (num_locations, cfg.num_bins)
        )
    else:
        raise DataFormatError("custom stimuli are read from files, not generated")
    return Stimulus(values, cfg.delta)


def _stimulus_drive(stim_filter, stimulus):
    """Per-bin stimulus contribution; zero inside the stimulus burn-in."""
    locations = stimulus.num_locations
    num_bins = stimulus.num_bins
    stim_filter = np.asarray(stim_filter, dtype=float).reshape(-1)
    if stim_filter.size % locations != 0:
        raise DimensionMismatchError(
            f"stimulus filter of length {stim_filter.size} does not divide into "
            f"{locations} locations"
        )
    lags = stim_filter.size // locations
    drive = np.zeros(num_bins)
    if lags == 0 or lags > num_bins:
        if lags > num_bins:
            raise DataFormatError("stimulus filter is longer than the series")
        return drive, lags
    weights = stim_filter.reshape(locations, lags)
    windows = np.lib.stride_tricks.sliding_window_view(stimulus.values, lags, axis=1)
    drive[lags:] = np.einsum("itl,il->t", windows[:, :num_bins - lags, :], weights)
    return drive, lags


def _emit(drive, history_filters, cfg, neuron_streams, stim_lags, forced=None):
    """Shared sequential emission loop.

    ``drive`` is (neurons, bins) of stimulus-plus-bias contributions;
    ``history_filters[i][j]`` couples neuron j's past spikes into neuron
    i. Returns the (neurons, bins) count array.
    """
    num_neurons, num_bins = drive.shape
    lag_depth = history_filters.shape[2]
    burn = max(int(stim_lags), lag_depth)
    if burn >= num_bins:
        raise DataFormatError(
            f"burn-in of {burn} bins leaves nothing to simulate in {num_bins}"
        )
    reversed_filters = history_filters[:, :, ::-1]
    feedback = np.zeros((num_neurons, num_bins))
    counts = np.zeros((num_neurons, num_bins), dtype=np.int64)
    draws = np.stack([s.random(num_bins - burn) for s in neuron_streams])
    delta = cfg.delta
    coarse_bins = 0
    for t in range(burn, num_bins):
        col = t - burn
        for i in range(num_neurons):
            u = drive[i, t] + feedback[i, t]
            if not (-PREDICTOR_CLAMP <= u <= PREDICTOR_CLAMP):
                raise IntensityOverflowError(
                    f"linear predictor {u:g} at bin {t} exceeds the "
                    f"+/-{PREDICTOR_CLAMP:g} guard; the model is diverging",
                    bin_index=t, predictor=u,
                )
            expected = math.exp(u) * delta
            if expected >= 0.5:
                coarse_bins += 1
            fire = 1 if draws[i, col] < -math.expm1(-expected) else 0
            if forced is not None and i == 0 and t in forced:
                fire = int(forced[t])
            if fire:
                counts[i, t] = fire
                stop = min(num_bins, t + 1 + lag_depth)
                width = stop - (t + 1)
                if width > 0:
                    feedback[:, t + 1:stop] += fire * reversed_filters[:, i, :width]
    if coarse_bins:
        _warnings.warn(
            f"expected count reached 0.5 in {coarse_bins} bins; binary emission "
            "underestimates the rate at this resolution",
            ResolutionWarning,
            stacklevel=3,
        )
    return counts


def simulate_spike_train(params, stimulus, cfg, forced=None):
    """Generate one spike train from a single-neuron model.

    Bins inside the burn-in region (no full lag window) emit zero.
    ``forced`` optionally maps bin indices to fixed counts, bypassing the
    random draw for those bins without consuming extra randomness; this
    supports causality checks and does not perturb any earlier bin.

    Raises
    ------
    IntensityOverflowError
        If the linear predictor leaves the clamp guard, which means the
        model's self-excitation is running away.
    """
    if stimulus.num_bins != cfg.num_bins:
        raise DataFormatError(
            f"stimulus has {stimulus.num_bins} bins but config says {cfg.num_bins}"
        )
    if stimulus.delta != cfg.delta:
        raise DataFormatError("stimulus delta disagrees with config")
    drive, stim_lags = _stimulus_drive(params.stim_filter, stimulus)
    drive = drive[None, :] + params.bias
    history = np.asarray(params.history_filter, dtype=float)[None, None, :]
    counts = _emit(drive, history, cfg, [spike_stream(cfg.seed, 0)], stim_lags, forced)
    return SpikeTrain(counts[0], cfg.delta)


def simulate_population(all_params, stimulus, cfg):
    """Generate aligned spike trains for a coupled population.

    Within a bin every neuron's intensity is computed from the shared
    history first and the draws are then made independently, so coupling
    acts with at least one bin of latency. Neuron ``i`` always consumes
    its own seed sub-stream; with zero cross-couplings each train is
    bit-identical to the corresponding single-neuron simulation.
    """
    all_params = list(all_params)
    num_neurons = len(all_params)
    if num_neurons < 1:
        raise DataFormatError("population needs at least one neuron")
    if stimulus.num_bins != cfg.num_bins:
        raise DataFormatError(
            f"stimulus has {stimulus.num_bins} bins but config says {cfg.num_bins}"
        )
    if stimulus.delta != cfg.delta:
        raise DataFormatError("stimulus delta disagrees with config")
    lag_depth = None
    drives = []
    max_stim_lags = 0
    for params in all_params:
        if params.num_neurons != num_neurons:
            raise DimensionMismatchError(
                f"parameters carry {params.num_neurons} couplings for "
                f"{num_neurons} neurons"
            )
        if lag_depth is None:
            lag_depth = params.coupling_lags
        elif params.coupling_lags != lag_depth:
            raise DimensionMismatchError("neurons disagree on coupling lag depth")
        drive, stim_lags = _stimulus_drive(params.stim_filter, stimulus)
        max_stim_lags = max(max_stim_lags, stim_lags)
        drives.append(drive + params.bias)
    history = np.stack([
        np.stack([np.asarray(c, dtype=float) for c in params.couplings])
        for params in all_params
    ])
    streams = [spike_stream(cfg.seed, i) for i in range(num_neurons)]
    counts = _emit(np.stack(drives), history, cfg, streams, max_stim_lags)
    trains = tuple(SpikeTrain(counts[i], cfg.delta) for i in range(num_neurons))
    return PopulationData(stimulus=stimulus, trains=trains)
