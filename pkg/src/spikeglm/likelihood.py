"""Poisson likelihood of a spike train under an exponential-link model.

The conditional intensity of each bin is ``exp(u)`` where ``u`` is linear
in the parameters: stimulus filter dotted with the lagged stimulus, plus
history filter dotted with the lagged spike counts, plus a bias. The
log-likelihood keeps only the parameter-dependent terms; the constant
from the full Poisson product is dropped.
"""

import math
from dataclasses import dataclass

import numpy as np

from .design import Design
from .errors import DimensionMismatchError, InsufficientDataError

# Linear predictors are clamped to this magnitude before exponentiation so a
# wild trial point yields a finite, flagged evaluation instead of overflow.
PREDICTOR_CLAMP = 500.0


@dataclass(frozen=True)
class GlmParams:
    """Single-neuron model parameters.

    Parameters
    ----------
    stim_filter : array-like
        Weights on the lagged stimulus (the receptive field), oldest lag
        first. For multi-location designs this is the row-major
        flattening of the (locations x lags) filter matrix.
    history_filter : array-like
        Weights on the neuron's own lagged spike counts, oldest first.
    bias : float
        Constant offset setting the baseline rate.
    """

    stim_filter: np.ndarray
    history_filter: np.ndarray
    bias: float

    def __post_init__(self):
        stim = np.array(np.asarray(self.stim_filter, dtype=float), ndmin=1)
        hist = np.array(np.asarray(self.history_filter, dtype=float), ndmin=1)
        stim = stim.reshape(-1)
        hist = hist.reshape(-1)
        if not (np.isfinite(stim).all() and np.isfinite(hist).all()
                and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        stim.flags.writeable = False
        hist.flags.writeable = False
        object.__setattr__(self, "stim_filter", stim)
        object.__setattr__(self, "history_filter", hist)
        object.__setattr__(self, "bias", float(self.bias))

    def to_vector(self):
        """Flatten as [stim_filter, history_filter, bias]."""
        return np.concatenate([self.stim_filter, self.history_filter, [self.bias]])

    @classmethod
    def from_vector(cls, vec, stim_dim, history_dim):
        vec = np.asarray(vec, dtype=float)
        if vec.size != stim_dim + history_dim + 1:
            raise DimensionMismatchError(
                f"parameter vector has {vec.size} entries, expected "
                f"{stim_dim + history_dim + 1}"
            )
        return cls(vec[:stim_dim], vec[stim_dim:stim_dim + history_dim], vec[-1])


def _as_design(design, delta):
    if isinstance(design, Design):
        return design
    return Design.from_rows(design, delta)


def _check_dims(params, design):
    if params.stim_filter.size != design.stim_dim:
        raise DimensionMismatchError(
            f"stimulus filter has {params.stim_filter.size} weights but the "
            f"design rows carry {design.stim_dim}"
        )
    if params.history_filter.size != design.history_dim:
        raise DimensionMismatchError(
            f"history filter has {params.history_filter.size} weights but the "
            f"design rows carry {design.history_dim}"
        )


def linear_predictor(params, design):
    """Unclamped per-row linear predictor ``k.x + h.y + bias``."""
    _check_dims(params, design)
    return (design.stim_flat @ params.stim_filter
            + design.history @ params.history_filter
            + params.bias)


def evaluate(params, design, delta):
    """One pass over the design: log-likelihood, intensities, clamp flag.

    Returns
    -------
    loglik : float
    intensities : ndarray
        Per-row conditional intensity (spikes/s), strictly positive.
    clamped : bool
        True when any predictor hit the +/-500 guard; derivative
        identities are unreliable at such points.
    """
    design = _as_design(design, delta)
    if len(design) == 0:
        raise InsufficientDataError("design has no rows; nothing to evaluate")
    u = linear_predictor(params, design)
    clamped = bool((np.abs(u) > PREDICTOR_CLAMP).any())
    if clamped:
        u = np.clip(u, -PREDICTOR_CLAMP, PREDICTOR_CLAMP)
    lam = np.exp(u)
    loglik = float(design.observed @ u - delta * lam.sum())
    return loglik, lam, clamped


def bin_probability(y, rate, delta):
    """Poisson probability of observing ``y`` spikes in one bin.

    ``rate * delta`` is the expected count in the bin; the returned value
    is ``(rate*delta)**y / y! * exp(-rate*delta)``.
    """
    y = int(y)
    if y < 0:
        raise ValueError("spike count must be nonnegative")
    if not (np.isfinite(rate) and rate > 0):
        raise ValueError("rate must be positive and finite")
    if not (np.isfinite(delta) and delta > 0):
        raise ValueError("delta must be positive and finite")
    expected = rate * delta
    return expected ** y / math.factorial(y) * math.exp(-expected)


def conditional_intensity(params, row):
    """Intensity (spikes/s) of one bin given its regressors.

    Applies the exponential link to the linear predictor; the result is
    strictly positive for all finite inputs.
    """
    stim = np.asarray(getattr(row, "stim", getattr(row, "stim_block", None)),
                      dtype=float).reshape(-1)
    history = np.asarray(row.history, dtype=float)
    if params.stim_filter.size != stim.size:
        raise DimensionMismatchError(
            f"stimulus filter has {params.stim_filter.size} weights but the row "
            f"carries {stim.size}"
        )
    if params.history_filter.size != history.size:
        raise DimensionMismatchError(
            f"history filter has {params.history_filter.size} weights but the row "
            f"carries {history.size}"
        )
    u = float(params.stim_filter @ stim + params.history_filter @ history + params.bias)
    u = min(max(u, -PREDICTOR_CLAMP), PREDICTOR_CLAMP)
    return math.exp(u)


def log_likelihood(params, design, delta):
    """Log-likelihood of the observed counts, up to a parameter-free constant.

    Computes ``sum_t y_t * log(lambda_t) - delta * sum_t lambda_t`` over
    the design rows, weighting spike-bin terms by the observed count so
    that binary data reproduces the sparse single-spike form.

    Raises
    ------
    InsufficientDataError
        If the design is empty.
    """
    design = _as_design(design, delta)
    loglik, _, _ = evaluate(params, design, delta)
    return loglik
