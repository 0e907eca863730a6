"""Analytic first and second derivatives of the spike-train log-likelihood.

With the exponential link the derivative structure is shared by every
block: the gradient pairs each regressor with ``count - delta*lambda``,
and the Hessian is the negated intensity-weighted outer-product sum, so
the single-neuron Hessian is negative semidefinite everywhere.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError
from .likelihood import GlmParams, _as_design, evaluate

FD_STEP_MIN = 1e-8
FD_STEP_MAX = 1e-2


@dataclass(frozen=True)
class Gradient:
    """Gradient of the log-likelihood, mirroring the parameter layout."""

    stim_filter: np.ndarray
    history_filter: np.ndarray
    bias: float

    def to_vector(self):
        """Flatten as [stim_filter, history_filter, bias]."""
        return np.concatenate([self.stim_filter, self.history_filter, [self.bias]])

    @property
    def max_norm(self):
        return float(np.abs(self.to_vector()).max())


def gradient(params, design, delta):
    """Exact gradient with respect to (stim_filter, history_filter, bias).

    Each block is the count-weighted spike sum of its regressor minus
    ``delta`` times the intensity-weighted sum: for the stimulus block
    ``sum_t y_t*x_t - delta * sum_t x_t*lambda_t``, and for the bias
    ``n_spikes - delta * sum_t lambda_t``.
    """
    design = _as_design(design, delta)
    _, lam, _ = evaluate(params, design, delta)
    resid = design.observed - delta * lam
    return Gradient(
        stim_filter=design.stim_flat.T @ resid,
        history_filter=design.history.T @ resid,
        bias=float(resid.sum()),
    )


def hessian(params, design, delta):
    """Exact Hessian as one symmetric matrix in [stim | history | bias] order.

    Assembles all blocks of the intensity-weighted curvature:
    ``-delta * sum_t z_t z_t^T lambda_t`` with ``z_t`` the concatenated
    regressor (stimulus lags, history lags, 1). Symmetry is enforced
    exactly by mirroring.
    """
    design = _as_design(design, delta)
    _, lam, _ = evaluate(params, design, delta)
    w = delta * lam
    stim = design.stim_flat
    hist = design.history
    stim_w = stim * w[:, None]
    hist_w = hist * w[:, None]
    d_stim = design.stim_dim
    d_hist = design.history_dim
    dim = d_stim + d_hist + 1
    full = np.empty((dim, dim))
    sk = slice(0, d_stim)
    sh = slice(d_stim, d_stim + d_hist)
    full[sk, sk] = -stim_w.T @ stim
    full[sk, sh] = -stim_w.T @ hist
    full[sh, sh] = -hist_w.T @ hist
    full[sk, -1] = -stim_w.sum(axis=0)
    full[sh, -1] = -hist_w.sum(axis=0)
    full[-1, -1] = -w.sum()
    full[sh, sk] = full[sk, sh].T
    full[-1, sk] = full[sk, -1]
    full[-1, sh] = full[sh, -1]
    return 0.5 * (full + full.T)


@dataclass(frozen=True)
class GradientCheck:
    """Per-coordinate comparison of the analytic and finite-difference gradients."""

    max_rel_error: float
    rel_errors: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    unreliable: np.ndarray
    clamped: bool


def _loglik_at(vec, design, delta, stim_dim, history_dim):
    p = GlmParams.from_vector(vec, stim_dim, history_dim)
    loglik, _, clamped = evaluate(p, design, delta)
    return loglik, clamped


def check_gradient_fd(params, design, delta, step=1e-5):
    """Compare the analytic gradient against central finite differences.

    ``step`` must lie in [1e-8, 1e-2]. Coordinates whose perturbed
    evaluations hit the predictor clamp are flagged unreliable, since the
    analytic identities do not hold through the clamp.
    """
    if not FD_STEP_MIN <= step <= FD_STEP_MAX:
        raise ValueError(f"step must lie in [{FD_STEP_MIN}, {FD_STEP_MAX}]")
    design = _as_design(design, delta)
    if len(design) == 0:
        raise InsufficientDataError("design has no rows; nothing to check")
    analytic = gradient(params, design, delta).to_vector()
    _, _, base_clamped = evaluate(params, design, delta)
    d_stim = design.stim_dim
    d_hist = design.history_dim
    theta = params.to_vector()
    numeric = np.empty_like(theta)
    unreliable = np.zeros(theta.size, dtype=bool)
    for j in range(theta.size):
        bumped = theta.copy()
        bumped[j] = theta[j] + step
        plus, clamp_p = _loglik_at(bumped, design, delta, d_stim, d_hist)
        bumped[j] = theta[j] - step
        minus, clamp_m = _loglik_at(bumped, design, delta, d_stim, d_hist)
        numeric[j] = (plus - minus) / (2.0 * step)
        unreliable[j] = base_clamped or clamp_p or clamp_m
    floor = 1e-8 * max(1.0, float(np.abs(numeric).max()))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    return GradientCheck(
        max_rel_error=float(rel.max()),
        rel_errors=rel,
        analytic=analytic,
        numeric=numeric,
        unreliable=unreliable,
        clamped=base_clamped,
    )
