"""Damped Newton ascent to the maximum-likelihood estimate.

The single-neuron likelihood is concave, so an ascent-safeguarded Newton
iteration converges to the unique global maximum from any starting
point. Each step solves ``(-H + eps*I) d = g`` (escalating ``eps`` only
when the factorization fails) and backtracks the step length until the
log-likelihood strictly increases.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .derivatives import gradient, hessian
from .errors import InsufficientDataError, StalledStepError
from .likelihood import GlmParams, _as_design, evaluate

MAX_BACKTRACKS = 20
MAX_DAMPING_ESCALATIONS = 20


@dataclass(frozen=True)
class FitOptions:
    """Convergence policy for the Newton iteration.

    ``damping`` is the initial ridge added to the negated Hessian when a
    factorization fails; it escalates tenfold on repeated failures.
    """

    max_iters: int = 100
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    damping: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        for name in ("grad_tol", "step_tol", "damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


class TracePoint(NamedTuple):
    loglik: float
    grad_max_norm: float


@dataclass(frozen=True)
class StepDiagnostics:
    """What one Newton step did: step length, ridge used, clamp events."""

    alpha: float
    damping: float
    backtracks: int
    loglik_before: float
    loglik_after: float
    grad_max_norm: float
    clamped: bool


@dataclass(frozen=True)
class FitResult:
    """Outcome of a fit: parameters, trace, and convergence diagnostics."""

    params: object
    final_loglik: float
    iterations: int
    converged: bool
    trace: tuple
    warnings: tuple


def initialize_params(design, delta):
    """Standard starting point: zero filters, bias matching the mean rate.

    The bias solves the zero-filter score equation exactly:
    ``log(n_spikes / (delta * rows))``.

    Raises
    ------
    InsufficientDataError
        If the design is empty or contains no spikes (the bias estimate
        diverges to -inf).
    """
    design = _as_design(design, delta)
    if len(design) == 0:
        raise InsufficientDataError("design has no rows")
    n_spikes = design.total_spikes
    if n_spikes == 0:
        raise InsufficientDataError("spike train has no spikes; bias MLE diverges")
    bias = math.log(n_spikes / (delta * len(design)))
    return GlmParams(
        stim_filter=np.zeros(design.stim_dim),
        history_filter=np.zeros(design.history_dim),
        bias=bias,
    )


def _solve_ascent_direction(neg_hess, grad_vec, initial_damping):
    """Solve (-H + eps*I) d = g, escalating eps until the factorization holds."""
    eps = 0.0
    dim = neg_hess.shape[0]
    eye = np.eye(dim)
    for _ in range(MAX_DAMPING_ESCALATIONS + 1):
        try:
            factor = scipy.linalg.cho_factor(neg_hess + eps * eye, check_finite=False)
            direction = scipy.linalg.cho_solve(factor, grad_vec, check_finite=False)
            if np.isfinite(direction).all():
                return direction, eps
        except scipy.linalg.LinAlgError:
            pass
        eps = initial_damping if eps == 0.0 else eps * 10.0
    raise StalledStepError(
        f"Hessian solve failed even with ridge {eps:g}",
        diagnostics={"damping": eps, "grad_max_norm": float(np.abs(grad_vec).max())},
    )


def newton_step(params, design, delta, damping=1e-6, grad_tol=1e-8):
    """One ascent-safeguarded Newton update.

    Returns the accepted parameters and a :class:`StepDiagnostics`. When
    the gradient max-norm is already below ``grad_tol`` the input is
    returned unchanged with ``alpha = 0``.

    Raises
    ------
    StalledStepError
        If no step length in {1, 1/2, ..., 2**-20} increases the
        log-likelihood.
    """
    design = _as_design(design, delta)
    loglik0, _, clamped0 = evaluate(params, design, delta)
    grad_vec = gradient(params, design, delta).to_vector()
    grad_norm = float(np.abs(grad_vec).max())
    if grad_norm < grad_tol:
        return params, StepDiagnostics(
            alpha=0.0, damping=0.0, backtracks=0,
            loglik_before=loglik0, loglik_after=loglik0,
            grad_max_norm=grad_norm, clamped=clamped0,
        )
    neg_hess = -hessian(params, design, delta)
    direction, used_damping = _solve_ascent_direction(neg_hess, grad_vec, damping)
    theta = params.to_vector()
    d_stim = design.stim_dim
    d_hist = design.history_dim
    alpha = 1.0
    ties = []
    for backtracks in range(MAX_BACKTRACKS + 1):
        trial = GlmParams.from_vector(theta + alpha * direction, d_stim, d_hist)
        trial_loglik, _, trial_clamped = evaluate(trial, design, delta)
        if trial_loglik > loglik0:
            return trial, StepDiagnostics(
                alpha=alpha, damping=used_damping, backtracks=backtracks,
                loglik_before=loglik0, loglik_after=trial_loglik,
                grad_max_norm=grad_norm, clamped=clamped0 or trial_clamped,
            )
        if trial_loglik == loglik0:
            ties.append((alpha, backtracks, trial, trial_loglik, trial_clamped))
        alpha *= 0.5
    # Near the optimum the true improvement drops below float resolution of
    # the log-likelihood; accept a tie if it strictly shrinks the gradient,
    # which is what quadratic convergence delivers there.
    for alpha, backtracks, trial, trial_loglik, trial_clamped in ties:
        trial_grad = gradient(trial, design, delta).max_norm
        if trial_grad < grad_norm:
            return trial, StepDiagnostics(
                alpha=alpha, damping=used_damping, backtracks=backtracks,
                loglik_before=loglik0, loglik_after=trial_loglik,
                grad_max_norm=grad_norm, clamped=clamped0 or trial_clamped,
            )
    raise StalledStepError(
        "backtracking exhausted without finding an ascent step",
        diagnostics={
            "grad_max_norm": grad_norm, "damping": used_damping,
            "loglik": loglik0, "final_alpha": alpha,
        },
    )


def fit(design, delta, options=None, initial=None):
    """Iterate Newton steps to the maximum-likelihood estimate.

    Parameters
    ----------
    design : Design or sequence of DesignRow
    delta : float
        Bin width in seconds.
    options : FitOptions, optional
    initial : GlmParams, optional
        Starting point; defaults to :func:`initialize_params`. The
        likelihood is concave, so any start reaches the same maximum.

    Returns
    -------
    FitResult
        ``converged`` is True only when the final gradient max-norm is
        below ``grad_tol``; a stalled step is surfaced through
        ``warnings`` and a False flag, never silently.
    """
    options = options or FitOptions()
    design = _as_design(design, delta)
    params = initial if initial is not None else initialize_params(design, delta)
    if initial is not None and design.total_spikes == 0:
        raise InsufficientDataError("spike train has no spikes")
    loglik, _, clamped = evaluate(params, design, delta)
    grad_norm = gradient(params, design, delta).max_norm
    trace = [TracePoint(loglik, grad_norm)]
    warnings = []
    if clamped:
        warnings.append("predictor clamped at the starting point")
    iterations = 0
    for _ in range(options.max_iters):
        if grad_norm < options.grad_tol:
            break
        try:
            new_params, diag = newton_step(
                params, design, delta, options.damping, options.grad_tol
            )
        except StalledStepError as err:
            warnings.append(f"stalled at iteration {iterations + 1}: {err}")
            break
        step_norm = float(
            np.abs(new_params.to_vector() - params.to_vector()).max()
        )
        params = new_params
        iterations += 1
        if diag.damping > 0:
            warnings.append(f"iteration {iterations}: ridge {diag.damping:g} applied")
        if diag.clamped:
            warnings.append(f"iteration {iterations}: predictor clamped")
        loglik = diag.loglik_after
        grad_norm = gradient(params, design, delta).max_norm
        trace.append(TracePoint(loglik, grad_norm))
        if step_norm < options.step_tol:
            break
    return FitResult(
        params=params,
        final_loglik=loglik,
        iterations=iterations,
        converged=grad_norm < options.grad_tol,
        trace=tuple(trace),
        warnings=tuple(warnings),
    )
