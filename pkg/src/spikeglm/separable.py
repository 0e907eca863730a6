"""Space-time separable receptive fields: rank-1 filter matrix fitting.

The full multi-location filter matrix is constrained to an outer product
of one spatial and one temporal vector. The model is bilinear in those
two blocks, so the joint likelihood surface is not concave; with either
block frozen, however, the problem reduces to an ordinary concave
single-neuron fit with a substituted regressor, and the fitter
alternates between the two safe subproblems.

The (spatial, temporal) pair is only identified up to a scale swap
``(a*s, t/a)``; reported results are canonicalized to a unit-norm
spatial filter whose first nonzero entry is positive.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .design import Design
from .errors import (
    DegenerateFilterError,
    DimensionMismatchError,
    InsufficientDataError,
    StalledStepError,
)
from .likelihood import PREDICTOR_CLAMP, GlmParams, _as_design
from .optimize import (
    FitOptions,
    FitResult,
    TracePoint,
    _solve_ascent_direction,
    fit,
    initialize_params,
)

POWER_ITERS = 50
POWER_TOL = 1e-10
POLISH_ITERS = 12
# Entropy constant for the multi-start perturbation stream; independent of
# any user-facing seed so repeated fits of the same data are identical.
_MULTISTART_ENTROPY = 0x5E9A7AB1E


@dataclass(frozen=True)
class SeparableParams:
    """Rank-1 model parameters: spatial and temporal filter factors.

    The implied filter matrix is ``outer(space_filter, time_filter)``
    with one row per stimulus location, oldest lag first.
    """

    space_filter: np.ndarray
    time_filter: np.ndarray
    history_filter: np.ndarray
    bias: float

    def __post_init__(self):
        for name in ("space_filter", "time_filter", "history_filter"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1).copy()
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} must be finite")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not np.isfinite(self.bias):
            raise ValueError("bias must be finite")
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def filter_matrix(self):
        """(locations x lags) filter matrix implied by the factors."""
        return np.outer(self.space_filter, self.time_filter)

    def as_full(self):
        """Equivalent unconstrained single-neuron parameters."""
        return GlmParams(self.filter_matrix.reshape(-1), self.history_filter, self.bias)


@dataclass(frozen=True)
class SeparableGradient:
    """Log-likelihood gradient over (space, time, history, bias)."""

    space_filter: np.ndarray
    time_filter: np.ndarray
    history_filter: np.ndarray
    bias: float

    def to_vector(self):
        return np.concatenate([
            self.space_filter, self.time_filter, self.history_filter, [self.bias],
        ])

    @property
    def max_norm(self):
        return float(np.abs(self.to_vector()).max())


def _check_dims(params, design):
    if params.space_filter.size != design.num_locations:
        raise DimensionMismatchError(
            f"spatial filter has {params.space_filter.size} weights but the design "
            f"has {design.num_locations} locations"
        )
    lags = design.stim_dim // max(design.num_locations, 1)
    if params.time_filter.size != lags:
        raise DimensionMismatchError(
            f"temporal filter has {params.time_filter.size} weights but the design "
            f"carries {lags} stimulus lags"
        )
    if params.history_filter.size != design.history_dim:
        raise DimensionMismatchError(
            f"history filter has {params.history_filter.size} weights but the design "
            f"carries {design.history_dim}"
        )


def separable_intensity(params, row):
    """Intensity of one bin under the rank-1 model.

    Contracts the stimulus block with both factors; identical to the
    full model evaluated at the implied outer-product filter matrix.
    """
    block = np.atleast_2d(np.asarray(row.stim_block if hasattr(row, "stim_block")
                                     else row.stim, dtype=float))
    if block.shape != (params.space_filter.size, params.time_filter.size):
        raise DimensionMismatchError(
            f"stimulus block {block.shape} does not match filters "
            f"({params.space_filter.size}, {params.time_filter.size})"
        )
    history = np.asarray(row.history, dtype=float)
    if history.size != params.history_filter.size:
        raise DimensionMismatchError("history length does not match the filter")
    u = float(params.space_filter @ block @ params.time_filter
              + params.history_filter @ history + params.bias)
    u = min(max(u, -PREDICTOR_CLAMP), PREDICTOR_CLAMP)
    return math.exp(u)


def _evaluate(params, design, delta):
    """(loglik, intensities, space-projected and time-projected regressors)."""
    blocks = design.stim_blocks
    space_proj = blocks @ params.time_filter            # rows x locations
    time_proj = np.einsum("nij,i->nj", blocks, params.space_filter)
    u = (space_proj @ params.space_filter
         + design.history @ params.history_filter + params.bias)
    u = np.clip(u, -PREDICTOR_CLAMP, PREDICTOR_CLAMP)
    lam = np.exp(u)
    loglik = float(design.observed @ u - delta * lam.sum())
    return loglik, lam, space_proj, time_proj


def separable_log_likelihood(params, rows, delta):
    """Log-likelihood of the rank-1 model over the design rows."""
    design = _as_design(rows, delta)
    if len(design) == 0:
        raise InsufficientDataError("design has no rows; nothing to evaluate")
    _check_dims(params, design)
    loglik, _, _, _ = _evaluate(params, design, delta)
    return loglik


def separable_gradients(params, rows, delta):
    """Gradient over all four blocks.

    The spatial block uses the single-neuron stimulus-gradient formula
    with the time-projected regressor and the temporal block the
    space-projected one; history and bias are unchanged.
    """
    design = _as_design(rows, delta)
    if len(design) == 0:
        raise InsufficientDataError("design has no rows; nothing to evaluate")
    _check_dims(params, design)
    _, lam, space_proj, time_proj = _evaluate(params, design, delta)
    resid = design.observed - delta * lam
    return SeparableGradient(
        space_filter=space_proj.T @ resid,
        time_filter=time_proj.T @ resid,
        history_filter=design.history.T @ resid,
        bias=float(resid.sum()),
    )


def space_time_cross_hessian(params, rows, delta):
    """Mixed second derivative of the log-likelihood in space and time.

    Differentiates the spatial gradient with respect to the temporal
    filter: the count-minus-rate residual pairs with the raw stimulus
    block, and a second term couples the two projected regressors
    through the intensity. This block is what breaks joint concavity.
    """
    design = _as_design(rows, delta)
    _check_dims(params, design)
    _, lam, space_proj, time_proj = _evaluate(params, design, delta)
    resid = design.observed - delta * lam
    blocks = design.stim_blocks
    linear = np.einsum("n,nij->ij", resid, blocks)
    coupled = np.einsum("ni,n,nj->ij", space_proj, delta * lam, time_proj)
    return linear - coupled


def joint_hessian(params, rows, delta):
    """Full second-derivative matrix over [space | time | history | bias].

    Diagnostic only: the fitter never inverts this matrix because the
    space-time coupling makes it indefinite away from the optimum.
    """
    design = _as_design(rows, delta)
    _check_dims(params, design)
    _, lam, space_proj, time_proj = _evaluate(params, design, delta)
    w = delta * lam
    hist = design.history
    n_s = params.space_filter.size
    n_t = params.time_filter.size
    n_h = params.history_filter.size
    dim = n_s + n_t + n_h + 1
    ss = slice(0, n_s)
    st = slice(n_s, n_s + n_t)
    sh = slice(n_s + n_t, n_s + n_t + n_h)
    full = np.zeros((dim, dim))
    sw = space_proj * w[:, None]
    tw = time_proj * w[:, None]
    full[ss, ss] = -sw.T @ space_proj
    full[st, st] = -tw.T @ time_proj
    full[sh, sh] = -(hist * w[:, None]).T @ hist
    full[ss, st] = space_time_cross_hessian(params, design, delta)
    full[ss, sh] = -sw.T @ hist
    full[st, sh] = -tw.T @ hist
    full[ss, -1] = -sw.sum(axis=0)
    full[st, -1] = -tw.sum(axis=0)
    full[sh, -1] = -(hist * w[:, None]).sum(axis=0)
    full[-1, -1] = -w.sum()
    lower = np.tril_indices(dim, -1)
    full[lower] = full.T[lower]
    return 0.5 * (full + full.T)


def canonicalize(space_filter, time_filter):
    """Resolve the rank-1 scale freedom.

    Returns ``(sigma * s / |s|, |s| * t / sigma)`` where ``sigma`` is the
    sign of the first nonzero entry of the normalized spatial filter, so
    the spatial factor has unit norm and positive leading entry while the
    outer product is preserved.
    """
    space = np.asarray(space_filter, dtype=float).reshape(-1)
    time = np.asarray(time_filter, dtype=float).reshape(-1)
    norm = float(np.linalg.norm(space))
    if norm == 0.0:
        raise DegenerateFilterError("spatial filter is identically zero")
    unit = space / norm
    nonzero = np.nonzero(unit)[0]
    sigma = 1.0 if unit[nonzero[0]] > 0 else -1.0
    return sigma * unit, (norm / sigma) * time


def _power_rank1(matrix):
    """Dominant rank-1 factorization by power iteration on the row space."""
    rows, cols = matrix.shape
    right = np.ones(cols) / math.sqrt(cols)
    for _ in range(POWER_ITERS):
        left = matrix @ right
        left_norm = np.linalg.norm(left)
        if left_norm == 0.0:
            return np.zeros(rows), 0.0, right
        left = left / left_norm
        new_right = matrix.T @ left
        scale = np.linalg.norm(new_right)
        if scale == 0.0:
            return left, 0.0, right
        new_right = new_right / scale
        if np.linalg.norm(new_right - right) < POWER_TOL:
            right = new_right
            break
        right = new_right
    return left, float(scale), right


def _initial_time_filter(design, start_index):
    """Data-driven temporal start: rank-1 factor of the spike-triggered average."""
    n_spikes = design.total_spikes
    sta = np.einsum("n,nij->ij", design.observed.astype(float),
                    design.stim_blocks) / n_spikes
    _, scale, right = _power_rank1(sta)
    lags = sta.shape[1]
    if scale == 0.0:
        time0 = np.ones(lags) / lags
    else:
        time0 = scale * right
    if start_index > 0:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=_MULTISTART_ENTROPY,
                                   spawn_key=(start_index,))
        )
        spread = 0.5 * float(np.linalg.norm(time0)) / math.sqrt(lags)
        time0 = time0 + rng.standard_normal(lags) * max(spread, 1e-3)
    return time0


def _induced_space_design(design, time_filter):
    return Design(design.stim_blocks @ time_filter, design.history,
                  design.observed, design.bin_indices, design.delta)


def _induced_time_design(design, space_filter):
    proj = np.einsum("nij,i->nj", design.stim_blocks, space_filter)
    return Design(proj, design.history, design.observed,
                  design.bin_indices, design.delta)


def _alternate(design, delta, options, time0):
    num_locations = design.num_locations
    base = initialize_params(design, delta)
    current = SeparableParams(
        space_filter=np.zeros(num_locations),
        time_filter=time0,
        history_filter=np.zeros(design.history_dim),
        bias=base.bias,
    )
    loglik = separable_log_likelihood(current, design, delta)
    grad_norm = separable_gradients(current, design, delta).max_norm
    trace = [TracePoint(loglik, grad_norm)]
    warnings = []
    iterations = 0
    def pack(p):
        return np.concatenate([p.space_filter, p.time_filter,
                               p.history_filter, [p.bias]])

    for _ in range(options.max_iters):
        if grad_norm < options.grad_tol:
            break
        before = pack(current)
        space_fit = fit(
            _induced_space_design(design, current.time_filter), delta, options,
            initial=GlmParams(current.space_filter, current.history_filter,
                              current.bias),
        )
        current = replace(
            current,
            space_filter=space_fit.params.stim_filter,
            history_filter=space_fit.params.history_filter,
            bias=space_fit.params.bias,
        )
        time_fit = fit(
            _induced_time_design(design, current.space_filter), delta, options,
            initial=GlmParams(current.time_filter, current.history_filter,
                              current.bias),
        )
        current = replace(
            current,
            time_filter=time_fit.params.stim_filter,
            history_filter=time_fit.params.history_filter,
            bias=time_fit.params.bias,
        )
        for sub in (space_fit, time_fit):
            warnings.extend(w for w in sub.warnings if "stalled" in w)
        iterations += 1
        loglik = time_fit.final_loglik
        grad_norm = separable_gradients(current, design, delta).max_norm
        trace.append(TracePoint(loglik, grad_norm))
        if float(np.abs(pack(current) - before).max()) < options.step_tol:
            break
    return FitResult(
        params=current,
        final_loglik=loglik,
        iterations=iterations,
        converged=grad_norm < options.grad_tol,
        trace=tuple(trace),
        warnings=tuple(warnings),
    )


def _unpack(vec, sizes):
    n_s, n_t, n_h = sizes
    return SeparableParams(vec[:n_s], vec[n_s:n_s + n_t],
                           vec[n_s + n_t:n_s + n_t + n_h], vec[-1])


def _polish(design, delta, options, result):
    """Finish with guarded joint Newton steps once the alternation stalls.

    Alternating updates contract slowly near the optimum because the
    space-time cross-curvature amplifies tiny block movements, so the
    block scheme alone cannot certify a 1e-8 joint gradient. Close to a
    maximum the joint surface is locally concave (up to the gauge zero
    mode, absorbed by the ridge) and a few damped Newton steps polish off
    the remaining gradient. Steps are accepted only when the
    log-likelihood does not decrease, so monotone ascent is preserved.
    """
    params = result.params
    sizes = (params.space_filter.size, params.time_filter.size,
             params.history_filter.size)
    loglik = result.final_loglik
    trace = list(result.trace)
    grad_norm = trace[-1].grad_max_norm if trace else np.inf
    for _ in range(POLISH_ITERS):
        grad_vec = separable_gradients(params, design, delta).to_vector()
        grad_norm = float(np.abs(grad_vec).max())
        if grad_norm < options.grad_tol:
            break
        neg_hess = -joint_hessian(params, design, delta)
        try:
            direction, _ = _solve_ascent_direction(neg_hess, grad_vec,
                                                   options.damping)
        except StalledStepError:
            break
        theta = np.concatenate([params.space_filter, params.time_filter,
                                params.history_filter, [params.bias]])
        alpha = 1.0
        accepted = None
        ties = []
        for _ in range(21):
            trial = _unpack(theta + alpha * direction, sizes)
            trial_loglik = separable_log_likelihood(trial, design, delta)
            if trial_loglik > loglik:
                accepted = (trial, trial_loglik)
                break
            if trial_loglik == loglik:
                ties.append((trial, trial_loglik))
            alpha *= 0.5
        if accepted is None:
            for trial, trial_loglik in ties:
                if separable_gradients(trial, design, delta).max_norm < grad_norm:
                    accepted = (trial, trial_loglik)
                    break
        if accepted is None:
            break
        params, loglik = accepted
        grad_norm = separable_gradients(params, design, delta).max_norm
        trace.append(TracePoint(loglik, grad_norm))
    return replace(
        result,
        params=params,
        final_loglik=loglik,
        converged=grad_norm < options.grad_tol,
        trace=tuple(trace),
    )


def fit_separable(rows, delta, options=None, num_starts=3):
    """Fit the rank-1 model by alternating concave block updates.

    Each outer iteration refits (space, history, bias) with the temporal
    factor frozen and then (time, history, bias) with the spatial factor
    frozen; both subproblems are ordinary concave single-neuron fits, so
    the log-likelihood never decreases. Because the joint surface has
    local maxima, ``num_starts`` perturbed restarts are run and the best
    final log-likelihood wins (ties keep the lowest start index). The
    returned parameters are canonicalized.
    """
    options = options or FitOptions()
    design = _as_design(rows, delta)
    if len(design) == 0:
        raise InsufficientDataError("design has no rows")
    if design.total_spikes == 0:
        raise InsufficientDataError("spike train has no spikes")
    best = None
    for start in range(max(1, num_starts)):
        time0 = _initial_time_filter(design, start)
        candidate = _alternate(design, delta, options, time0)
        if best is None or candidate.final_loglik > best.final_loglik:
            best = candidate
    best = _polish(design, delta, options, best)
    try:
        space, time = canonicalize(best.params.space_filter, best.params.time_filter)
        best = replace(
            best, params=replace(best.params, space_filter=space, time_filter=time)
        )
    except DegenerateFilterError:
        best = replace(
            best,
            warnings=best.warnings + ("spatial filter collapsed to zero; "
                                      "result left uncanonicalized",),
        )
    return best
