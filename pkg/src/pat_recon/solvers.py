"""Reconstruction algorithms: smoothed-l0 (SL0), basis pursuit and Landweber IR.

SL0 and basis pursuit work on wavelet coefficients through a
:class:`~pat_recon.wavelet.CsOperator`; IR works on pixels through the model
matrix directly.  Any object with ``apply``, ``apply_adjoint`` and ``shape``
can stand in for the operator.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ConvergenceError, InvalidArgumentError, NumericalError
from .grid import Image, make_grid
from .wavelet import CsOperator, WaveletBasis

__all__ = [
    "Sl0Params",
    "BpParams",
    "IrParams",
    "ReconResult",
    "smoothed_l0_value",
    "smoothed_l0_gradient",
    "soft_threshold",
    "power_iteration",
    "min_l2_projection",
    "gram_eigensystem",
    "sl0_solve",
    "basis_pursuit_solve",
    "ir_solve",
    "reconstruct",
    "METHODS",
]

log = logging.getLogger(__name__)

PROJECTIONS = ("auto", "cg", "direct")
# "auto" switches to the dense Gram eigendecomposition up to this many rows
DIRECT_MAX_ROWS = 12000
# refinement sweeps allowed for the direct projector
DIRECT_REFINE = 10


@dataclass(frozen=True)
class Sl0Params:
    sigma_min_ratio: float = 0.01
    sigma_decrease: float = 0.5
    step_mu: float = 2.0
    inner_iterations: int = 3
    projection_tolerance: float = 1e-6
    projection_max_iters: int = 2000
    projection: str = "auto"
    rcond: float = 1e-12

    def __post_init__(self):
        if not 0 < self.sigma_decrease < 1:
            raise InvalidArgumentError("sigma_decrease must lie in (0, 1)")
        if not 0 < self.sigma_min_ratio < 1:
            raise InvalidArgumentError("sigma_min_ratio must lie in (0, 1)")
        if not self.step_mu > 0:
            raise InvalidArgumentError("step_mu must be positive")
        if self.inner_iterations < 1:
            raise InvalidArgumentError("inner_iterations must be >= 1")
        if not self.projection_tolerance > 0:
            raise InvalidArgumentError("projection_tolerance must be positive")
        if self.projection_max_iters < 1:
            raise InvalidArgumentError("projection_max_iters must be >= 1")
        if self.projection not in PROJECTIONS:
            raise InvalidArgumentError(f"projection must be one of {PROJECTIONS}")
        if not 0 < self.rcond < 1:
            raise InvalidArgumentError("rcond must lie in (0, 1)")


@dataclass(frozen=True)
class BpParams:
    """Basis pursuit settings.

    With ``relative_lambda`` the final weight is ``lambda_final * |A^T y|_inf``,
    which keeps the result independent of the data scale.
    """

    lambda_final: float = 1e-6
    continuation_steps: int = 8
    max_iterations: int = 2000
    tolerance: float = 1e-7
    relative_lambda: bool = True
    require_convergence: bool = True

    def __post_init__(self):
        if not self.lambda_final > 0:
            raise InvalidArgumentError("lambda_final must be positive")
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be >= 1")
        if self.continuation_steps < 1:
            raise InvalidArgumentError("continuation_steps must be >= 1")
        if not self.tolerance > 0:
            raise InvalidArgumentError("tolerance must be positive")


@dataclass(frozen=True)
class IrParams:
    """Landweber settings; ``step="auto"`` means ``1 / L`` from power iteration."""

    iterations: int = 20
    step: Union[float, str] = "auto"
    tikhonov_mu: float = 0.0
    nonneg: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgumentError("iterations must be >= 1")
        if self.step != "auto" and not (isinstance(self.step, (int, float)) and self.step > 0):
            raise InvalidArgumentError("step must be positive or 'auto'")
        if not self.tikhonov_mu >= 0:
            raise InvalidArgumentError("tikhonov_mu must be >= 0")


@dataclass
class ReconResult:
    image: Image
    iterations_run: int
    residual_norm: float
    coefficients: np.ndarray | None = None
    objective_trace: list[dict] = field(default_factory=list)
    converged: bool = True
    method: str = ""


METHODS = {"SL0": Sl0Params, "BP": BpParams, "IR": IrParams}


def _values(v):
    return np.asarray(getattr(v, "values", v), dtype=float).ravel()


def _check_finite(v, what):
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"non-finite values in {what}")


def _gram(op, v):
    # A A^T; CsOperator skips the wavelet round trip since phi is orthonormal
    if isinstance(op, CsOperator):
        return op.model.forward(op.model.adjoint(v))
    return op.apply(op.apply_adjoint(v))


def _image_for(op, x):
    model = op.model if isinstance(op, CsOperator) else op
    grid = getattr(model, "grid", None)
    if grid is None:
        if isinstance(op, CsOperator):
            grid = make_grid(op.basis.nx, op.basis.ny, 1.0)
        else:
            grid = make_grid(x.size, 1, 1.0)
    return Image(grid, x)


def smoothed_l0_value(theta, sigma: float) -> float:
    """``m - sum(exp(-theta_i^2 / (2 sigma^2)))``, a smooth count of nonzeros."""
    if not sigma > 0:
        raise InvalidArgumentError("sigma must be positive")
    theta = np.asarray(theta, dtype=float).ravel()
    return float(theta.size - np.exp(-theta ** 2 / (2 * sigma ** 2)).sum())


def smoothed_l0_gradient(theta, sigma: float) -> np.ndarray:
    """Gradient of :func:`smoothed_l0_value` with respect to ``theta``."""
    if not sigma > 0:
        raise InvalidArgumentError("sigma must be positive")
    theta = np.asarray(theta, dtype=float)
    return theta / sigma ** 2 * np.exp(-theta ** 2 / (2 * sigma ** 2))


def soft_threshold(v, thresh):
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def power_iteration(op, size: int, iterations: int = 200, tol: float = 1e-7,
                    seed: int = 0) -> float:
    """Largest eigenvalue of ``A A^T`` (``size`` = number of rows of ``A``)."""
    v = np.random.default_rng(seed).standard_normal(size)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        w = _gram(op, v)
        lam_new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    return lam


def _cg_project(op, y, theta, tol, max_iters):
    """Project ``theta`` onto ``{A theta = y}``; returns (theta, cg iterations, rel. residual).

    The stopping test is on ``|y - A theta_out| / |y|``, which is exactly the CG
    residual of ``A A^T z = A theta - y``.
    """
    r0 = op.apply(theta) - y
    ref = np.linalg.norm(y) or np.linalg.norm(r0)
    if ref == 0.0:
        return theta, 0, 0.0
    z = np.zeros_like(r0)
    r = r0.copy()
    p = r.copy()
    rr = float(r @ r)
    best_z, best_res = z.copy(), math.sqrt(rr)
    target = tol * ref
    it = 0
    while math.sqrt(rr) > target:
        if it >= max_iters:
            best = theta - op.apply_adjoint(best_z)
            raise ConvergenceError(
                f"projection stalled at relative residual {best_res / ref:.3e} after "
                f"{max_iters} CG iterations (target {tol:.1e})", best=best)
        q = _gram(op, p)
        pq = float(p @ q)
        if pq <= 0.0:
            break
        alpha = rr / pq
        z += alpha * p
        r -= alpha * q
        rr_new = float(r @ r)
        it += 1
        if math.sqrt(rr_new) < best_res:
            best_res = math.sqrt(rr_new)
            best_z = z.copy()
        p = r + (rr_new / rr) * p
        rr = rr_new
    out = theta - op.apply_adjoint(z)
    _check_finite(out, "projection")
    return out, it, math.sqrt(rr) / ref


def _dense_gram(op):
    model = op.model if isinstance(op, CsOperator) else getattr(op, "model", None)
    if model is not None and hasattr(model, "matrix"):
        mat = model.matrix
        n = mat.shape[0]
        gram = np.empty((n, n))
        matt = mat.T.tocsc()
        step = max(1, min(n, 1024))
        for start in range(0, n, step):
            gram[start:start + step] = (mat[start:start + step] @ matt).toarray()
        return gram
    n = op.shape[0]
    return np.column_stack([_gram(op, e) for e in np.eye(n)])


def gram_eigensystem(op, rcond: float = 1e-12):
    """Eigenvectors and inverse eigenvalues of ``A A^T`` above ``rcond * max``.

    The result is cached on the underlying model matrix, so every projection
    after the first costs two sparse and two dense matrix-vector products.
    """
    import scipy.linalg as sla

    owner = op.model if isinstance(op, CsOperator) else op
    cache = getattr(owner, "_gram_cache", None)
    if cache is None:
        cache = {}
        try:
            owner._gram_cache = cache
        except AttributeError:
            pass
    if rcond in cache:
        return cache[rcond]
    gram = _dense_gram(op)
    lam, vecs = sla.eigh(gram, overwrite_a=True, check_finite=False, driver="evd")
    del gram
    keep = lam > rcond * max(lam[-1], 0.0)
    result = (np.ascontiguousarray(vecs[:, keep]), 1.0 / lam[keep])
    del vecs
    # one factorization per model; different rcond values are rare
    cache.clear()
    cache[rcond] = result
    log.debug("Gram eigensystem: kept %d of %d modes", keep.sum(), keep.size)
    return result


def _direct_project(op, y, theta, tol, eig, max_refine=DIRECT_REFINE):
    """Same contract as :func:`_cg_project`, via the cached Gram pseudo-inverse.

    A few refinement sweeps absorb rounding in the eigendecomposition.
    """
    vecs, inv = eig
    if isinstance(op, CsOperator):
        fwd, adj = op.model.forward, op.model.adjoint
        x = op.basis.synthesize(theta)
    else:
        fwd, adj = op.apply, op.apply_adjoint
        x = theta
    r = fwd(x) - y
    ref = np.linalg.norm(y) or np.linalg.norm(r)
    if ref == 0.0:
        return theta, 0, 0.0
    res = np.linalg.norm(r)
    sweeps = 0
    while res > tol * ref:
        if sweeps >= max_refine:
            best = op.basis.analyze(x) if isinstance(op, CsOperator) else x
            raise ConvergenceError(
                f"direct projection stalled at relative residual {res / ref:.3e} "
                f"(target {tol:.1e})", best=best)
        x = x - adj(vecs @ (inv * (vecs.T @ r)))
        r = fwd(x) - y
        res = np.linalg.norm(r)
        sweeps += 1
    out = op.basis.analyze(x) if isinstance(op, CsOperator) else x
    _check_finite(out, "projection")
    return out, sweeps, res / ref


def _projector(op, method, tol, max_iters, rcond):
    if method == "auto":
        method = "direct" if op.shape[0] <= DIRECT_MAX_ROWS else "cg"
    if method == "direct":
        eig = gram_eigensystem(op, rcond)
        return lambda y, theta: _direct_project(op, y, theta, tol, eig)
    return lambda y, theta: _cg_project(op, y, theta, tol, max_iters)


def min_l2_projection(op, y, theta, tol: float = 1e-8, max_iters: int = 2000,
                      method: str = "cg", rcond: float = 1e-12) -> np.ndarray:
    """Closest point to ``theta`` on the affine set ``A theta = y``.

    For ``theta = 0`` this is the minimum-norm solution.  The default runs CG
    on ``A A^T z = A theta - y`` until ``|y - A theta_out| <= tol |y|``;
    ``method="direct"`` uses the cached Gram eigendecomposition instead.
    """
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    if method not in PROJECTIONS:
        raise InvalidArgumentError(f"method must be one of {PROJECTIONS}")
    y = _values(y)
    theta = np.asarray(theta, dtype=float).ravel()
    if y.size != op.shape[0] or theta.size != op.shape[1]:
        raise InvalidArgumentError("operator and vector sizes disagree")
    return _projector(op, method, tol, max_iters, rcond)(y, theta)[0]


def sl0_solve(op, y, params: Sl0Params = Sl0Params()) -> ReconResult:
    """Sparsest feasible coefficients by annealed smoothed-l0 maximization.

    Starts from the minimum-norm solution, sets ``sigma = 2 max|theta|`` and
    halves it (by ``sigma_decrease``) down to ``sigma_min_ratio`` of the start.
    Each inner step shrinks small coefficients and projects back onto
    ``A theta = y``.
    """
    y = _values(y)
    if y.size != op.shape[0]:
        raise InvalidArgumentError("data length does not match operator rows")
    _check_finite(y, "data")
    project = _projector(op, params.projection, params.projection_tolerance,
                         params.projection_max_iters, params.rcond)
    ynorm = np.linalg.norm(y)
    trace = []
    outer = 0

    def attach(exc):
        best = exc.best if exc.best is not None else np.zeros(op.shape[1])
        exc.best = ReconResult(_image_for(op, _synth(op, best)), outer,
                               float(np.linalg.norm(y - op.apply(best))),
                               best, trace, False, "SL0")
        return exc

    try:
        theta, its, rel = project(y, np.zeros(op.shape[1]))
    except ConvergenceError as exc:
        raise attach(exc)
    trace.append({"iteration": 0, "sigma": math.nan,
                  "objective": float(np.count_nonzero(theta)),
                  "residual": float(rel * ynorm), "projection_iterations": its})
    sigma = 2.0 * float(np.max(np.abs(theta), initial=0.0))
    sigma_min = params.sigma_min_ratio * sigma
    while sigma > 0 and sigma >= sigma_min:
        outer += 1
        its_total = 0
        for _ in range(params.inner_iterations):
            # step_mu * sigma^2 * gradient of (m - F_sigma)
            theta = theta - params.step_mu * theta * np.exp(-theta ** 2 / (2 * sigma ** 2))
            try:
                theta, its, rel = project(y, theta)
            except ConvergenceError as exc:
                raise attach(exc)
            its_total += its
        _check_finite(theta, "SL0 iterate")
        trace.append({"iteration": outer, "sigma": sigma,
                      "objective": smoothed_l0_value(theta, sigma),
                      "residual": float(rel * ynorm), "projection_iterations": its_total})
        log.debug("SL0 sigma=%.3e objective=%.1f residual=%.2e", sigma,
                  trace[-1]["objective"], rel)
        sigma *= params.sigma_decrease

    x = _synth(op, theta)
    return ReconResult(_image_for(op, x), outer, float(np.linalg.norm(y - op.apply(theta))),
                       theta, trace, True, "SL0")


def _synth(op, theta):
    return op.basis.synthesize(theta) if isinstance(op, CsOperator) else theta


def basis_pursuit_solve(op, y, params: BpParams = BpParams(), seed: int = 0) -> ReconResult:
    """l1-regularized least squares by FISTA with monotone restarts.

    ``lambda`` decreases geometrically from ``0.5 |A^T y|_inf`` to the final
    weight; each stage is warm started from the previous one.
    """
    y = _values(y)
    if y.size != op.shape[0]:
        raise InvalidArgumentError("data length does not match operator rows")
    _check_finite(y, "data")
    aty = op.apply_adjoint(y)
    scale = float(np.max(np.abs(aty), initial=0.0))
    lam_final = params.lambda_final * scale if params.relative_lambda else params.lambda_final
    lam0 = max(0.5 * scale, lam_final)
    steps = params.continuation_steps
    lip = 1.01 * power_iteration(op, op.shape[0], seed=seed)
    if lip == 0.0 or scale == 0.0:
        # A^T y = 0: zero is optimal for every lambda
        theta = np.zeros(op.shape[1])
        return ReconResult(_image_for(op, _synth(op, theta)), 0, float(np.linalg.norm(y)),
                           theta, [], True, "BP")

    lams = lam0 * (lam_final / lam0) ** (np.arange(1, steps + 1) / steps) if steps > 1 else [lam_final]
    theta = np.zeros(op.shape[1])
    a_theta = np.zeros_like(y)
    trace = []
    total = 0
    converged = False
    per_stage = max(1, params.max_iterations // steps)
    for stage, lam in enumerate(lams):
        budget = params.max_iterations - total if stage == steps - 1 else per_stage
        obj = 0.5 * float((a_theta - y) @ (a_theta - y)) + lam * np.abs(theta).sum()
        z, a_z, t = theta.copy(), a_theta.copy(), 1.0
        converged = False
        for _ in range(max(budget, 0)):
            total += 1
            grad = op.apply_adjoint(a_z - y)
            cand = soft_threshold(z - grad / lip, lam / lip)
            a_cand = op.apply(cand)
            obj_cand = 0.5 * float((a_cand - y) @ (a_cand - y)) + lam * np.abs(cand).sum()
            if not math.isfinite(obj_cand):
                raise NumericalError("basis pursuit objective is not finite")
            if obj_cand > obj:
                # restart momentum from the current iterate; next step is plain ISTA
                z, a_z, t = theta.copy(), a_theta.copy(), 1.0
                continue
            change = np.linalg.norm(cand - theta) / max(np.linalg.norm(cand), 1e-300)
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_new
            z = cand + beta * (cand - theta)
            a_z = a_cand + beta * (a_cand - a_theta)
            theta, a_theta, obj, t = cand, a_cand, obj_cand, t_new
            if change < params.tolerance:
                converged = True
                break
        trace.append({"iteration": total, "lambda": float(lam), "objective": obj,
                      "residual": float(np.linalg.norm(y - a_theta))})
        log.debug("BP lambda=%.3e objective=%.6e iterations=%d", lam, obj, total)

    x = _synth(op, theta)
    result = ReconResult(_image_for(op, x), total, float(np.linalg.norm(y - a_theta)),
                         theta, trace, converged, "BP")
    if not converged and params.require_convergence:
        raise ConvergenceError(
            f"basis pursuit did not reach tolerance {params.tolerance:g} in "
            f"{params.max_iterations} iterations", best=result)
    return result


def ir_solve(model, y, params: IrParams = IrParams(), seed: int = 0) -> ReconResult:
    """Landweber iteration on ``|y - Kx|^2 / 2 + mu |x|^2 / 2`` from ``x = 0``."""
    y = _values(y)
    if y.size != model.rows:
        raise InvalidArgumentError("data length does not match model rows")
    _check_finite(y, "data")
    mu = params.tikhonov_mu
    if params.step == "auto":
        lip = power_iteration(_ModelOp(model), model.rows, seed=seed) + mu
        # power iteration underestimates; the margin keeps every mode contracting
        step = 1.0 / (1.02 * lip) if lip > 0 else 1.0
    else:
        step = float(params.step)
    x = np.zeros(model.cols)
    kx = np.zeros_like(y)
    trace = []
    for t in range(1, params.iterations + 1):
        x = x - step * (model.adjoint(kx - y) + mu * x)
        if params.nonneg:
            np.maximum(x, 0.0, out=x)
        kx = model.forward(x)
        _check_finite(x, "IR iterate")
        res = float(np.linalg.norm(y - kx))
        trace.append({"iteration": t, "step": step,
                      "objective": 0.5 * res ** 2 + 0.5 * mu * float(x @ x), "residual": res})
    grid = getattr(model, "grid", None) or make_grid(model.cols, 1, 1.0)
    return ReconResult(Image(grid, x), params.iterations, trace[-1]["residual"], None,
                       trace, True, "IR")


class _ModelOp:
    def __init__(self, model):
        self.model = model
        self.shape = model.shape

    def apply(self, x):
        return self.model.forward(x)

    def apply_adjoint(self, r):
        return self.model.adjoint(r)


def reconstruct(method: str, model, basis: WaveletBasis, y, params=None,
                seed: int = 0) -> ReconResult:
    """Run one of ``"SL0"``, ``"BP"`` or ``"IR"`` with matching parameters."""
    key = str(method).upper()
    if key not in METHODS:
        raise InvalidArgumentError(f"unknown method {method!r}; expected one of {sorted(METHODS)}")
    if params is None:
        params = METHODS[key]()
    if not isinstance(params, METHODS[key]):
        raise InvalidArgumentError(f"{key} needs {METHODS[key].__name__}, got {type(params).__name__}")
    if key == "IR":
        return ir_solve(model, y, params, seed=seed)
    op = CsOperator(model, basis)
    if key == "SL0":
        return sl0_solve(op, y, params)
    return basis_pursuit_solve(op, y, params, seed=seed)
