"""Moment targets and least-norm control synthesis.

Driving the Y coordinates of the state to zero at t1 is equivalent to the
moment equations <g_j, u> = d_j, j = 1, 2, ..., with the kernels of
:mod:`mcontrol.minimality`.  We solve the first n of them for the element of
span{g_1..g_n} with least L2 norm.  In the scaled form (kernels multiplied by
exp(lambda_j t1)) the equations read <g^_j, u> = d^_j and the Gram matrix is
G^ = D G~ D with unit-diagonal G~, which is what actually gets factorised.

The unscaled residuals are exp(-lambda_j t1) times the scaled ones, so
reaching a small *relative* unscaled residual for strongly damped modes needs
more than float64; extended precision is selected automatically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _numeric as nm
from .errors import IllConditionedWarning, SingularGram
from .expsum import ExponentialSum, inner_product, l2_norm, linear_combination
from .minimality import KernelFamily, _eigvalsh, normalized_gram
from .spectrum import CoupledModel, EigenSystem, SpectrumPartition

SOLVER_TOL = 1e-9
COND_WARN = 1e12
FALLBACK_REL = 1e-12
FLOAT_DIGIT_BUDGET = 6.0
MAX_ATTEMPTS = 4

__all__ = [
    "MomentTargets",
    "ControlSolution",
    "moment_targets",
    "reduced_initial_state",
    "synthesize_control",
    "residual_report",
]


@dataclass(frozen=True)
class MomentTargets:
    """Right-hand sides d_j of the moment equations (unscaled).

    ``scaled_values`` gives d^_j = exp(lambda_j t1) d_j, which pairs with the
    scaled kernel family.
    """

    d: np.ndarray
    mode_ids: tuple[str, ...]
    lambdas: np.ndarray
    t1: float
    scaled: bool = False

    def __len__(self) -> int:
        return len(self.d)

    @property
    def log_scales(self) -> np.ndarray:
        return self.lambdas * self.t1

    def values(self, dps=None, scaled=None) -> np.ndarray:
        """Targets in the requested backend, scaled or not."""
        scaled = self.scaled if scaled is None else scaled
        d = nm.convert(self.d, dps)
        if not scaled:
            return d
        with nm.working(dps):
            return d * nm.exp(nm.convert(self.log_scales, dps))

    def norm(self) -> float:
        return float(np.linalg.norm(self.d))


def _x0_pair(model: CoupledModel, x0):
    xy, xz = x0
    xy = np.asarray(xy, dtype=float).reshape(-1)
    xz = np.asarray(xz, dtype=float).reshape(-1)
    if len(xy) != model.ny or len(xz) != model.nz:
        raise ValueError(f"x0 components have lengths ({len(xy)}, {len(xz)}), "
                         f"expected ({model.ny}, {model.nz})")
    return xy, xz


def _free_response_projection(eig: EigenSystem, xz, t1):
    """exp(-lambda_j t1) (S_Z(t1) x_Z0, psi_Zj) for every Y mode j."""
    out = np.zeros(eig.ny)
    for j in range(eig.ny):
        w = eig.psi_z[j] * xz
        nz = np.nonzero(w)[0]
        if len(nz):
            out[j] = float(np.sum(w[nz] * np.exp((eig.lambda_z[nz] - eig.lambda_y[j]) * t1)))
    return out


def reduced_initial_state(model: CoupledModel, eig: EigenSystem, partition: SpectrumPartition, x0,
                          t1=None) -> np.ndarray:
    """Equivalent Y-only initial data y0_j = (x0, psi_j) - exp(-lambda_j t1)(S_Z(t1) x_Z0, psi_Zj).

    For paired modes the secular contribution c_j t1 (x0, psi_2j) is included,
    so that (y0, 0) and x0 produce the same moment targets.
    """
    t1 = model.t1 if t1 is None else float(t1)
    xy, xz = _x0_pair(model, x0)
    y0 = xy + eig.psi_z @ xz
    for m, (p, q) in enumerate(eig.pairs):
        y0[p] += eig.c[m] * t1 * xz[q]
    return y0 - _free_response_projection(eig, xz, t1)


def moment_targets(model: CoupledModel, eig: EigenSystem, partition: SpectrumPartition, x0,
                   t1=None) -> MomentTargets:
    """d_j = -(x0, psi_j) - c_j t1 (x0, psi_2j) + exp(-lambda_j t1)(S_Z(t1) x_Z0, psi_Zj)."""
    t1 = model.t1 if t1 is None else float(t1)
    d = -reduced_initial_state(model, eig, partition, x0, t1)
    d[d == 0] = 0.0
    return MomentTargets(d, tuple(model.spec_y.labels), np.array(eig.lambda_y, dtype=float), t1)


@dataclass(frozen=True)
class ControlSolution:
    """Least-norm control for the first ``n`` moment equations.

    ``coefficients`` multiply the *scaled* kernels.  ``residuals`` are the
    absolute unscaled residuals |<g_j, u> - d_j|; ``scaled_residuals`` equal
    the predicted Y coordinates at t1.
    """

    coefficients: np.ndarray
    control: ExponentialSum
    l2_norm: float
    residuals: np.ndarray
    scaled_residuals: np.ndarray
    regularization: float
    condition_estimate: float
    dps: int | None
    fallback: bool
    mode_ids: tuple[str, ...]
    t1: float
    targets_norm: float
    log_scales: np.ndarray
    coefficients_exact: np.ndarray = None

    @property
    def n(self) -> int:
        return len(self.coefficients)

    @property
    def unscaled_coefficients(self) -> np.ndarray:
        """Coefficients of u with respect to the unscaled kernels g_j."""
        return self.coefficients * np.exp(self.log_scales)

    def max_relative_residual(self) -> float:
        scale = self.targets_norm if self.targets_norm > 0 else 1.0
        return float(np.max(self.residuals) / scale) if self.n else 0.0


def _factor_solve(mat, rhs, dps):
    """Cholesky solve with one step of iterative refinement."""
    n = mat.shape[0]
    if dps is None:
        try:
            fac = cho_factor(mat, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularGram("Gram matrix is not numerically positive definite") from exc
        y = cho_solve(fac, rhs)
        y = y + cho_solve(fac, rhs - mat @ y)
        return y
    with mpmath.workdps(dps):
        a = mpmath.matrix(mat.tolist())
        b = mpmath.matrix(list(rhs))
        try:
            low = mpmath.cholesky(a)
        except (ValueError, ZeroDivisionError) as exc:
            raise SingularGram(f"Gram matrix is not positive definite at {dps} digits") from exc

        def solve(v):
            z = mpmath.matrix(n, 1)
            for i in range(n):
                z[i] = (v[i] - mpmath.fsum(low[i, k] * z[k] for k in range(i))) / low[i, i]
            x = mpmath.matrix(n, 1)
            for i in reversed(range(n)):
                x[i] = (z[i] - mpmath.fsum(low[k, i] * x[k] for k in range(i + 1, n))) / low[i, i]
            return x

        y = solve(b)
        y = y + solve(b - a * y)
        out = np.empty(n, dtype=object)
        out[:] = [y[i] for i in range(n)]
        return out


def _condition(mat, dps):
    vals, _ = _eigvalsh(mat, dps)
    lo, hi = vals[0], vals[-1]
    if lo <= 0:
        return math.inf
    return float(hi / lo)


def _solve_once(family: KernelFamily, targets: MomentTargets, n, tikhonov, dps, allow_fallback, threads):
    ng = normalized_gram(family, family.t1, n, dps=dps, threads=threads)
    if ng.zero_modes:
        raise SingularGram(f"zero kernels at modes {[family.mode_ids[i] for i in ng.zero_modes]}")
    with nm.working(dps):
        d_hat = targets.values(dps, scaled=True)[:n]
        inv_d = nm.exp(-ng.log_norms)
        inv_d2 = inv_d * inv_d
        fallback = False
        tik = tikhonov
        while True:
            if tik:
                tik_val = mpmath.mpf(tik) if dps else float(tik)
                mat = ng.matrix + np.diag(tik_val * inv_d2)
            else:
                mat = ng.matrix.copy()
            try:
                y = _factor_solve(mat, d_hat * inv_d, dps)
                break
            except SingularGram:
                if tik or not allow_fallback:
                    raise
                trace = sum(nm.scalar_exp(2 * v) for v in ng.log_norms)
                tik = float(FALLBACK_REL * trace / n)
                fallback = True
                warnings.warn(f"singular Gram matrix; falling back to tikhonov={tik:.3g}",
                              IllConditionedWarning, stacklevel=3)
        coefs = y * inv_d
        cond = _condition(mat, dps)
    return coefs, float(tik), fallback, cond


def _choose_dps(family: KernelFamily, n, threads):
    """Float64 when cheap enough, else digits from the scaling range and conditioning."""
    spread = float(np.max(np.abs(family.log_scales[:n]))) / math.log(10)
    ng = normalized_gram(family, family.t1, n, dps=None, threads=threads)
    try:
        cond = _condition(ng.matrix, None)
    except Exception:
        cond = math.inf
    cond_digits = math.log10(cond) if math.isfinite(cond) and cond > 0 else 17.0
    if spread + cond_digits <= FLOAT_DIGIT_BUDGET:
        return None
    return int(30 + math.ceil(spread) + math.ceil(min(cond_digits, 17.0)) + 2 * n)


def synthesize_control(targets: MomentTargets, family: KernelFamily, n=None, tikhonov=0.0, dps="auto",
                       allow_fallback=True, solver_tol=SOLVER_TOL, cond_warn=COND_WARN,
                       threads=None) -> ControlSolution:
    """Least-norm u in span{g^_1..g^_n} with <g_j, u> = d_j for j <= n.

    Parameters
    ----------
    targets : MomentTargets
    family : KernelFamily
        Scaled or unscaled; the solve always uses the scaled kernels.
    n : int, optional
        Number of moment equations (default: all).
    tikhonov : float
        Ridge parameter added to the scaled Gram matrix.
    dps : "auto", None or int
        Precision policy.  ``"auto"`` uses float64 when the problem is mild
        and otherwise raises the precision until the unscaled residual meets
        ``solver_tol * ||d||``.
    allow_fallback : bool
        On a singular Gram with ``tikhonov == 0``, retry with
        ``1e-12 * trace(G) / n`` instead of raising :class:`SingularGram`.
    """
    n = len(family) if n is None else int(n)
    if not 0 < n <= len(family):
        raise ValueError(f"n must lie in [1, {len(family)}], got {n}")
    if len(targets) < n:
        raise ValueError("fewer targets than requested moment equations")
    if tikhonov < 0:
        raise ValueError("tikhonov must be non-negative")
    scaled = family.as_scaled().truncated(n)
    auto = dps == "auto"
    work = _choose_dps(scaled, n, threads) if auto else dps
    d_norm = float(np.linalg.norm(targets.d[:n]))
    for attempt in range(MAX_ATTEMPTS):
        coefs, tik, fallback, cond = _solve_once(scaled, targets, n, tikhonov, work, allow_fallback, threads)
        with nm.working(work):
            control = linear_combination(list(coefs), list(scaled.kernels), dps=work)
            unscaled_res = residual_report(control, scaled, targets, scaled=False)
        ok = tik > 0 or np.max(np.abs(unscaled_res)) <= solver_tol * max(d_norm, 1e-300)
        needed = None
        if auto and work is not None and math.isfinite(cond):
            needed = int(30 + math.ceil(np.max(np.abs(scaled.log_scales)) / math.log(10))
                         + math.ceil(math.log10(max(cond, 1.0))))
        if not auto or ok and (needed is None or work >= needed):
            break
        if work is None:
            work = int(30 + math.ceil(np.max(np.abs(scaled.log_scales)) / math.log(10)) + 17 + 2 * n)
        else:
            work = max(2 * work, needed or 0)
    if cond > cond_warn:
        warnings.warn(f"Gram condition estimate {cond:.3g} exceeds {cond_warn:.3g}",
                      IllConditionedWarning, stacklevel=2)
    with nm.working(work):
        scaled_res = residual_report(control, scaled, targets, scaled=True)
        norm = float(l2_norm(control, scaled.t1))
    return ControlSolution(
        coefficients=nm.to_float(coefs),
        control=control,
        l2_norm=norm,
        residuals=np.abs(unscaled_res),
        scaled_residuals=scaled_res,
        regularization=tik,
        condition_estimate=cond,
        dps=work,
        fallback=fallback,
        mode_ids=scaled.mode_ids,
        t1=scaled.t1,
        targets_norm=d_norm,
        log_scales=np.array(scaled.log_scales, dtype=float),
        coefficients_exact=coefs,
    )


def residual_report(solution, family: KernelFamily, targets: MomentTargets, scaled=False) -> np.ndarray:
    """Signed residuals <g_j, u> - d_j, recomputed from closed-form integrals.

    ``solution`` may be a :class:`ControlSolution` or a bare
    :class:`ExponentialSum`.  With ``scaled=True`` the residuals refer to the
    scaled equations and equal the Y coordinates of the state at t1.
    """
    u = solution.control if isinstance(solution, ControlSolution) else solution
    n = solution.n if isinstance(solution, ControlSolution) else len(family)
    dps = u.dps
    kernels = (family.as_scaled() if scaled else family.as_unscaled()).kernels[:n]
    with nm.working(dps):
        d = targets.values(dps, scaled=scaled)[:n]
        out = [inner_product(g.with_precision(dps), u, family.t1) - d[j] for j, g in enumerate(kernels)]
    return nm.to_float(np.array(out, dtype=object if dps else float))
