"""Closed-form evolution of the coupled system in spectral coordinates.

With alpha_i = (x, psi_i) the dynamics decouple mode by mode:

    alpha_j' = lambda_j alpha_j + b_j u                       (Y or Z mode)
    alpha_1' = lambda alpha_1 + c alpha_2 + b_1 u,  alpha_2' = lambda alpha_2 + b_2 u   (pair)

so every coordinate at time t is an exponential term plus a Duhamel integral
of the control against exp(lambda (t - tau)) or (t - tau) exp(lambda (t - tau)).
Reference coordinates follow from x_Z = z and x_Y[j] = alpha_j - (z, psi_Zj).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from . import _numeric as nm
from .expsum import ExponentialSum, duhamel_kernel, inner_product, l2_norm
from .minimality import kernel_family
from .spectrum import CoupledModel, EigenSystem, SpectrumPartition, b_coefficients

VERIFY_TOL = 1e-6

__all__ = [
    "StateCoordinates",
    "VerificationReport",
    "propagate",
    "verify_partial_null",
    "semigroup_consistency_check",
]


@dataclass(frozen=True)
class StateCoordinates:
    """Reference coordinates of x(t): y_coords = (x_Y, psi_Yj), z_coords = (x_Z, psi_Zk)."""

    t: float
    y_coords: np.ndarray
    z_coords: np.ndarray
    y_norm_estimate: float


def _state(t, y, z):
    y = nm.to_float(y)
    z = nm.to_float(z)
    return StateCoordinates(float(t), y, z, float(math.sqrt(math.fsum(v * v for v in y))))


def _duhamel(u: ExponentialSum, lam, t, degree, dps):
    if u.is_empty or t == 0:
        return 0 if dps is None else mpmath.mpf(0)
    return inner_product(u, duhamel_kernel(lam, t, degree, dps=dps), t)


def propagate(model: CoupledModel, eig: EigenSystem, partition: SpectrumPartition, x0,
              u: ExponentialSum | None = None, t=None, dps=None) -> StateCoordinates:
    """Coordinates of x(t) = S(t) x0 + int_0^t S(t - tau) b u(tau) dtau.

    The computation runs in the precision of ``u`` (or ``dps`` if given);
    the returned coordinates are float64.
    """
    t = model.t1 if t is None else float(t)
    if t < 0:
        raise ValueError("t must be non-negative")
    u = ExponentialSum.empty() if u is None else u
    if not u.is_empty and t > model.t1 * (1 + 1e-12):
        raise ValueError(f"t={t} lies beyond the control horizon t1={model.t1}")
    dps = nm.merge_dps(dps, u.dps)
    xy, xz = (np.asarray(v, dtype=float).reshape(-1) for v in x0)
    if len(xy) != model.ny or len(xz) != model.nz:
        raise ValueError("x0 does not match the model dimensions")
    if t == 0:
        return _state(0.0, xy.copy(), xz.copy())
    u = u.with_precision(dps)
    bc = b_coefficients(model, eig)
    pair_of_y = eig.pair_of_y
    with nm.working(dps):
        cv = (lambda v: mpmath.mpf(float(v))) if dps else float
        tt = cv(t)
        z = []
        for k in range(eig.nz):
            lam = cv(eig.lambda_z[k])
            zk = nm.scalar_exp(lam * tt) * cv(xz[k])
            if model.b_z[k] != 0:
                zk += cv(model.b_z[k]) * _duhamel(u, lam, tt, 0, dps)
            z.append(zk)
        y = []
        for j in range(eig.ny):
            lam = cv(eig.lambda_y[j])
            a0 = cv(xy[j]) + sum(cv(eig.psi_z[j, k]) * cv(xz[k]) for k in np.nonzero(eig.psi_z[j])[0])
            forced = cv(bc.y[j]) * _duhamel(u, lam, tt, 0, dps) if bc.y[j] != 0 else 0
            if j in pair_of_y:
                m = pair_of_y[j]
                q = eig.pairs[m][1]
                c = cv(eig.c[m])
                a0 += c * tt * cv(xz[q])
                if model.b_z[q] != 0:
                    forced += c * cv(model.b_z[q]) * _duhamel(u, lam, tt, 1, dps)
            alpha = nm.scalar_exp(lam * tt) * a0 + forced
            coupling = sum(z[k] * cv(eig.psi_z[j, k]) for k in np.nonzero(eig.psi_z[j])[0])
            y.append(alpha - coupling)
        y_arr = np.array(y, dtype=object if dps else float)
        z_arr = np.array(z, dtype=object if dps else float)
    return _state(t, y_arr, z_arr)


@dataclass(frozen=True)
class VerificationReport:
    """Controlled versus free evolution at t1 on modes 1..n_verify."""

    controlled: StateCoordinates
    uncontrolled: StateCoordinates
    n_synth: int
    n_verify: int
    ratios: np.ndarray
    max_controlled: float
    threshold: float
    spillover: float
    uncontrolled_spillover: float
    spillover_bound: float
    verdict: bool


def verify_partial_null(model: CoupledModel, eig: EigenSystem, partition: SpectrumPartition, x0,
                        solution, t1=None, n_verify=None, verify_tol=VERIFY_TOL) -> VerificationReport:
    """Check that the synthesized modes vanish at t1 and measure spillover.

    ``solution`` is a :class:`~mcontrol.moment.ControlSolution` (or anything
    with ``control`` and ``n`` attributes).  The verdict only looks at the
    first ``n_synth`` Y modes; spillover on modes n_synth+1..n_verify is
    reported separately together with the Cauchy-Schwarz bound
    |y_unc_j| + ||g^_j|| ||u||.
    """
    t1 = model.t1 if t1 is None else float(t1)
    n_synth = int(solution.n)
    n_verify = min(2 * n_synth, model.ny) if n_verify is None else int(n_verify)
    if n_verify < n_synth:
        raise ValueError("n_verify must be at least n_synth")
    if n_verify > model.ny:
        raise ValueError(f"n_verify={n_verify} exceeds the {model.ny} Y modes of the model")
    u = solution.control
    controlled = propagate(model, eig, partition, x0, u, t1)
    uncontrolled = propagate(model, eig, partition, x0, None, t1)
    yc = controlled.y_coords[:n_verify]
    yu = uncontrolled.y_coords[:n_verify]
    unc_norm = float(np.linalg.norm(yu))
    threshold = verify_tol * max(1.0, unc_norm)
    max_c = float(np.max(np.abs(yc[:n_synth]))) if n_synth else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(yu[:n_synth] != 0, np.abs(yc[:n_synth]) / np.abs(yu[:n_synth]), np.nan)
    spill = float(np.max(np.abs(yc[n_synth:]))) if n_verify > n_synth else 0.0
    spill_unc = float(np.max(np.abs(yu[n_synth:]))) if n_verify > n_synth else 0.0
    bound = 0.0
    if n_verify > n_synth:
        family = kernel_family(model, eig, partition, t1=t1, scaled=True)
        u_norm = float(l2_norm(u, t1)) if not u.is_empty else 0.0
        bound = max(abs(float(yu[j])) + float(l2_norm(family.kernels[j], t1)) * u_norm
                    for j in range(n_synth, n_verify))
    return VerificationReport(controlled, uncontrolled, n_synth, n_verify, ratios, max_c, threshold,
                              spill, spill_unc, bound, bool(max_c <= threshold))


def semigroup_consistency_check(model: CoupledModel, eig: EigenSystem, partition: SpectrumPartition, x0,
                                s, t) -> float:
    """Relative max deviation between S(t + s) x0 and S(t) S(s) x0."""
    s, t = float(s), float(t)
    if s < 0 or t < 0:
        raise ValueError("s and t must be non-negative")
    direct = propagate(model, eig, partition, x0, None, s + t)
    mid = propagate(model, eig, partition, x0, None, s)
    composed = propagate(model, eig, partition, (mid.y_coords, mid.z_coords), None, t)
    a = np.concatenate([direct.y_coords, direct.z_coords])
    b = np.concatenate([composed.y_coords, composed.z_coords])
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    dev = float(np.max(np.abs(a - b))) if a.size else 0.0
    return dev / scale if scale > 0 else dev
