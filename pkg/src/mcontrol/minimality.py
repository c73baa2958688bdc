"""Moment kernels, Gram cutouts and strong-minimality diagnostics.

For every Y-indexed mode j the moment kernel is

    g_j(tau) = exp(-lambda_j tau) [b_1j + c_j b_2j (t1 - tau)]
               - exp(-lambda_j t1) sum_k exp(nu_k (t1 - tau)) b_Zk psi_Zj[k]

(the bracketed degree-one part only exists for matched pairs).  A control u
drives Y mode j to zero at t1 exactly when <g_j, u> = d_j.  The scaled kernel
exp(lambda_j t1) g_j has the same span and bounded coefficients; scaling is
recorded per kernel so that either form can be recovered exactly.

Gram matrices of such families span hundreds of orders of magnitude, so all
eigenvalue work is done on the norm-normalised matrix, in extended precision
when the dynamic range requires it.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import mpmath
import numpy as np
from scipy.linalg import cho_solve, lu_factor, lu_solve

from . import _numeric as nm
from .errors import EigensolverFailure, SingularGram, ZeroCoefficient
from .expsum import ExponentialSum, linear_combination, log_inner_product
from .spectrum import CoupledModel, EigenSystem, SpectrumPartition, b_coefficients

FLOAT_STABILITY_REL = 1e-10
FIT_WINDOW = 5
FIT_R2 = 0.99
DIVERGENCE_CEILING = 1e12
TAIL_TOL = 1e-12
TAIL_WINDOW = 10
POWER_LAW_MARGIN = 0.05
MAX_DPS = 4000

__all__ = [
    "KernelFamily",
    "GramAnalysis",
    "BiorthFit",
    "Verdict",
    "NormalizedGram",
    "kernel_family",
    "gram_matrix",
    "normalized_gram",
    "strong_minimality_diagnostic",
    "biorthogonal_norms",
    "biorthogonal_family",
    "dirichlet_abscissa",
    "gap_certificate",
    "series_convergence_diagnostic",
    "resolve_threads",
]


class Verdict(str, Enum):
    STRONGLY_MINIMAL = "StronglyMinimalEvidence"
    DEGENERATING = "DegeneratingEvidence"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class KernelFamily:
    """Ordered moment kernels for the Y-indexed modes.

    ``log_scales[j] = lambda_j * t1`` is the log of the factor that maps the
    unscaled kernel g_j to the scaled kernel; ``scaled`` tells which of the
    two the stored ``kernels`` are.
    """

    kernels: tuple[ExponentialSum, ...]
    mode_ids: tuple[str, ...]
    lambdas: np.ndarray
    log_scales: np.ndarray
    t1: float
    scaled: bool = False

    def __len__(self) -> int:
        return len(self.kernels)

    def truncated(self, n: int) -> KernelFamily:
        if not 0 < n <= len(self):
            raise ValueError(f"n must lie in [1, {len(self)}], got {n}")
        return KernelFamily(self.kernels[:n], self.mode_ids[:n], self.lambdas[:n],
                            self.log_scales[:n], self.t1, self.scaled)

    def as_scaled(self) -> KernelFamily:
        if self.scaled:
            return self
        kernels = tuple(g.rescaled(s) for g, s in zip(self.kernels, self.log_scales))
        return KernelFamily(kernels, self.mode_ids, self.lambdas, self.log_scales, self.t1, True)

    def as_unscaled(self) -> KernelFamily:
        if not self.scaled:
            return self
        kernels = tuple(g.rescaled(-s) for g, s in zip(self.kernels, self.log_scales))
        return KernelFamily(kernels, self.mode_ids, self.lambdas, self.log_scales, self.t1, False)

    def select(self, indices) -> KernelFamily:
        idx = list(indices)
        return KernelFamily(tuple(self.kernels[i] for i in idx), tuple(self.mode_ids[i] for i in idx),
                            self.lambdas[idx], self.log_scales[idx], self.t1, self.scaled)


def kernel_family(model: CoupledModel, eig: EigenSystem, partition: SpectrumPartition | None = None,
                  t1=None, scaled: bool = False) -> KernelFamily:
    """Unscaled (default) or scaled moment kernels for every Y mode."""
    t1 = model.t1 if t1 is None else float(t1)
    bc = b_coefficients(model, eig)
    pair_of_y = eig.pair_of_y
    kernels = []
    for j in range(eig.ny):
        lam = float(eig.lambda_y[j])
        terms = [(bc.y[j], -lam, 0, 0.0)]
        if j in pair_of_y:
            m = pair_of_y[j]
            q = eig.pairs[m][1]
            cb2 = float(eig.c[m]) * float(model.b_z[q])
            terms += [(cb2 * t1, -lam, 0, 0.0), (-cb2, -lam, 1, 0.0)]
        weights = model.b_z * eig.psi_z[j]
        for k in np.nonzero(weights)[0]:
            nu = float(eig.lambda_z[k])
            terms.append((-weights[k], -nu, 0, (nu - lam) * t1))
        kernels.append(ExponentialSum.from_terms(terms))
    lambdas = np.array(eig.lambda_y, dtype=float)
    family = KernelFamily(tuple(kernels), tuple(model.spec_y.labels), lambdas, lambdas * t1, t1, False)
    return family.as_scaled() if scaled else family


# -- Gram assembly ------------------------------------------------------------

def resolve_threads(threads=None) -> int:
    """Worker count: explicit value, else MCONTROL_THREADS (unset = 1, 0 = auto)."""
    if threads is None:
        raw = os.environ.get("MCONTROL_THREADS", "").strip()
        threads = int(raw) if raw else 1
    threads = int(threads)
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def _pairwise_logs(kernels, t1, dps, threads):
    """Upper-triangle log inner products, assembled in a fixed order."""
    n = len(kernels)
    index = [(i, j) for i in range(n) for j in range(i, n)]
    kernels = [g.with_precision(dps) for g in kernels]

    def entry(ij):
        i, j = ij
        return log_inner_product(kernels[i], kernels[j], t1)

    workers = resolve_threads(threads)
    # Precision is set once here so worker threads never change it.
    with nm.working(dps):
        if workers > 1 and len(index) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                values = list(pool.map(entry, index))
        else:
            values = [entry(ij) for ij in index]
    return dict(zip(index, values))


@dataclass(frozen=True)
class NormalizedGram:
    """Gram matrix of the norm-normalised kernels plus the log norms.

    ``matrix`` is float64 or an object array of mpf; ``log_norms[j]`` is
    log ||g_j|| (``-inf`` for a zero kernel, whose row is left at zero).
    """

    matrix: np.ndarray
    log_norms: np.ndarray
    dps: int | None
    zero_modes: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def norms(self) -> np.ndarray:
        with nm.working(self.dps):
            return np.array([float(mpmath.exp(v)) if self.dps else math.exp(v) for v in self.log_norms])

    def unnormalized_matrix(self, n=None) -> np.ndarray:
        """D G D for the leading n x n cutout, in the same backend."""
        n = self.n if n is None else n
        with nm.working(self.dps):
            d = nm.exp(self.log_norms[:n]) if self.dps else np.exp(self.log_norms[:n])
            return self.matrix[:n, :n] * np.outer(d, d)


def normalized_gram(family: KernelFamily, t1=None, n=None, dps=None, threads=None) -> NormalizedGram:
    t1 = family.t1 if t1 is None else t1
    n = len(family) if n is None else n
    logs = _pairwise_logs(family.kernels[:n], t1, dps, threads)
    with nm.working(dps):
        zero = tuple(i for i in range(n) if logs[(i, i)][0] <= 0)
        if dps is None:
            mat = np.zeros((n, n))
            log_norms = np.full(n, -math.inf)
            for i in range(n):
                if i not in zero:
                    m, e = logs[(i, i)]
                    log_norms[i] = 0.5 * (math.log(m) + e)
            for (i, j), (m, e) in logs.items():
                if i in zero or j in zero:
                    continue
                mi, ei = logs[(i, i)]
                mj, ej = logs[(j, j)]
                val = m / math.sqrt(mi * mj) * math.exp(e - 0.5 * (ei + ej))
                mat[i, j] = mat[j, i] = val
            for i in range(n):
                if i not in zero:
                    mat[i, i] = 1.0
        else:
            mat = nm.to_mp(np.zeros((n, n)), dps)
            log_norms = np.empty(n, dtype=object)
            log_norms[:] = [mpmath.mpf("-inf")] * n
            for i in range(n):
                if i not in zero:
                    m, e = logs[(i, i)]
                    log_norms[i] = (mpmath.log(m) + e) / 2
            for (i, j), (m, e) in logs.items():
                if i in zero or j in zero:
                    continue
                mi, ei = logs[(i, i)]
                mj, ej = logs[(j, j)]
                val = m / mpmath.sqrt(mi * mj) * mpmath.exp(e - (ei + ej) / 2)
                mat[i, j] = mat[j, i] = val
            for i in range(n):
                if i not in zero:
                    mat[i, i] = mpmath.mpf(1)
    return NormalizedGram(mat, log_norms, dps, zero)


def gram_matrix(family: KernelFamily, t1=None, n=None, threads=None) -> np.ndarray:
    """Float64 Gram matrix G[i, j] = <g_i, g_j> of the family as stored.

    Entries outside the float64 range come back as +/-inf; use
    :func:`normalized_gram` for families with large dynamic range.
    """
    t1 = family.t1 if t1 is None else t1
    n = len(family) if n is None else n
    logs = _pairwise_logs(family.kernels[:n], t1, None, threads)
    g = np.zeros((n, n))
    for (i, j), (m, e) in logs.items():
        with np.errstate(over="ignore"):
            val = m * math.exp(e) if e < 709.0 else m * np.float64(np.inf)
        g[i, j] = g[j, i] = val if m != 0 else 0.0
    return g


# -- symmetric eigenvalues ------------------------------------------------------

def _eigvalsh(mat, dps):
    """Ascending eigenvalues (and vectors) of a symmetric matrix."""
    if dps is None:
        try:
            w, v = np.linalg.eigh(mat)
        except np.linalg.LinAlgError as exc:
            raise EigensolverFailure(str(exc)) from exc
        return w, v
    with mpmath.workdps(dps):
        try:
            w, q = mpmath.eigsy(mpmath.matrix(mat.tolist()))
        except Exception as exc:  # mpmath raises bare exceptions on non-convergence
            raise EigensolverFailure(f"extended-precision eigensolver failed: {exc}") from exc
        order = sorted(range(len(w)), key=lambda i: w[i])
        vals = np.empty(len(w), dtype=object)
        vals[:] = [w[i] for i in order]
        vecs = np.empty((len(w), len(w)), dtype=object)
        for col, i in enumerate(order):
            for r in range(len(w)):
                vecs[r, col] = q[r, i]
    return vals, vecs


def _inverse_power_check(mat, lam1, vec1, lam_max, dps, iters=4):
    """Refine the smallest eigenpair by inverse iteration and compare."""
    n = mat.shape[0]
    rng = np.random.default_rng(12345)
    start = rng.standard_normal(n) * 1e-3
    with nm.working(dps):
        if dps is None:
            x = vec1 + start
            try:
                lu = lu_factor(mat)
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise EigensolverFailure(str(exc)) from exc
            for _ in range(iters):
                x = lu_solve(lu, x)
                x = x / np.linalg.norm(x)
            rq = float(x @ mat @ x)
            tol = 1e-11 * n * abs(lam_max) + 1e-6 * abs(lam1)
            ok = np.all(np.isfinite(x)) and abs(rq - lam1) <= tol
        else:
            a = mpmath.matrix(mat.tolist())
            x = mpmath.matrix([vec1[i] + start[i] for i in range(n)])
            try:
                for _ in range(iters):
                    x = mpmath.lu_solve(a, x)
                    x = x / mpmath.norm(x)
            except ZeroDivisionError as exc:
                raise EigensolverFailure("inverse iteration hit a singular matrix") from exc
            rq = (x.T * a * x)[0]
            tol = mpmath.mpf(10) ** (-(dps - 10)) * n * abs(lam_max) + mpmath.mpf("1e-6") * abs(lam1)
            ok = abs(rq - lam1) <= tol
    if not ok:
        raise EigensolverFailure(f"smallest eigenvalue {float(lam1):.6g} disagrees with inverse iteration {float(rq):.6g}")
    return rq


def _extreme_eigs(mat, dps, cross_check=True):
    """(smallest, largest) eigenvalue with the inverse-power cross-check."""
    vals, vecs = _eigvalsh(mat, dps)
    lam1, lam_max = vals[0], vals[-1]
    if cross_check and mat.shape[0] > 1 and lam1 < 1e-8 * lam_max and lam1 > 0:
        _inverse_power_check(mat, lam1, vecs[:, 0], lam_max, dps)
    return lam1, lam_max


# -- strong minimality ---------------------------------------------------------

@dataclass(frozen=True)
class GramAnalysis:
    """Eigenvalue sequences of the leading Gram cutouts G_1 ... G_nmax."""

    n_max: int
    lambda1_seq: np.ndarray
    lambdan_seq: np.ndarray
    norms: np.ndarray
    lambda1_normalized_seq: np.ndarray
    lambdan_normalized_seq: np.ndarray
    lower_bound: np.ndarray
    stability_floor: np.ndarray
    verdict: Verdict
    dps: int | None
    fit_slope: float = float("nan")
    fit_r2: float = float("nan")
    ratios: np.ndarray = field(default_factory=lambda: np.zeros(0))
    zero_modes: tuple[int, ...] = ()


def _auto_dps(family: KernelFamily, n, t1, base=30):
    """Digits needed to resolve the n x n cutouts of the unnormalised family."""
    logs = _pairwise_logs(family.kernels[:n], t1, None, 1)
    lognorms = [0.5 * (math.log(logs[(i, i)][0]) + logs[(i, i)][1]) for i in range(n) if logs[(i, i)][0] > 0]
    spread = (max(lognorms) - min(lognorms)) * 2 / math.log(10) if lognorms else 0.0
    return int(base + math.ceil(spread) + 4 * n)


def _verdict(lam1, floor):
    lam1 = np.asarray(lam1, dtype=float)
    if np.any(lam1 <= floor):
        return Verdict.DEGENERATING, float("nan"), float("nan"), np.zeros(0)
    if len(lam1) < 3:
        return Verdict.STRONGLY_MINIMAL, float("nan"), float("nan"), np.zeros(0)
    tail = lam1[-min(FIT_WINDOW, len(lam1)):]
    x = np.arange(len(tail), dtype=float)
    y = np.log(tail)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    ratios = tail[1:] / tail[:-1]
    decelerating = bool(np.all(np.diff(ratios) >= -1e-3) and ratios[-1] - ratios[0] > 0.02)
    settled = bool(np.all(ratios >= 0.9))
    if settled or decelerating:
        return Verdict.STRONGLY_MINIMAL, float(slope), r2, ratios
    if r2 > FIT_R2 and slope < -0.1:
        return Verdict.DEGENERATING, float(slope), r2, ratios
    return Verdict.INCONCLUSIVE, float(slope), r2, ratios


def strong_minimality_diagnostic(family: KernelFamily, t1=None, n_max=None, dps="auto",
                                 threads=None) -> GramAnalysis:
    """Smallest/largest Gram eigenvalues for n = 1..n_max and a trend verdict.

    ``dps="auto"`` picks enough digits for the unnormalised cutouts; pass
    ``None`` for float64 or an integer to force a precision.  The stability
    floor is ``1e-10 * lambda_n`` in float64 and ``10**-(dps-6) * lambda_n``
    in extended precision.
    """
    t1 = family.t1 if t1 is None else t1
    n_max = len(family) if n_max is None else int(n_max)
    if not 0 < n_max <= len(family):
        raise ValueError(f"n_max must lie in [1, {len(family)}]")
    if dps == "auto":
        dps = _auto_dps(family, n_max, t1)
    ng = normalized_gram(family, t1, n_max, dps=dps, threads=threads)
    l1, ln, l1h, lnh, lb, floor = [], [], [], [], [], []
    rel_floor = FLOAT_STABILITY_REL if dps is None else 10.0 ** (-(dps - 6))
    with nm.working(dps):
        for n in range(1, n_max + 1):
            a, b = _extreme_eigs(ng.matrix[:n, :n], dps)
            g = ng.unnormalized_matrix(n)
            c, d = _extreme_eigs(g, dps)
            finite_norms = [v for v in ng.log_norms[:n] if v != -math.inf]
            min_norm2 = (nm.scalar_exp(2 * min(finite_norms)) if finite_norms else 0.0)
            l1h.append(float(a))
            lnh.append(float(b))
            l1.append(float(c))
            ln.append(float(d))
            lb.append(float(min_norm2 * a))
            floor.append(rel_floor * float(d))
    verdict, slope, r2, ratios = _verdict(l1, np.asarray(floor))
    return GramAnalysis(n_max, np.array(l1), np.array(ln), ng.norms(), np.array(l1h), np.array(lnh),
                        np.array(lb), np.array(floor), verdict, dps, slope, r2, ratios, ng.zero_modes)


# -- biorthogonal family ---------------------------------------------------------

@dataclass(frozen=True)
class BiorthFit:
    """Norms of the biorthogonal family and the fitted K_eps per trial eps."""

    q_norms: np.ndarray
    epsilon: np.ndarray
    k_epsilon: np.ndarray
    satisfied: np.ndarray
    inverse_diagonal: np.ndarray
    dps: int | None


def _cholesky(mat, dps):
    """Lower Cholesky factor, raising SingularGram when not positive definite."""
    if dps is None:
        try:
            return np.linalg.cholesky(mat)
        except np.linalg.LinAlgError as exc:
            raise SingularGram("Gram matrix is not numerically positive definite") from exc
    with mpmath.workdps(dps):
        try:
            return mpmath.cholesky(mpmath.matrix(mat.tolist()))
        except (ValueError, ZeroDivisionError) as exc:
            raise SingularGram(f"Gram matrix is not positive definite at {dps} digits") from exc


def _inverse(mat, dps):
    """Inverse of a symmetric positive definite matrix via Cholesky."""
    low = _cholesky(mat, dps)
    n = mat.shape[0]
    if dps is None:
        return cho_solve((low, True), np.eye(n))
    with mpmath.workdps(dps):
        # forward substitution for L^{-1}, then G^{-1} = L^{-T} L^{-1}
        linv = [[mpmath.mpf(0)] * n for _ in range(n)]
        for col in range(n):
            for i in range(col, n):
                acc = mpmath.mpf(1) if i == col else mpmath.mpf(0)
                for k in range(col, i):
                    acc -= low[i, k] * linv[k][col]
                linv[i][col] = acc / low[i, i]
        out = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(i, n):
                out[i, j] = out[j, i] = mpmath.fsum(linv[k][i] * linv[k][j] for k in range(max(i, j), n))
        return out


def biorthogonal_norms(family: KernelFamily, t1=None, n=None, epsilon_grid=(0.25,), dps="auto",
                       threads=None) -> BiorthFit:
    """||q_j|| of the biorthogonal family inside span{g_1..g_n} and K_eps fits.

    ``||q_j||^2 = (G_n^{-1})_jj``.  The bound ||q_j|| <= K_eps exp(-lambda_j eps)
    is judged satisfied when K_eps is finite and not attained at the last
    index (a growing tail would push K_eps up with n).
    """
    t1 = family.t1 if t1 is None else t1
    n = len(family) if n is None else int(n)
    if dps == "auto":
        dps = _auto_dps(family, n, t1)
    ng = normalized_gram(family, t1, n, dps=dps, threads=threads)
    if ng.zero_modes:
        raise SingularGram(f"zero kernels at modes {list(ng.zero_modes)}")
    inv = _inverse(ng.matrix, dps)
    with nm.working(dps):
        diag = [inv[j, j] for j in range(n)]
        if dps is None:
            log_q = np.array([0.5 * math.log(diag[j]) - ng.log_norms[j] for j in range(n)])
        else:
            log_q = np.array([float(mpmath.log(diag[j]) / 2 - ng.log_norms[j]) for j in range(n)])
    q_norms = np.exp(log_q)
    eps = np.atleast_1d(np.asarray(epsilon_grid, dtype=float))
    k_eps, ok = [], []
    for e in eps:
        logs = log_q + family.lambdas[:n] * e
        k_eps.append(float(np.exp(np.max(logs))))
        ok.append(bool(np.isfinite(np.max(logs)) and (n < 3 or int(np.argmax(logs)) < n - 1)))
    inv_diag = np.exp(2 * log_q)
    return BiorthFit(q_norms, eps, np.array(k_eps), np.array(ok), inv_diag, dps)


def biorthogonal_family(family: KernelFamily, t1=None, n=None, dps=None) -> list[ExponentialSum]:
    """q_i = sum_k (G_n^{-1})_ik g_k as exponential sums."""
    t1 = family.t1 if t1 is None else t1
    n = len(family) if n is None else int(n)
    ng = normalized_gram(family, t1, n, dps=dps)
    inv = _inverse(ng.matrix, dps)
    out = []
    with nm.working(dps):
        # G^{-1} = D^{-1} Ghat^{-1} D^{-1}: fold D^{-1} into the kernels' log-scales.
        unit = [g.with_precision(dps).rescaled(-ng.log_norms[k]) for k, g in enumerate(family.kernels[:n])]
        for i in range(n):
            qi = linear_combination(list(inv[i, :]), unit, dps=dps)
            out.append(qi.rescaled(-ng.log_norms[i]))
    return out


# -- Dirichlet abscissa ----------------------------------------------------------

@dataclass(frozen=True)
class DirichletEstimate:
    sequence: np.ndarray
    limit: float
    indices: np.ndarray


def dirichlet_abscissa(b_vals, lambdas) -> DirichletEstimate:
    """Sequence 2 ln|b_j| / lambda_j and its tail mean (last quartile)."""
    b = np.asarray(b_vals, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    if b.shape != lam.shape:
        raise ValueError("b_vals and lambdas must have the same length")
    if len(b) == 0:
        raise ValueError("at least one mode is required")
    zero = np.nonzero(b == 0)[0]
    if len(zero):
        raise ZeroCoefficient(zero)
    if np.any(lam >= 0):
        raise ValueError("dirichlet_abscissa needs strictly negative eigenvalues")
    seq = 2.0 * np.log(np.abs(b)) / lam
    tail = max(1, len(seq) // 4)
    return DirichletEstimate(seq, float(np.mean(seq[-tail:])), np.arange(len(seq)))


# -- gap certificate ---------------------------------------------------------------

@dataclass(frozen=True)
class GapCertificate:
    """Separation and reciprocal-sum checks for a decreasing negative spectrum.

    ``min_modulus_ok`` and ``pairwise_gap_ok`` are the strict inequalities at
    the requested ``rho``.  ``rho_sup`` is the largest admissible separation
    constant of the truncation; ``all_ok`` asks for ``rho <= rho_sup`` together
    with a summable reciprocal tail.
    """

    rho: float
    rho_sup: float
    min_modulus_ok: bool
    pairwise_gap_ok: bool
    separation_ok: bool
    reciprocal_sum: float
    power_law_exponent: float
    power_law_constant: float
    tail_bound: float
    reciprocal_ok: bool
    all_ok: bool
    excluded: tuple[int, ...] = ()
    notes: tuple[str, ...] = ()


def _power_law_fit(n, values):
    """Least-squares fit of log(values) = log(c) + p log(n)."""
    x, y = np.log(n), np.log(values)
    p, logc = np.polyfit(x, y, 1)
    return float(p), float(logc)


def gap_certificate(lambdas, rho=None) -> GapCertificate:
    """Check the separation and summability conditions of the spectrum.

    Leading non-negative eigenvalues are excluded and flagged.  With
    ``rho=None`` the certificate is evaluated at ``rho_sup``.
    """
    lam = np.asarray(lambdas, dtype=float)
    notes = []
    excluded = tuple(int(i) for i in np.nonzero(lam >= 0)[0])
    if excluded:
        if excluded != tuple(range(len(excluded))):
            raise ValueError("non-negative eigenvalues must lead a decreasing spectrum")
        notes.append(f"excluded non-negative eigenvalues at positions {list(excluded)}; "
                     "certificate applies to the remaining subsequence")
    neg = lam[len(excluded):]
    if len(neg) == 0:
        raise ValueError("no negative eigenvalues to certify")
    if np.any(np.diff(neg) >= 0):
        raise ValueError("eigenvalues must be strictly decreasing")
    n = len(neg)
    idx = np.arange(1, n + 1)
    gaps = np.abs(neg[:, None] - neg[None, :])
    steps = np.abs(idx[:, None] - idx[None, :]).astype(float)
    off = steps > 0
    pair_sup = float(np.min(gaps[off] / steps[off])) if n > 1 else math.inf
    rho_sup = min(abs(float(neg[0])), pair_sup)
    rho = rho_sup if rho is None else float(rho)
    min_ok = bool(abs(neg[0]) > rho)
    pair_ok = bool(np.all(gaps[off] > steps[off] * rho)) if n > 1 else True
    sep_ok = bool(0 < rho <= rho_sup)
    recip = float(np.sum(1.0 / np.abs(neg)))
    p, c, bound, recip_ok = float("nan"), float("nan"), float("inf"), False
    if n >= 4:
        tail = slice(n // 2, n)
        p, _ = _power_law_fit(idx[tail].astype(float), np.abs(neg[tail]))
        if p >= 1.0 + POWER_LAW_MARGIN:
            c = float(np.min(np.abs(neg[tail]) / idx[tail] ** p))
            bound = float(n ** (1.0 - p) / (c * (p - 1.0)))
            recip_ok = True
        else:
            notes.append(f"tail growth exponent {p:.3f} does not exceed 1; reciprocal sum not summable")
    else:
        notes.append("fewer than four negative eigenvalues; no tail fit")
    return GapCertificate(rho, rho_sup, min_ok, pair_ok, sep_ok, recip, p, c, bound, recip_ok,
                          bool(sep_ok and recip_ok), excluded, tuple(notes))


# -- series diagnostic --------------------------------------------------------------

@dataclass(frozen=True)
class SeriesDiagnostic:
    terms: np.ndarray
    partial_sums: np.ndarray
    verdict: str
    limit: float
    tail_estimate: float
    stop_index: int


def _series_term(lam_j, lam_z, psi_row, z0, t1):
    """(sum_k exp((nu_k - lambda_j) t1) z0_k psi[k])^2 with the exponents folded."""
    mask = (psi_row != 0) & (z0 != 0)
    if not np.any(mask):
        return 0.0
    expo = (lam_z[mask] - lam_j) * t1
    top = float(np.max(expo))
    s = float(np.sum(z0[mask] * psi_row[mask] * np.exp(expo - top)))
    if s == 0:
        return 0.0
    log_term = 2.0 * (math.log(abs(s)) + top)
    return math.exp(log_term) if log_term < 709.0 else math.inf


def series_convergence_diagnostic(model: CoupledModel, eig: EigenSystem, x_z0, t1=None, n_terms=None,
                                  divergence_ceiling=DIVERGENCE_CEILING, tail_tol=TAIL_TOL,
                                  tail_window=TAIL_WINDOW) -> SeriesDiagnostic:
    """Partial sums of sum_j exp(-2 lambda_j t1) (S_Z(t1) x_Z0, psi_Zj)^2.

    Divergent once a partial sum passes ``divergence_ceiling``; Convergent
    when ``tail_window`` consecutive relative increments stay below
    ``tail_tol`` or the tail terms follow a power law n**-p with p > 1.
    """
    t1 = model.t1 if t1 is None else float(t1)
    z0 = np.asarray(x_z0, dtype=float).reshape(-1)
    if len(z0) != eig.nz:
        raise ValueError(f"x_z0 has length {len(z0)}, expected {eig.nz}")
    n_terms = eig.ny if n_terms is None else min(int(n_terms), eig.ny)
    terms, sums = [], []
    total = 0.0
    verdict = "Inconclusive"
    for j in range(n_terms):
        term = _series_term(float(eig.lambda_y[j]), eig.lambda_z, eig.psi_z[j], z0, t1)
        total = total + term
        terms.append(term)
        sums.append(total)
        if not math.isfinite(total) or total > divergence_ceiling:
            verdict = "Divergent"
            break
    terms_arr, sums_arr = np.array(terms), np.array(sums)
    tail_est = 0.0
    if verdict != "Divergent":
        if len(terms) >= tail_window:
            inc = terms_arr[-tail_window:] / np.where(sums_arr[-tail_window:] > 0, sums_arr[-tail_window:], 1.0)
            if np.all(inc <= tail_tol):
                verdict = "Convergent"
        if verdict != "Convergent" and len(terms) >= 4:
            tail = terms_arr[len(terms) // 2:]
            idx = np.arange(len(terms) // 2, len(terms)) + 1.0
            if np.all(tail > 0):
                p, logc = _power_law_fit(idx, tail)
                if p < -(1.0 + POWER_LAW_MARGIN):
                    verdict = "Convergent"
                    q = -p
                    tail_est = float(math.exp(logc) * len(terms) ** (1.0 - q) / (q - 1.0))
    limit = float(sums_arr[-1]) if len(sums_arr) else 0.0
    return SeriesDiagnostic(terms_arr, sums_arr, verdict, limit, limit + tail_est, len(terms))
