"""Finite exponential sums on an interval [0, T] with closed-form inner products.

An :class:`ExponentialSum` represents

    u(t) = sum_k  c_k * t**d_k * exp(r_k * t + s_k)

with polynomial degree ``d_k`` in {0, 1} and a per-term log-scale ``s_k``.
The log-scales keep kernels such as ``exp(n**2 t)`` representable: a huge
prefactor never has to be materialised as a float.  Terms sharing a
``(rate, degree)`` key are merged and zero coefficients are dropped, so every
instance is in canonical form.

Two numeric backends are supported.  With ``dps=None`` all arrays are
float64; with an integer ``dps`` they are numpy object arrays of mpmath
``mpf`` values and every operation runs at that many decimal digits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from . import _numeric as nm
from .errors import NonPositiveHorizon, ToleranceNotReached

RATE_ZERO_TOL = 1e-12
MAX_DEGREE = 1

__all__ = [
    "RATE_ZERO_TOL",
    "ExponentialSum",
    "evaluate",
    "scale_add",
    "inner_product",
    "log_inner_product",
    "l2_norm",
    "exp_integral",
    "duhamel_kernel",
    "quadrature_inner_product",
]


@dataclass(frozen=True, eq=False)
class ExponentialSum:
    """Canonical finite sum of (polynomial times) exponential terms.

    Parameters
    ----------
    coefs, rates : array_like
        Coefficients ``c_k`` and rates ``r_k``.
    degrees : array_like of int, optional
        Polynomial degree of each term (0 or 1). Defaults to zeros.
    logs : array_like, optional
        Per-term log-scale ``s_k``. Defaults to zeros.
    dps : int or None
        Decimal precision of the mpmath backend, or None for float64.
    """

    coefs: np.ndarray
    rates: np.ndarray
    degrees: np.ndarray = None
    logs: np.ndarray = None
    dps: int | None = None

    def __post_init__(self):
        n = len(self.coefs)
        degrees = np.zeros(n, dtype=int) if self.degrees is None else np.asarray(self.degrees, dtype=int)
        logs = np.zeros(n) if self.logs is None else self.logs
        if not (len(self.rates) == n and len(degrees) == n and len(logs) == n):
            raise ValueError("coefs, rates, degrees and logs must have equal length")
        if np.any((degrees < 0) | (degrees > MAX_DEGREE)):
            raise ValueError(f"term degree must lie in [0, {MAX_DEGREE}]")
        coefs = nm.convert(self.coefs, self.dps)
        rates = nm.convert(self.rates, self.dps)
        logs = nm.convert(logs, self.dps)
        if self.dps is None and not (
            np.all(np.isfinite(coefs)) and np.all(np.isfinite(rates)) and np.all(np.isfinite(logs))
        ):
            raise ValueError("exponential sum terms must be finite")
        coefs, rates, degrees, logs = _canonical(coefs, rates, degrees, logs, self.dps)
        object.__setattr__(self, "coefs", coefs)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "degrees", degrees)
        object.__setattr__(self, "logs", logs)

    @classmethod
    def from_terms(cls, terms, dps=None) -> ExponentialSum:
        """Build from tuples ``(coef, rate[, degree[, log]])``."""
        coefs, rates, degrees, logs = [], [], [], []
        for term in terms:
            c, r, *rest = term
            coefs.append(c)
            rates.append(r)
            degrees.append(rest[0] if len(rest) > 0 else 0)
            logs.append(rest[1] if len(rest) > 1 else 0.0)
        if dps is None:
            return cls(np.array(coefs, dtype=float), np.array(rates, dtype=float),
                       np.array(degrees, dtype=int), np.array(logs, dtype=float))
        return cls(np.array(coefs, dtype=object), np.array(rates, dtype=object),
                   np.array(degrees, dtype=int), np.array(logs, dtype=object), dps=dps)

    @classmethod
    def empty(cls, dps=None) -> ExponentialSum:
        return cls.from_terms([], dps=dps)

    def __len__(self) -> int:
        return len(self.coefs)

    @property
    def is_empty(self) -> bool:
        return len(self.coefs) == 0

    @property
    def terms(self) -> list[tuple[float, float, int, float]]:
        """Terms as plain float tuples ``(coef, rate, degree, log)``."""
        return [(float(c), float(r), int(d), float(s))
                for c, r, d, s in zip(self.coefs, self.rates, self.degrees, self.logs)]

    def __call__(self, t):
        return evaluate(self, t)

    def with_precision(self, dps) -> ExponentialSum:
        """Same sum on another backend (exact for float to mp conversion)."""
        if dps == self.dps:
            return self
        return ExponentialSum(self.coefs, self.rates, self.degrees, self.logs, dps=dps)

    def rescaled(self, log_factor) -> ExponentialSum:
        """Multiply by ``exp(log_factor)`` without touching the coefficients."""
        with nm.working(self.dps):
            logs = self.logs + (mpmath.mpf(log_factor) if self.dps else float(log_factor))
        return ExponentialSum(self.coefs, self.rates, self.degrees, logs, dps=self.dps)

    def folded(self) -> ExponentialSum:
        """Absorb the log-scales into the coefficients (may overflow in float64)."""
        with nm.working(self.dps):
            coefs = self.coefs * nm.exp(self.logs)
        return ExponentialSum(coefs, self.rates, self.degrees, None, dps=self.dps)

    def __add__(self, other):
        return scale_add(1.0, self, 1.0, other)

    def __sub__(self, other):
        return scale_add(1.0, self, -1.0, other)

    def __neg__(self):
        return scale_add(-1.0, self, 0.0, ExponentialSum.empty())

    def __mul__(self, alpha):
        return scale_add(alpha, self, 0.0, ExponentialSum.empty())

    __rmul__ = __mul__

    def __repr__(self) -> str:
        inner = ", ".join(f"({c:.6g}, {r:.6g}, {d}, {s:.6g})" for c, r, d, s in self.terms)
        tag = "" if self.dps is None else f", dps={self.dps}"
        return f"ExponentialSum([{inner}]{tag})"


def _canonical(coefs, rates, degrees, logs, dps):
    """Merge equal (rate, degree) keys, drop zero terms, sort deterministically."""
    groups: dict = {}
    for c, r, d, s in zip(coefs, rates, degrees, logs):
        if c == 0:
            continue
        groups.setdefault((r, int(d)), []).append((c, s))
    keys = sorted(groups, key=lambda key: (key[1], float(key[0])))
    out_c, out_r, out_d, out_s = [], [], [], []
    with nm.working(dps):
        for key in keys:
            items = groups[key]
            if len(items) == 1:
                c, s = items[0]
            else:
                s = max(item[1] for item in items)
                c = sum(ci * nm.scalar_exp(si - s) for ci, si in items)
            if c == 0:
                continue
            out_c.append(c)
            out_r.append(key[0])
            out_d.append(key[1])
            out_s.append(s)
    if dps is None:
        return (np.array(out_c, dtype=float), np.array(out_r, dtype=float),
                np.array(out_d, dtype=int), np.array(out_s, dtype=float))
    return (_objarray(out_c), _objarray(out_r), np.array(out_d, dtype=int), _objarray(out_s))


def _objarray(values):
    out = np.empty(len(values), dtype=object)
    out[:] = values
    return out


def _common(a: ExponentialSum, b: ExponentialSum):
    dps = nm.merge_dps(a.dps, b.dps)
    return a.with_precision(dps), b.with_precision(dps), dps


def evaluate(es: ExponentialSum, t):
    """Evaluate the sum at scalar or array ``t``.

    Exponents are shifted by their pointwise maximum before exponentiation,
    so intermediate overflow only occurs when the value itself overflows.
    """
    scalar = np.ndim(t) == 0
    if es.dps is None:
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        if es.is_empty:
            out = np.zeros(ts.shape)
        else:
            expo = es.logs[:, None] + es.rates[:, None] * ts[None, :]
            top = expo.max(axis=0)
            poly = np.where(es.degrees[:, None] == 1, ts[None, :], 1.0)
            out = np.exp(top) * np.sum(es.coefs[:, None] * poly * np.exp(expo - top), axis=0)
        return float(out[0]) if scalar else out
    with nm.working(es.dps):
        ts = [mpmath.mpf(v) for v in np.atleast_1d(np.asarray(t, dtype=object)).ravel()]
        vals = []
        for tv in ts:
            acc = mpmath.mpf(0)
            for c, r, d, s in zip(es.coefs, es.rates, es.degrees, es.logs):
                acc += c * (tv if d == 1 else 1) * mpmath.exp(r * tv + s)
            vals.append(acc)
    return vals[0] if scalar else _objarray(vals)


def scale_add(alpha, a: ExponentialSum, beta, b: ExponentialSum) -> ExponentialSum:
    """Return ``alpha * a + beta * b`` in canonical form."""
    a, b, dps = _common(a, b)
    with nm.working(dps):
        if dps is None:
            coefs = np.concatenate([float(alpha) * a.coefs, float(beta) * b.coefs])
            logs = np.concatenate([a.logs, b.logs])
            rates = np.concatenate([a.rates, b.rates])
        else:
            al, be = mpmath.mpf(alpha), mpmath.mpf(beta)
            coefs = np.concatenate([a.coefs * al, b.coefs * be]) if len(a) + len(b) else _objarray([])
            logs = np.concatenate([a.logs, b.logs]) if len(a) + len(b) else _objarray([])
            rates = np.concatenate([a.rates, b.rates]) if len(a) + len(b) else _objarray([])
    degrees = np.concatenate([a.degrees, b.degrees]).astype(int)
    return ExponentialSum(coefs, rates, degrees, logs, dps=dps)


def linear_combination(weights, sums, dps=None) -> ExponentialSum:
    """Return ``sum_j weights[j] * sums[j]`` in one canonicalisation pass."""
    dps = nm.merge_dps(dps, *(s.dps for s in sums))
    coefs, rates, degrees, logs = [], [], [], []
    with nm.working(dps):
        for w, s in zip(weights, sums):
            s = s.with_precision(dps)
            w = mpmath.mpf(w) if dps is not None else float(w)
            coefs.extend(s.coefs * w)
            rates.extend(s.rates)
            degrees.extend(s.degrees)
            logs.extend(s.logs)
    if dps is None:
        return ExponentialSum(np.array(coefs, dtype=float), np.array(rates, dtype=float),
                              np.array(degrees, dtype=int), np.array(logs, dtype=float))
    return ExponentialSum(_objarray(coefs), _objarray(rates), np.array(degrees, dtype=int),
                          _objarray(logs), dps=dps)


# -- closed-form moments ------------------------------------------------------
#
# For x = rho * T,  int_0^T t^k e^{rho t} dt = T^{k+1} * F_k(x),
# F_k(x) = int_0^1 s^k e^{x s} ds.  We work with the damped form
# H_k(x) = exp(-max(x, 0)) * F_k(x), which lies in (0, 1] for every x.

_SERIES_TERMS = 26


def _p_forms(y):
    """int_0^1 v^k e^{-y v} dv for k = 0, 1, 2 and y >= 1 (float arrays)."""
    e = np.exp(-y)
    p0 = -np.expm1(-y) / y
    p1 = (1.0 - e * (1.0 + y)) / y**2
    p2 = (2.0 - e * (y * y + 2.0 * y + 2.0)) / y**3
    return p0, p1, p2


def _damped_moment(k, x):
    """Vectorised H_k(x) for integer array k in {0, 1, 2}."""
    k = np.asarray(k)
    x = np.asarray(x, dtype=float)
    k, x = np.broadcast_arrays(k, x)
    out = np.empty(x.shape)
    small = np.abs(x) <= 1.0
    if np.any(small):
        xs, ks = x[small], k[small]
        acc = np.zeros(xs.shape)
        term = np.ones(xs.shape)
        for n in range(_SERIES_TERMS):
            acc += term / (n + ks + 1)
            term = term * xs / (n + 1)
        out[small] = acc * np.exp(-np.maximum(xs, 0.0))
    pos = x > 1.0
    if np.any(pos):
        p0, p1, p2 = _p_forms(x[pos])
        kp = k[pos]
        out[pos] = np.select([kp == 0, kp == 1], [p0, p0 - p1], p0 - 2.0 * p1 + p2)
    neg = x < -1.0
    if np.any(neg):
        p0, p1, p2 = _p_forms(-x[neg])
        kn = k[neg]
        out[neg] = np.select([kn == 0, kn == 1], [p0, p1], p2)
    return out


def _damped_moment_mp(k, x):
    """Scalar H_k(x) at the current mpmath precision."""
    if abs(x) <= 1:
        eps = mpmath.mpf(2) ** (-mpmath.mp.prec - 8)
        acc = mpmath.mpf(0)
        term = mpmath.mpf(1)
        n = 0
        while True:
            acc += term / (n + k + 1)
            n += 1
            term = term * x / n
            if abs(term) < eps:
                break
        return acc * mpmath.exp(-x) if x > 0 else acc
    y = abs(x)
    e = mpmath.exp(-y)
    p0 = -mpmath.expm1(-y) / y
    p1 = (1 - e * (1 + y)) / y**2
    p2 = (2 - e * (y * y + 2 * y + 2)) / y**3
    if x > 0:
        return (p0, p0 - p1, p0 - 2 * p1 + p2)[k]
    return (p0, p1, p2)[k]


def exp_integral(rho, t1, degree=0):
    """Closed form of ``int_0^t1 t**degree * exp(rho * t) dt``.

    For ``degree == 0`` and ``|rho| <= RATE_ZERO_TOL`` the two-term Taylor
    branch ``t1 + rho t1^2 / 2`` is used.
    """
    if t1 <= 0:
        raise NonPositiveHorizon(f"t1 must be positive, got {t1}")
    if isinstance(rho, mpmath.mpf) or isinstance(t1, mpmath.mpf):
        x = rho * t1
        return t1 ** (degree + 1) * _damped_moment_mp(degree, x) * mpmath.exp(max(x, 0))
    rho, t1 = float(rho), float(t1)
    if degree == 0 and abs(rho) <= RATE_ZERO_TOL:
        return t1 + rho * t1 * t1 / 2.0
    x = rho * t1
    return float(t1 ** (degree + 1) * _damped_moment(degree, x) * math.exp(max(x, 0.0)))


def _pair_table(a: ExponentialSum, b: ExponentialSum, t1, dps):
    """Mantissas and log-exponents of all term-pair integrals."""
    if dps is None:
        rho = a.rates[:, None] + b.rates[None, :]
        k = a.degrees[:, None] + b.degrees[None, :]
        x = rho * t1
        mant = (a.coefs[:, None] * b.coefs[None, :]) * t1 ** (k + 1) * _damped_moment(k, x)
        expo = a.logs[:, None] + b.logs[None, :] + np.maximum(x, 0.0)
        return mant.ravel(), expo.ravel()
    mant, expo = [], []
    for ca, ra, da, sa in zip(a.coefs, a.rates, a.degrees, a.logs):
        for cb, rb, db, sb in zip(b.coefs, b.rates, b.degrees, b.logs):
            k = int(da + db)
            x = (ra + rb) * t1
            mant.append(ca * cb * t1 ** (k + 1) * _damped_moment_mp(k, x))
            expo.append(sa + sb + (x if x > 0 else 0))
    return mant, expo


def log_inner_product(a: ExponentialSum, b: ExponentialSum, t1):
    """Inner product on [0, t1] as ``(mantissa, log_scale)``.

    The value equals ``mantissa * exp(log_scale)``.  For an empty product the
    mantissa is zero and the log-scale is ``-inf``.
    """
    if t1 <= 0:
        raise NonPositiveHorizon(f"t1 must be positive, got {t1}")
    a, b, dps = _common(a, b)
    if a.is_empty or b.is_empty:
        return (0.0 if dps is None else mpmath.mpf(0)), -math.inf
    with nm.working(dps):
        t1 = float(t1) if dps is None else mpmath.mpf(t1)
        mant, expo = _pair_table(a, b, t1, dps)
        if dps is None:
            top = float(np.max(expo))
            return float(np.sum(mant * np.exp(expo - top))), top
        top = max(expo)
        return mpmath.fsum(m * mpmath.exp(e - top) for m, e in zip(mant, expo)), top


def inner_product(a: ExponentialSum, b: ExponentialSum, t1):
    """L2 inner product of two sums on [0, t1] in closed form."""
    mant, top = log_inner_product(a, b, t1)
    if mant == 0:
        return mant
    if isinstance(mant, mpmath.mpf):
        with mpmath.workdps(nm.merge_dps(a.dps, b.dps)):
            return mant * mpmath.exp(top)
    return mant * math.exp(top)


def l2_norm(es: ExponentialSum, t1):
    """L2 norm on [0, t1]; rounding noise below zero is clipped."""
    mant, top = log_inner_product(es, es, t1)
    if mant <= 0:
        return mant * 0
    if isinstance(mant, mpmath.mpf):
        with mpmath.workdps(es.dps):
            return mpmath.sqrt(mant) * mpmath.exp(top / 2)
    return math.sqrt(mant) * math.exp(top / 2)


def duhamel_kernel(lam, t, degree=0, dps=None) -> ExponentialSum:
    """The function ``tau -> (t - tau)**degree * exp(lam * (t - tau))``.

    Its inner product with a control u over [0, t] is the Duhamel integral
    of u against the scalar mode with eigenvalue ``lam``.
    """
    with nm.working(dps):
        if dps is not None:
            lam, t = mpmath.mpf(lam), mpmath.mpf(t)
        else:
            lam, t = float(lam), float(t)
        if degree == 0:
            return ExponentialSum.from_terms([(1, -lam, 0, lam * t)], dps=dps)
        if degree == 1:
            return ExponentialSum.from_terms([(t, -lam, 0, lam * t), (-1, -lam, 1, lam * t)], dps=dps)
    raise ValueError("degree must be 0 or 1")


# -- independent quadrature oracle --------------------------------------------

_GL_COARSE = np.polynomial.legendre.leggauss(10)
_GL_FINE = np.polynomial.legendre.leggauss(21)
_GL_NODES = np.concatenate([_GL_COARSE[0], _GL_FINE[0]])


def quadrature_inner_product(a: ExponentialSum, b: ExponentialSum, t1, abs_tol=1e-12,
                             max_panels=20000) -> float:
    """Adaptive Gauss-Legendre integral of ``a(t) * b(t)`` over [0, t1].

    Each panel is accepted when the 10- and 21-point rules agree to within
    its share of ``abs_tol``; otherwise it is bisected.  Only pointwise
    evaluation is used, so this is independent of the closed forms.
    """
    if t1 <= 0:
        raise NonPositiveHorizon(f"t1 must be positive, got {t1}")
    a = a.with_precision(None)
    b = b.with_precision(None)
    n_coarse = len(_GL_COARSE[0])
    stack = [(0.0, float(t1))]
    accepted = []
    panels = 0
    while stack:
        lo, hi = stack.pop()
        panels += 1
        if panels > max_panels:
            raise ToleranceNotReached(f"quadrature exceeded {max_panels} panels at abs_tol={abs_tol}")
        half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
        t = mid + half * _GL_NODES
        f = evaluate(a, t) * evaluate(b, t)
        coarse = half * np.dot(_GL_COARSE[1], f[:n_coarse])
        fine = half * np.dot(_GL_FINE[1], f[n_coarse:])
        if abs(fine - coarse) <= abs_tol * (hi - lo) / t1 or hi - lo < 1e-14 * t1:
            accepted.append(fine)
        else:
            stack.append((mid, hi))
            stack.append((lo, mid))
    return math.fsum(accepted)
