"""Compare strong-minimality evidence for a few exponent families.

For each family the Gram spectrum over growing sections, the Dirichlet
abscissa estimate and the gap certificate are printed side by side.

Run: python3 demos/minimality_survey.py
"""

from __future__ import annotations

import numpy as np

from mcontrol import (
    ExponentialSum,
    dirichlet_abscissa,
    gap_certificate,
    strong_minimality_diagnostic,
)
from mcontrol.minimality import KernelFamily

N = 10
families = {
    "squares -n^2": -np.arange(1, N + 1, dtype=float) ** 2,
    "linear -n": -np.arange(1, N + 1, dtype=float),
    "dense -n/4": -np.arange(1, N + 1, dtype=float) / 4,
}

for name, lam in families.items():
    kernels = tuple(ExponentialSum.from_terms([(1.0, -x)]) for x in lam)
    fam = KernelFamily(kernels, tuple(f"g{i}" for i in range(N)), lam, np.zeros(N), 1.0, False)
    gram = strong_minimality_diagnostic(fam, n_max=N)
    cert = gap_certificate(lam, rho=0.5)
    sigma = dirichlet_abscissa(np.exp(lam), lam).limit
    print(f"{name:>14}: lambda_1 {gram.lambda1_seq[-1]:.3e}  verdict {gram.verdict.value:<26}"
          f" certificate {cert.all_ok!s:<5}  abscissa {sigma:.3f}")
