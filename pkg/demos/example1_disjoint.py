"""Steer the Y component of the disjoint-spectrum example to zero.

Y modes have eigenvalues 1 - m^2, Z modes -m^2, the coupling is the identity
and the control acts through b_Y = sqrt(2/pi) * pi * (-1)^(m-1) / m.

Run: python3 demos/example1_disjoint.py
"""

from __future__ import annotations

import numpy as np

from mcontrol import (
    classify_spectra,
    eigenstructure,
    kernel_family,
    moment_targets,
    preset_problem,
    synthesize_control,
    verify_partial_null,
)

problem = preset_problem("example1", modes=16)
model = problem.build_model()
part = classify_spectra(model)
eig = eigenstructure(model, part)
fam = kernel_family(model, eig, part)
targets = moment_targets(model, eig, part, problem.x0)

print(f"{'n_synth':>7} {'||u||':>12} {'max residual':>13} {'spillover':>11}")
for n in (2, 4, 6, 8):
    sol = synthesize_control(targets, fam, n=n)
    rep = verify_partial_null(model, eig, part, problem.x0, sol, n_verify=16)
    print(f"{n:7d} {sol.l2_norm:12.5e} {np.max(sol.residuals):13.3e} {rep.spillover:11.3e}")

sol = synthesize_control(targets, fam, n=8)
rep = verify_partial_null(model, eig, part, problem.x0, sol, n_verify=16)
print("\nmode  uncontrolled  controlled")
for j in range(8):
    print(f"{j + 1:4d}  {rep.uncontrolled.y_coords[j]:12.4e}  {rep.controlled.y_coords[j]:10.2e}")
print(f"\nverdict: {rep.verdict}")
