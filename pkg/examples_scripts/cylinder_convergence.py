"""Grid convergence of the 2D finite-difference solver on a rigid cylinder.

The scattered field on a probe circle is compared with the cylindrical
Bessel-series solution; the error should drop by about 4x per refinement.
"""
import time

import numpy as np

from acloak import fdfd, mie

lam, a, rp = 0.3, 0.5, 0.8
k = 2 * np.pi / lam
phi = np.linspace(0, 2 * np.pi, 360, endpoint=False)
ref = mie.rigid_cylinder_scattered(k, a, rp, phi)
previous = None
for cpw in (10, 20, 40, 80):
    t0 = time.perf_counter()
    h = lam / cpw
    grid = fdfd.GridSpec.centered(int(np.ceil(1.0 / h)) * h, h, 2, pml_cells=10)
    op = fdfd.assemble(grid, None, fdfd.PMLSpec(10), k, rigid=fdfd.sphere_levelset(a))
    sol = fdfd.scattered_field_solve(op, fdfd.SourceSpec("plane", lam, direction=(1.0, 0.0)),
                                     tol=1e-8, preconditioner="lu")
    num = fdfd.interpolate(grid, sol.p, rp * np.stack([np.cos(phi), np.sin(phi)], -1))
    err = np.linalg.norm(num - ref) / np.linalg.norm(ref)
    order = "" if previous is None else f"  order {np.log2(previous / err):.2f}"
    print(f"{cpw:3d} cells/lambda, grid {grid.n}: L2 error {err:.4f}{order}  "
          f"({time.perf_counter() - t0:.1f} s)")
    previous = err
