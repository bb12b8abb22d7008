"""Layered cloaks around a rigid sphere, solved with the partial-wave series.

A Kohn cloak with r0 > 0 makes the rigid core scatter like a smaller rigid
sphere of radius r0.  As r0 shrinks the cloak approaches invisibility.
"""
import numpy as np

from acloak import layers, mie

k = 2 * np.pi / 0.25
small = mie.rigid_sphere_scatter(0.15, k).sigma_sc
bare = mie.rigid_sphere_scatter(0.2, k).sigma_sc
print(f"lambda = 0.25 m: bare core sigma {bare:.5f}, rigid r0 = 0.15 sphere {small:.5f}")
for M in (5, 10, 40, 200):
    stack = layers.build_stack(layers.DesignSpec(0.15, 0.2, 0.4, M=M, gauge="exact"))
    s = mie.layered_scatter(stack, k).sigma_sc
    print(f"    M = {M:3d}: cloaked sigma {s:.5f}  ({s / small - 1:+.2%} from r0 sphere)")

k = 2 * np.pi / 0.3
bare = mie.rigid_sphere_scatter(0.5, k).sigma_sc
print(f"lambda = 0.3 m, core radius 0.5 m: bare sigma {bare:.4f}")
for r0 in (0.2, 0.05, 0.005):
    stack = layers.build_stack(layers.DesignSpec(r0, 0.5, 1.0, M=200, gauge="exact"))
    s = mie.layered_scatter(stack, k).sigma_sc
    print(f"    r0 = {r0:5.3f}: sigma {s:.5f}, reduction {bare / s:7.1f}x")
