"""Turn the reduced Kohn cloak into a stack of isotropic fluid layers.

Prints the sublayer densities of the two published designs, checks that the
anisotropic target is realizable across the shell (arithmetic mean of the
radial density above the tangential one), and shows the uniform fluid that
could replace the rigid core.
"""
import numpy as np

from acloak import layers

r = np.linspace(0.2, 0.4, 2001)
for r0 in (0.05, 0.15):
    stack = layers.build_stack(layers.DesignSpec(r0, 0.2, 0.4, M=10, N=2, gauge="reduced"))
    lo, hi = layers.stack_extremes(stack)
    print(f"r0 = {r0}: {len(stack)} sublayers, kappa = {stack.layers[0].kappa:.6f}, "
          f"rho in [{lo:.4f}, {hi:.4f}]")
    for lay in stack.layers[:4]:
        print(f"    {lay.r_in:.3f}-{lay.r_out:.3f} m  rho {lay.rho:.4f}")
    rho_r, rho_t, _ = layers.reduced_shell_profile(r0, 0.2, 0.4)(r)
    print(f"    smallest rho_r - rho_t over the shell: {np.min(rho_r - rho_t):.4f}")

rho_c, kappa_c = layers.core_equivalent(0.15, 0.2, "reduced")
print(f"fluid core equivalent for r0 = 0.15: rho = {rho_c:.4f}, kappa = {kappa_c:.4f}")
