"""Heat-ball quantities I(r) on the flat torus and the Euclidean mean-value check.

The two curves use the Li-Yau density of a two-source solution and the
entropy density of a single kernel. Both decrease in r and stay below the
pointwise value at the vertex.
"""
import numpy as np

from harnack_lab import heatball as hb
from harnack_lab.geometry import BackgroundSpec

torus = BackgroundSpec("flat_torus_static", n=2, T=1.0, sides=(1.0, 1.0), resolution=64)
c = np.array([0.5, 0.5])
x0, t0 = np.array([0.5, 0.55]), 0.1
kernel = hb.BackwardKernel(torus, x0, t0)

two_sources = hb.CaloricSum(torus, sources=[c + [-0.15, 0.0], c + [0.2, 0.1]], weights=[1.0, 0.7],
                            times=[-0.005, -0.005], constant=1e-3)
one_source = hb.CaloricSum(torus, sources=[c + [0.3, 0.2]], weights=[1.0], times=[0.0])
radii = hb.geometric_radii(0.08, 0.8, 8)

for Q in (hb.li_yau_density_model(two_sources), hb.entropy_density_model(one_source)):
    curve = hb.monotonicity_curve(kernel, Q, radii)
    print(f"\n{curve.quantity}: value at the vertex {curve.center_value:.6g}")
    print("       r            P(r)           I(r)          dI/dr")
    for r, P, I, d in zip(curve.radii, curve.P, curve.I, curve.dI_dr):
        print(f"  {r:9.4f}  {P:14.6e}  {I:14.6e}  {d:+12.4e}")
    print(f"  nonincreasing: {curve.monotone('nonincreasing')}   below the vertex value: {curve.lower_bound_holds}")

# on the plane a caloric function has I(r) = u(x0, t0) for every r
plane = BackgroundSpec("euclidean_static", n=2, T=1.0, sides=(8.0, 8.0), resolution=32)
u = hb.CaloricSum(plane, sources=[[0.3, 0.1]], weights=[1.0], times=[0.0])
rep = hb.watson_mean_value_check([0.1, -0.2], 1.0, u, hb.geometric_radii(0.1, 1.0, 6))
print(f"\nmean value on the plane: max relative deviation {rep.deviation.max():.2e} ({rep.verdict})")
