"""Grid convergence of the entropy identity dW/dtau + D = 0 on the unit torus.

The relative residual should fall by about four per grid doubling.
"""
from harnack_lab import harness

base = {"background": {"kind": "flat_torus_static", "T": 0.3}, "suites": ["identities"]}
prev = None
print("   N   residual (h = 1)   ratio")
for res in (32, 64, 128, 256):
    cfg = harness.ExperimentConfig.from_dict(dict(base, resolution=res))
    rows = {r["quantity"]: r for r in harness.run_experiment(cfg, write=False).rows["identities"]}
    err = rows["entropy_identity_rel_h1"]["value_max"]
    ratio = "" if prev is None else f"{prev / err:6.2f}"
    print(f"{res:4d}   {err:.4e}        {ratio}")
    prev = err
