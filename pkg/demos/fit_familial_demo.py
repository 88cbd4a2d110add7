"""
Fitting the family loss law to IsoFLOP run records
==================================================

Loads the bundled synthetic run records (60 observations over three compute
budgets, five model sizes, and granularities 1..4, with 0.5% lognormal
measurement noise), fits L(N, D, G) = (E + A/N^alpha + B/D^beta) * G^gamma
with the robust log-domain procedure, and compares the fit against the
coefficients that generated the data.

Run from the repository root:

    python demos/fit_familial_demo.py
"""

from pathlib import Path

import numpy as np

import famscale as fs

HERE = Path(__file__).parent
OUT = HERE / "out"
OUT.mkdir(exist_ok=True)

# The coefficients the bundled data was generated from.
TRUE = fs.FamilialParams(E=1.0059, A=403.4289, B=2980.058, alpha=0.2982,
                         beta=0.3412, gamma=0.0333)

# ---------------------------------------------------------------------------
# 1. Load the bundled records
# ---------------------------------------------------------------------------
records = fs.load_runs((HERE / "data" / "runs_synthetic.csv").read_bytes(), "csv")
print(f"loaded {len(records)} run records")
print(f"  budgets:       {sorted({r.flops_group for r in records})}")
print(f"  granularities: {sorted({r.granularity for r in records})}")

# ---------------------------------------------------------------------------
# 2. Fit (a reduced start cap keeps the demo quick; drop max_starts for the
#    full 2000-start production setting)
# ---------------------------------------------------------------------------
config = fs.FitConfig(max_starts=300, seed=0)
report = fs.fit(records, config)
p = report.best

print("\nfitted coefficients (true values in parentheses):")
print(f"  E     = {p.E:9.4f}   ({TRUE.E})")
print(f"  A     = {p.A:9.3f}   ({TRUE.A})")
print(f"  alpha = {p.alpha:9.4f}   ({TRUE.alpha})")
print(f"  B     = {p.B:9.3f}   ({TRUE.B})")
print(f"  beta  = {p.beta:9.4f}   ({TRUE.beta})")
print(f"  gamma = {p.gamma:9.4f}   ({TRUE.gamma})")
print(f"  objective = {report.best_objective:.3e}  "
      f"(boundary hits: {sum(report.boundary_hit.values())})")

# ---------------------------------------------------------------------------
# 3. Held-out comparison on a grid the fit never saw
# ---------------------------------------------------------------------------
errs = []
for n in np.logspace(8.2, 9.8, 5):
    for d in np.logspace(9.5, 11.5, 5):
        for g in (1, 2, 3, 4):
            pred = fs.predict_loss(p, n, d, g)
            true = fs.predict_loss(TRUE, n, d, g)
            errs.append(abs(pred - true) / true)
print(f"\nheld-out relative error: max {max(errs):.2e}, mean {np.mean(errs):.2e}")

# ---------------------------------------------------------------------------
# 4. Emit plot-ready loss surfaces, one CSV per granularity
#    (columns: n_params, tokens, loss; both axes log-spaced)
# ---------------------------------------------------------------------------
for g in (1, 2, 3, 4):
    rows = fs.loss_surface(p, g, (1e8, 1e10), (1e9, 1e12), points_per_axis=30)
    path = OUT / f"loss_surface_g{g}.csv"
    with path.open("w") as fh:
        fh.write("n_params,tokens,loss\n")
        for n, d, loss in rows:
            fh.write(f"{n:.17g},{d:.17g},{loss:.17g}\n")
print(f"\nwrote loss surfaces for G in 1..4 to {OUT}/loss_surface_g*.csv")
