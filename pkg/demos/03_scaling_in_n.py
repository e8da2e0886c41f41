"""How the Newton-step error decays with n, measured against exact retraining.

A small version of the full sweep: four sample sizes, a dozen trials each.
The report lands in ./scaling_demo/.
"""
import dropkit as dk
from dropkit.scalinglab import default_workers

spec = dk.SweepSpec(
    n_grid=(2000, 4000, 8000, 16000),
    d_grid=(8,),
    k_grid=(4,),
    trials_per_cell=12,
    base_seed=42,
)
records = dk.run_sweep(spec, workers=default_workers())

fits = [dk.fit_scaling(records, "n", pair) for pair in ("ns_exact", "if_exact", "if_ns", "drif_ns")]
for f in fits:
    print(f"{f.pair:15s} ~ n^{f.slope:+.2f}  (95% CI ±{f.ci_halfwidth:.2f}, r^2 {f.r_squared:.3f})")

paths = dk.emit_report(records, fits, "scaling_demo")
print("wrote", ", ".join(str(p) for p in paths))
