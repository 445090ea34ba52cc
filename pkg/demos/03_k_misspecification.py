"""Effect of the filter rank on the null model (true k = 4).

Underestimating k inflates the model far above the observed spikes, which
keeps the test valid but destroys power. Overestimating it is mildly
conservative. Uses demos/configs/k_misspec.toml with 50 replicates (about 5 s).
"""

from __future__ import annotations

from pathlib import Path

from residualspike import load_table_spec, run_spec

spec = load_table_spec(Path(__file__).parent / "configs" / "k_misspec.toml", replicates=50)
result = run_spec(spec)
print(f"{'k_est':>5} {'model (mean, sd)':>20} {'empirical (mean, sd)':>22}")
for r in result.cells:
    (mm, ms), (em, es) = r.max_model, r.max_empirical
    print(f"{r.cell.k_est:5d}   ({mm:7.3f}, {ms:6.3f})     ({em:7.3f}, {es:6.3f})")
