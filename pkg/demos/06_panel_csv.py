"""Reading and writing the long-format panel CSV.

Run with ``python3 demos/06_panel_csv.py``.
"""
import tempfile
from pathlib import Path

from epifit import PanelValidationError, SyntheticSpec, generate_synthetic, load_csv, scale_population, write_csv

panel, _, _ = generate_synthetic(SyntheticSpec(seed=2, n_states=3, t_years=4))
folder = Path(tempfile.mkdtemp())
path = folder / "panel.csv"
write_csv(panel, path)
print(path.read_text().splitlines()[:4])
assert load_csv(path) == panel

# counts per 100,000 rescaled to per million and back
per_million = scale_population(panel, 1e6)
print("incidence per 1e5 vs per 1e6:", panel.incidence[0, 0, 0], per_million.incidence[0, 0, 0])

# every problem in a malformed file is reported at once
bad = folder / "bad.csv"
bad.write_text("region,year,age_group,incidence,prevalence,deaths\n"
               "A,2000,juvenile,-4,0.01,1\nA,2000,adult,1,0.01,1\nA,2000,infant,1,0.01,1\n")
try:
    load_csv(bad)
except PanelValidationError as err:
    print("\n".join(err.problems))
