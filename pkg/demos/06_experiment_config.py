"""Drive experiments from INI files, as the command line does.

Writes two configs to a temporary folder, runs both and compares the CSVs.
The shell equivalent is ``fedsketch run a.ini`` then ``fedsketch compare``.
Run with ``python3 demos/06_experiment_config.py``.
"""

import json
import tempfile
from pathlib import Path

from fedsketch.harness import compare, parse_config, run_experiment

TEMPLATE = """
[problem]
family = quadratic
d = 100
n = 500
cond = 10

[fed]
p = 10
k = 5
R = 60
tau = 5
eta = 0.002
gamma = 5
b = 8
variant = {variant}

[sketch]
m = 50
t = 7
heavy_budget = 5
value_mode = estimate

[output]
name = {variant}
"""

folder = Path(tempfile.mkdtemp())
paths = {}
for variant in ("privix", "heaprix"):
    config_path = folder / f"{variant}.ini"
    config_path.write_text(TEMPLATE.format(variant=variant))
    result = run_experiment(parse_config(config_path), out_dir=folder)
    paths[variant] = result.csv_paths[0]
    summary = json.loads(result.summary_path.read_text())
    print(f"{variant}: omega {summary['analysis']['omega']:.2f}, step size ok {summary['stepsize_ok']}")

print(compare(paths["privix"], paths["heaprix"], target_loss=1.0).format())
print("outputs in", folder)
