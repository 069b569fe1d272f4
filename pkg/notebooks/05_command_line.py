"""
Batch runs from the command line
================================

The same pipeline through the ``dealflow`` command. Each run writes a
manifest next to its output recording the resolved configuration and seed.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

work = Path(tempfile.mkdtemp(prefix="dealflow-"))


def dealflow(*args):
    cmd = [sys.executable, "-m", "dealflow", *map(str, args)]
    print("$ dealflow", " ".join(map(str, args)))
    done = subprocess.run(cmd, capture_output=True, text=True)
    print(done.stdout[:300] + done.stderr, end="")
    return done.returncode


# %%
dealflow("simulate", "--n-deals", 1000, "--seed", 1,
         "--out", work / "traces.csv", "--attrs-out", work / "attrs.json")
print(json.loads((work / "traces.csv.manifest.json").read_text())["config"]["rate"])

# %%
(work / "long.json").write_text(json.dumps({"lifetime": 48.0, "seed": 2}))
dealflow("simulate", "--config", work / "long.json", "--n-deals", 1000,
         "--out", work / "long.csv", "--attrs-out", work / "long_attrs.json")
dealflow("fit", "--traces", work / "long.csv", "--attrs", work / "long_attrs.json", "--out", work / "fit.json")
print(json.dumps(json.loads((work / "fit.json").read_text())["renewal"], indent=1))

# %%
dealflow("train", "--traces", work / "traces.csv", "--attrs", work / "attrs.json",
         "--predictors", "sp,mlr,b2", "--horizons", "1..23", "--out", work / "models.json")
dealflow("predict", "--models", work / "models.json", "--trace-prefix", work / "traces.csv",
         "--attrs", work / "attrs.json", "--t1", 12, "--policy", "groupon")

# %%
(work / "eval.json").write_text(json.dumps({"horizons": [4, 8, 12, 16, 20]}))
dealflow("evaluate", "--traces", work / "traces.csv", "--attrs", work / "attrs.json",
         "--config", work / "eval.json", "--out", work / "report.csv")
print((work / "report.csv").read_text())
