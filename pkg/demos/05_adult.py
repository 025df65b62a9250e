"""Census income: a plain autoencoder against an MMD-regularized one.

Needs data/adult.csv (see demos/prepare_adult.py).  Runs both trainings
through the command-line entry point, about a minute each.

Run: python demos/05_adult.py [ADULT_CSV]
"""

import contextlib
import io
import json
import pathlib
import sys
import tempfile

from fairbound.cli import main

csv_path = sys.argv[1] if len(sys.argv) > 1 else str(pathlib.Path(__file__).parent.parent / "data" / "adult.csv")
out = pathlib.Path(tempfile.mkdtemp(prefix="fairbound-adult-"))

for name, extra in [("no penalty", ["--no-regulate", "--lambda-init", "0"]), ("mmd penalty", [])]:
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(["train", csv_path, "--schema", "adult", "--out-dir", str(out / name.replace(" ", "_")), *extra])
    if code:
        sys.exit(code)
    doc = json.loads(buf.getvalue())
    est, m, g = doc["estimates"]["income"], doc["metrics"]["income"], doc["guarantees"]["income"]
    print(f"{name}: adversary BA {est['adversary_ba']:.3f}, task BA {est['task_ba']:.3f}")
    for k in ("sp", "dopp", "dr", "dodds", "dpc", "dnc", "dc"):
        bound = g[k] if isinstance(g, dict) else float("nan")
        print(f"  {k:6s} measured {m[k]:.3f}  guaranteed <= {bound:.3f}")
print("artifacts under", out)
