"""Convert the UCI census income files into one headed CSV.

Usage: python demos/prepare_adult.py ADULT_DIR [OUT_CSV]

ADULT_DIR must hold ``adult.data`` and ``adult.test`` as distributed by the
UCI repository (they are not downloaded here).  Train and test rows are
concatenated, rows with a missing field (``?``) are dropped, and the trailing
period on test-set labels is removed.  The output matches
``fairbound.data.adult_schema()``.
"""

import csv
import pathlib
import sys

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]


def rows(path):
    with open(path, newline="") as fh:
        for rec in csv.reader(fh, skipinitialspace=True):
            if len(rec) != len(COLUMNS):
                continue  # blank lines and the test file's banner line
            rec = [v.strip() for v in rec]
            if "?" in rec:
                continue
            rec[-1] = rec[-1].rstrip(".")
            yield rec


def main(argv):
    if not argv:
        sys.exit(__doc__)
    src = pathlib.Path(argv[0])
    out = pathlib.Path(argv[1]) if len(argv) > 1 else pathlib.Path(__file__).parent.parent / "data" / "adult.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for name in ("adult.data", "adult.test"):
            for rec in rows(src / name):
                w.writerow(rec)
                n += 1
    print(f"wrote {n} rows to {out}")


if __name__ == "__main__":
    main(sys.argv[1:])
