#!/usr/bin/env python3
"""Rebuild data/adult.csv from the UCI Adult census files.

The raw `adult.data` / `adult.test` files are taken from the `responsibly`
wheel on PyPI, which ships an unmodified copy. Both files are concatenated,
whitespace is stripped, `?` (missing) becomes an empty cell, and the trailing
period on the test-set labels is removed.
"""
import csv
import pathlib
import subprocess
import sys
import tempfile
import zipfile

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num",
    "marital_status", "occupation", "relationship", "race", "sex",
    "capital_gain", "capital_loss", "hours_per_week", "native_country",
    "income",
]


def main() -> None:
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "adult.csv"
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "responsibly==0.1.2",
             "--no-deps", "-d", tmp],
            check=True,
        )
        wheel = next(pathlib.Path(tmp).glob("responsibly-*.whl"))
        with zipfile.ZipFile(wheel) as z:
            parts = [
                z.read("responsibly/dataset/adult/adult.data").decode(),
                z.read("responsibly/dataset/adult/adult.test").decode(),
            ]
    rows = []
    for text in parts:
        for line in text.splitlines():
            cells = [c.strip() for c in line.split(",")]
            if len(cells) != len(COLUMNS):
                continue
            cells = ["" if c == "?" else c for c in cells]
            cells[-1] = cells[-1].rstrip(".")
            rows.append(cells)
    with out.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {out}")


if __name__ == "__main__":
    main()
