#!/usr/bin/env python3
"""Rebuild data/uci/*.csv from the archives they were extracted from.

    python3 scripts/prepare_uci.py --boston-wheel scikit_learn-1.1.3-*.whl \
        --wine-gz linfa-datasets-0.8.1/data/winequality-red.csv.gz

Both inputs are public redistributions of the UCI files. The outputs are
plain comma-separated files with a header row and the response last.
"""
import argparse
import csv
import gzip
import hashlib
import io
import pathlib
import zipfile

OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "uci"


def write(name, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    data = buf.getvalue().encode()
    (OUT / name).write_bytes(data)
    print(hashlib.sha256(data).hexdigest(), name)


def boston(wheel):
    raw = zipfile.ZipFile(wheel).read("sklearn/datasets/data/boston_house_prices.csv").decode()
    lines = list(csv.reader(io.StringIO(raw)))
    header, rows = lines[1], [r for r in lines[2:] if r]
    assert len(rows) == 506 and len(header) == 14
    write("boston.csv", header, rows)


def wine(gz):
    lines = list(csv.reader(io.StringIO(gzip.open(gz, "rt").read())))
    header = [h.replace(" ", "_") for h in lines[0]]
    rows = [r for r in lines[1:] if r]
    assert len(rows) == 1599 and len(header) == 12
    write("wine_red.csv", header, rows)


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--boston-wheel", required=True)
    p.add_argument("--wine-gz", required=True)
    a = p.parse_args()
    OUT.mkdir(parents=True, exist_ok=True)
    boston(a.boston_wheel)
    wine(a.wine_gz)
