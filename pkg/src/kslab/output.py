"""Deterministic text output: CSV tables and verification reports.

All floats are printed with 17 significant digits so that identical runs
produce byte-identical files and values round-trip through text exactly.
"""

import os

import numpy as np


def fmt(x) -> str:
    """Format a float with 17 significant digits."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.16e}"


def write_csv(path, columns):
    """Write a CSV file from an ordered mapping name -> 1-d array."""
    names = list(columns)
    arrays = [np.asarray(columns[k], dtype=float) for k in names]
    n = len(arrays[0])
    for name, arr in zip(names, arrays):
        if len(arr) != n:
            raise ValueError(f"column {name!r} has length {len(arr)} != {n}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(n):
            fh.write(",".join(fmt(a[i]) for a in arrays) + "\n")


def write_report(path, rows):
    """Write `name,value,target,tol,status` lines; return True if all passed.

    Each row is (name, value, target, tol); status is PASS when
    |value - target| <= tol.
    """
    ok = True
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write("name,value,target,tol,status\n")
        for name, value, target, tol in rows:
            passed = abs(value - target) <= tol
            ok = ok and passed
            status = "PASS" if passed else "FAIL"
            fh.write(f"{name},{fmt(value)},{fmt(target)},{fmt(tol)},{status}\n")
    return ok
