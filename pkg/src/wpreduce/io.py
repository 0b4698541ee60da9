"""CSV and event-log output shared by all modules.

Every file has a single header line.  Floats are written with ``repr`` so
they read back bit-identically and never depend on the locale.
"""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np

from ._validation import PreconditionError
from .grid import PhaseSpaceLattice

EVENT_COLUMNS = ("walker_id", "jump_index", "t", "x", "p")
LATTICE_COLUMNS = ("level", "source", "t", "x", "p", "value")


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows):
    """Write ``rows`` (iterables matching ``columns``) with a one-line header."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            row = list(row)
            if len(row) != len(columns):
                raise PreconditionError(f"row has {len(row)} fields, header has {len(columns)}")
            w.writerow([format_value(v) for v in row])
    return path


def _parse(s):
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_csv(path):
    """Return ``(columns, rows)`` with numeric fields parsed."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        try:
            header = next(r)
        except StopIteration:
            raise PreconditionError(f"{path} is empty") from None
        return tuple(header), [[_parse(v) for v in row] for row in r]


def lattice_rows(lattice, level="fine", source="", t=None):
    t = lattice.meta.get("t", 0.0) if t is None else t
    for i, x in enumerate(lattice.x_nodes):
        for j, p in enumerate(lattice.p_nodes):
            yield level, source, float(t), float(x), float(p), float(lattice.values[i, j])


def write_lattices(path, items):
    """``items`` are ``(lattice, level, source)`` triples, written in order."""
    def rows():
        for lat, level, source in items:
            yield from lattice_rows(lat, level, source)

    return write_csv(path, LATTICE_COLUMNS, rows())


def read_lattices(path, weight=1.0):
    """Rebuild lattices keyed by ``(level, source, t)``."""
    cols, rows = read_csv(path)
    if cols != LATTICE_COLUMNS:
        raise PreconditionError(f"{path} is not a lattice file")
    groups = {}
    for level, source, t, x, p, v in rows:
        groups.setdefault((str(level), str(source), float(t)), []).append((float(x), float(p), float(v)))
    out = {}
    for key, pts in groups.items():
        xs = np.array(sorted({a for a, _, _ in pts}))
        ps = np.array(sorted({b for _, b, _ in pts}))
        vals = np.zeros((len(xs), len(ps)))
        xi = {v: i for i, v in enumerate(xs)}
        pi = {v: i for i, v in enumerate(ps)}
        for a, b, v in pts:
            vals[xi[a], pi[b]] = v
        out[key] = PhaseSpaceLattice(xs, ps, vals, weight, {"t": key[2], "level": key[0]})
    return out


def write_events(path, walkers):
    """Walker histories as ``walker_id, jump_index, t, x, p`` lines."""
    def rows():
        for w in walkers:
            for k, (t, x, p) in enumerate(zip(w.times, w.xs, w.ps)):
                yield w.index, k, t, x, p

    return write_csv(path, EVENT_COLUMNS, rows())


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
