"""Text artifacts: canonical-form files and CSV result tables.

Floats are written with 17 significant digits so that every value
round-trips exactly; files are replaced atomically.
"""
from __future__ import annotations

import numpy as np

from .basis import build_basis
from .errors import MapFormatError, MissingArtifactError
from .lindblad import CanonicalForm
from .propagator import _atomic_write

FORM_HEADER = "CANONICALFORM"

__all__ = ["save_canonical", "load_canonical", "format_value", "write_table", "read_table"]


def format_value(x) -> str:
    if isinstance(x, str):
        # tables are unquoted CSV
        return x.replace(",", ";")
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_table(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} values for {len(header)} columns")
        lines.append(",".join(format_value(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_table(path):
    """(header, float array) of a table written by :func:`write_table`."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise MissingArtifactError(path) from None
    header = lines[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:] if line])
    return header, data.reshape(-1, len(header))


def save_canonical(form: CanonicalForm, path) -> None:
    d = form.dim
    m = form.gammas.shape[1]
    dt = float(form.t_grid[1] - form.t_grid[0])
    lines = [f"{FORM_HEADER} d={d} dt={dt!r} n={form.n_steps} clipped={int(form.clipped)}"]
    for n in range(form.n_steps + 1):
        lines.append(f"t={n}")
        for r in range(d):
            for c in range(d):
                z = form.H[n, r, c]
                lines.append(f"H {r} {c} {z.real:.17g} {z.imag:.17g}")
        for k in range(m):
            lines.append(f"gamma {k} {form.gammas[n, k]:.17g}")
        for i in range(m):
            for k in range(m):
                z = form.unitary_tracks[n, i, k]
                lines.append(f"U {i} {k} {z.real:.17g} {z.imag:.17g}")
    _atomic_write(path, "\n".join(lines) + "\n")


def _header(line):
    parts = line.split()
    if not parts or parts[0] != FORM_HEADER:
        raise MapFormatError(f"expected header starting with {FORM_HEADER}", 1)
    fields = dict(p.partition("=")[::2] for p in parts[1:])
    try:
        return int(fields["d"]), float(fields["dt"]), int(fields["n"]), bool(int(fields["clipped"]))
    except (KeyError, ValueError) as exc:
        raise MapFormatError(f"bad or missing header field: {exc}", 1) from None


def load_canonical(path) -> CanonicalForm:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise MissingArtifactError(path) from None
    if not lines:
        raise MapFormatError("empty file", 1)
    d, dt, n_steps, clipped = _header(lines[0])
    m = d * d - 1
    H = np.zeros((n_steps + 1, d, d), dtype=complex)
    gammas = np.zeros((n_steps + 1, m))
    U = np.zeros((n_steps + 1, m, m), dtype=complex)
    block = 1 + d * d + m + m * m
    expected = 1 + (n_steps + 1) * block
    if len(lines) < expected:
        raise MapFormatError("file is truncated", len(lines) + 1)
    pos = 1
    for n in range(n_steps + 1):
        if lines[pos].strip() != f"t={n}":
            raise MapFormatError(f"expected 't={n}', got {lines[pos]!r}", pos + 1)
        pos += 1
        try:
            for _ in range(d * d):
                tag, r, c, re, im = lines[pos].split()
                if tag != "H":
                    raise ValueError(tag)
                H[n, int(r), int(c)] = complex(float(re), float(im))
                pos += 1
            for _ in range(m):
                tag, k, g = lines[pos].split()
                if tag != "gamma":
                    raise ValueError(tag)
                gammas[n, int(k)] = float(g)
                pos += 1
            for _ in range(m * m):
                tag, i, k, re, im = lines[pos].split()
                if tag != "U":
                    raise ValueError(tag)
                U[n, int(i), int(k)] = complex(float(re), float(im))
                pos += 1
        except (ValueError, IndexError):
            raise MapFormatError(f"malformed entry {lines[pos]!r}", pos + 1) from None
    basis = build_basis(d)
    ops = np.einsum("nik,iab->nkab", U, basis.ops[1:])
    t_grid = dt * np.arange(n_steps + 1)
    for a in (H, gammas, ops, U):
        a.setflags(write=False)
    return CanonicalForm(t_grid, H, gammas, ops, U, clipped)
