"""Gridded lat-lon output: plain-text header plus float64 payload."""

import os

import numpy as np

FORMAT_LINE = "dynacore-grid 1"


class OutputFormatError(RuntimeError):
    pass


def _normalise(fields):
    out = {}
    for name, arr in fields.items():
        a = np.asarray(arr, dtype=float)
        if a.ndim == 2:
            a = a[..., None]
        if a.ndim != 3:
            raise ValueError(f"field {name!r} must be (nlat, nlon[, L])")
        out[name] = a
    return out


def write_gridded(path, fields, step=0, time=0.0):
    """One file per output time; payload is little-endian float64.

    fields: {name: (nlat, nlon) or (nlat, nlon, levels) array}, all on
    the same grid.  Levels are stored slowest-varying, rows south to
    north.
    """
    fields = _normalise(fields)
    shapes = {a.shape[:2] for a in fields.values()}
    if len(shapes) != 1:
        raise ValueError("fields are not on a common grid")
    nlat, nlon = shapes.pop()
    lines = [FORMAT_LINE, f"step {step}", f"time {time!r}",
             f"nlat {nlat}", f"nlon {nlon}"]
    for name, a in fields.items():
        lines.append(f"field {name} {a.shape[2]}")
    lines.append("data")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for a in fields.values():
            fh.write(np.ascontiguousarray(
                np.moveaxis(a, 2, 0), dtype="<f8").tobytes())


def read_gridded(path):
    """Returns (fields dict, info dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head, sep, payload = raw.partition(b"\ndata\n")
    if not sep:
        raise OutputFormatError("missing data marker")
    lines = head.decode("ascii").splitlines()
    if lines[0] != FORMAT_LINE:
        raise OutputFormatError("unrecognised format line")
    info = {}
    names = []
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "field":
            name, levels = rest.rsplit(" ", 1)
            names.append((name, int(levels)))
        elif key in ("step", "nlat", "nlon"):
            info[key] = int(rest)
        elif key == "time":
            info[key] = float(rest)
        else:
            raise OutputFormatError(f"unknown header line {line!r}")
    nlat, nlon = info["nlat"], info["nlon"]
    total = sum(levels for _, levels in names) * nlat * nlon
    if total * 8 != len(payload):
        raise OutputFormatError("payload size mismatch")
    fields = {}
    offset = 0
    for name, levels in names:
        count = levels * nlat * nlon
        block = np.frombuffer(payload, dtype="<f8", count=count,
                              offset=offset * 8)
        offset += count
        fields[name] = np.moveaxis(
            block.reshape(levels, nlat, nlon), 0, 2).copy()
    if offset * 8 != len(payload):
        raise OutputFormatError("payload size mismatch")
    return fields, info


def write_csv_slices(directory, fields, step=0):
    """Human-readable per-level CSV matrices (rows = latitude)."""
    fields = _normalise(fields)
    paths = []
    for name, a in fields.items():
        for k in range(a.shape[2]):
            path = os.path.join(
                directory, f"{name}_step{step:06d}_level{k:03d}.csv")
            np.savetxt(path, a[..., k], delimiter=",", fmt="%.12e")
            paths.append(path)
    return paths
