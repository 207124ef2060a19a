"""Versioned binary checkpoints for bitwise-exact restarts.

Layout (all little-endian):
    8s   magic  b"DYNCORE\\0"
    u4   format version (currently 1)
    i4   horizontal cells per panel edge (n)
    i4   layers (m)
    i8   step index
    f8   model time [s]
    f8 x 6  a, omega, g, R, cp, p0
    f8 arrays: u (n_w2), rho (n_w3), theta (n_wtheta), Pi (n_w3)
"""

import struct

import numpy as np

from .timestepper import StateVector

MAGIC = b"DYNCORE\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIiiqd6d")


class CheckpointError(RuntimeError):
    pass


def write_checkpoint(path, state, mesh, constants, step=0, time=0.0):
    c = constants
    header = _HEADER.pack(MAGIC, VERSION, mesh.n, mesh.m, step, time,
                          c.a, c.omega, c.g, c.R, c.cp, c.p0)
    with open(path, "wb") as fh:
        fh.write(header)
        for v in (state.u, state.rho, state.theta, state.Pi):
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_checkpoint(path, mesh=None, constants=None):
    """Returns (state, info dict).  Optionally validates mesh/constants."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise CheckpointError("truncated checkpoint header")
        (magic, version, n, m, step, time,
         a, omega, g, R, cp, p0) = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise CheckpointError("not a checkpoint file")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        if mesh is not None and (n != mesh.n or m != mesh.m):
            raise CheckpointError(
                f"checkpoint mesh C{n}L{m} does not match C{mesh.n}L{mesh.m}")
        if constants is not None and (a, omega, g, R, cp, p0) != (
                constants.a, constants.omega, constants.g,
                constants.R, constants.cp, constants.p0):
            raise CheckpointError("checkpoint constants differ")
        # dof counts follow from (n, m) alone
        ncol = 6 * n * n
        n_w3 = ncol * m
        n_wtheta = ncol * (m + 1)
        n_w2 = 2 * ncol * m + n_wtheta   # each column owns two side faces
        sizes = (n_w2, n_w3, n_wtheta, n_w3)
        fields = []
        for size in sizes:
            buf = fh.read(8 * size)
            if len(buf) != 8 * size:
                raise CheckpointError("truncated checkpoint payload")
            fields.append(np.frombuffer(buf, dtype="<f8").copy())
        if fh.read(1):
            raise CheckpointError("trailing bytes in checkpoint")
    state = StateVector(*fields)
    info = {"step": step, "time": time, "n": n, "m": m,
            "a": a, "omega": omega, "g": g, "R": R, "cp": cp, "p0": p0}
    return state, info
