"""NTKH parameter snapshots.

Layout (little-endian): magic ``b"NTKH"``, ``uint32`` version, ``uint32``
layer count ``L + 1``, ``L + 1`` ``uint32`` widths, ``float64`` beta,
``float64`` output scale, ``uint16`` length and UTF-8 bytes of the
nonlinearity name, then the ``P`` ``float64`` parameters.
"""

import struct
from pathlib import Path

import numpy as np

from ..activations import make_nonlin
from ..errors import ConfigError, IngestionError
from .net import Arch, NetParams

__all__ = ["MAGIC", "VERSION", "save_snapshot", "load_snapshot"]

MAGIC = b"NTKH"
VERSION = 1


def save_snapshot(path, params: NetParams) -> None:
    arch = params.arch
    name = arch.nl.id.encode()
    head = MAGIC + struct.pack("<II", VERSION, len(arch.widths))
    head += struct.pack(f"<{len(arch.widths)}I", *arch.widths)
    head += struct.pack("<ddH", arch.beta, arch.out_scale, len(name)) + name
    with open(path, "wb") as fh:
        fh.write(head + params.theta.astype("<f8").tobytes())


def load_snapshot(path) -> NetParams:
    """Read a snapshot written by :func:`save_snapshot`.

    Raises
    ------
    IngestionError
        On a bad magic, unsupported version or truncated file; the message
        names the byte offset.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    raw = path.read_bytes()

    def take(fmt, off, what):
        n = struct.calcsize(fmt)
        if len(raw) < off + n:
            raise IngestionError(f"{path}: truncated {what} at offset {off}")
        return struct.unpack_from(fmt, raw, off), off + n

    if raw[:4] != MAGIC:
        raise IngestionError(f"{path}: bad magic at offset 0")
    (ver, nw), off = take("<II", 4, "header")
    if ver != VERSION:
        raise IngestionError(f"{path}: unsupported version {ver} at offset 4")
    widths, off = take(f"<{nw}I", off, "widths")
    (beta, scale, ln), off = take("<ddH", off, "scalars")
    if len(raw) < off + ln:
        raise IngestionError(f"{path}: truncated nonlinearity name at offset {off}")
    name = raw[off : off + ln].decode()
    off += ln
    arch = Arch(tuple(widths), beta=beta, nl=make_nonlin(name), out_scale=scale)
    need = 8 * arch.P
    if len(raw) - off != need:
        raise IngestionError(f"{path}: parameter payload at offset {off} has {len(raw) - off} bytes, expected {need}")
    return NetParams(np.frombuffer(raw, dtype="<f8", offset=off).astype(float), arch)
