"""Binary state snapshots: raw little-endian arrays plus a checksum.

Layout, all little-endian:

    bytes 0:4    magic "KSND"
    bytes 4:20   format version, grid n, orbital count N, nucleus
                 count M (u32 each)
    bytes 20:36  box length, simulation time (f64 each)
    then         masses (M f64), charges (M f64), positions (M x 3
                 f64), velocities (M x 3 f64)
    then         orbitals: N * n^3 complex values as (re, im) f64
                 pairs in row-major grid order
    last 8       the first 8 bytes of the SHA-256 of everything above

The checksum is verified before any array is built, so a corrupted
file never yields partial state.  Round trips are bit-exact: the f64
payloads are written untouched.
"""

import hashlib
import os
import struct

import numpy as np

from .model import NuclearState

__all__ = [
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointChecksumError",
    "write_checkpoint",
    "read_checkpoint",
]

MAGIC = b"KSND"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIdd")


class CheckpointError(Exception):
    """Base for unreadable checkpoint files."""


class CheckpointFormatError(CheckpointError):
    """Wrong magic, unsupported version, or truncated payload."""


class CheckpointChecksumError(CheckpointError):
    """Stored digest does not match the content."""


def write_checkpoint(path, box_length, time, psi, nuclear):
    """Serialize one (orbitals, nuclei, time) snapshot to ``path``.

    Writes to a temporary sibling and renames, so a crash mid-write
    never leaves a half-valid file at the target name.
    """
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 4 or not (psi.shape[1] == psi.shape[2] == psi.shape[3]):
        raise ValueError(f"orbitals must be (N, n, n, n), got {psi.shape}")
    n = psi.shape[1]
    buf = bytearray()
    buf += _HEADER.pack(MAGIC, VERSION, n, psi.shape[0], nuclear.count,
                        float(box_length), float(time))
    for arr in (nuclear.masses, nuclear.charges,
                nuclear.positions, nuclear.velocities):
        buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    buf += np.ascontiguousarray(psi, dtype="<c16").tobytes()
    buf += hashlib.sha256(bytes(buf)).digest()[:8]

    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(buf))
    os.replace(tmp, path)


def read_checkpoint(path):
    """Read a snapshot; returns (box_length, time, psi, nuclear).

    Raises CheckpointFormatError on bad magic, version, or size, and
    CheckpointChecksumError when the content does not match its digest.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size + 8:
        raise CheckpointFormatError(
            f"file too short ({len(data)} bytes) to be a checkpoint")
    magic, version, n, n_orb, n_nuc, box_length, time = _HEADER.unpack(
        data[:_HEADER.size])
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointFormatError(
            f"unsupported format version {version} (expected {VERSION})")

    expected = (_HEADER.size + n_nuc * 8 * (1 + 1 + 3 + 3)
                + n_orb * n ** 3 * 16 + 8)
    if len(data) != expected:
        raise CheckpointFormatError(
            f"size mismatch: {len(data)} bytes, header implies {expected}")
    body, digest = data[:-8], data[-8:]
    if hashlib.sha256(body).digest()[:8] != digest:
        raise CheckpointChecksumError("checksum mismatch, file corrupted")

    off = _HEADER.size

    def block(count, shape):
        nonlocal off
        size = count * 8
        arr = np.frombuffer(body, dtype="<f8", count=count,
                            offset=off).reshape(shape).copy()
        off += size
        return arr

    masses = block(n_nuc, (n_nuc,))
    charges = block(n_nuc, (n_nuc,))
    positions = block(3 * n_nuc, (n_nuc, 3))
    velocities = block(3 * n_nuc, (n_nuc, 3))
    psi = np.frombuffer(body, dtype="<c16", count=n_orb * n ** 3,
                        offset=off).reshape(n_orb, n, n, n).copy()
    nuclear = NuclearState(positions=positions, velocities=velocities,
                           masses=masses, charges=charges)
    return float(box_length), float(time), psi, nuclear
