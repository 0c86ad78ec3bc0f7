"""Snapshot files: bit-exact round trips and corruption rejection."""

import os
import struct

import numpy as np
import pytest

from ksnd import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointFormatError,
    NuclearState,
    read_checkpoint,
    write_checkpoint,
)


def _state(rng, n=8, n_orb=2, n_nuc=2):
    psi = (rng.standard_normal((n_orb, n, n, n))
           + 1j * rng.standard_normal((n_orb, n, n, n)))
    nuc = NuclearState(rng.uniform(1, 9, (n_nuc, 3)),
                       rng.standard_normal((n_nuc, 3)) * 0.01,
                       rng.uniform(1, 2000, n_nuc),
                       rng.uniform(0.5, 2, n_nuc))
    return psi, nuc


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    psi, nuc = _state(rng)
    path = tmp_path / "state.ksnd"
    write_checkpoint(path, 10.0, 0.125, psi, nuc)
    box, t, psi2, nuc2 = read_checkpoint(path)
    assert box == 10.0
    assert t == 0.125
    assert np.array_equal(psi, psi2)
    assert np.array_equal(nuc.positions, nuc2.positions)
    assert np.array_equal(nuc.velocities, nuc2.velocities)
    assert np.array_equal(nuc.masses, nuc2.masses)
    assert np.array_equal(nuc.charges, nuc2.charges)


def test_no_nuclei_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    psi, _ = _state(rng, n_nuc=2)
    empty = NuclearState(np.zeros((0, 3)), np.zeros((0, 3)),
                         np.zeros(0), np.zeros(0))
    path = tmp_path / "vac.ksnd"
    write_checkpoint(path, 8.0, 0.0, psi, empty)
    _, _, psi2, nuc2 = read_checkpoint(path)
    assert nuc2.count == 0
    assert np.array_equal(psi, psi2)


def test_corrupted_byte_is_rejected(tmp_path):
    rng = np.random.default_rng(7)
    psi, nuc = _state(rng)
    path = tmp_path / "state.ksnd"
    write_checkpoint(path, 10.0, 1.0, psi, nuc)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x40
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointChecksumError, match="corrupted"):
        read_checkpoint(path)
    # the checksum error is also a CheckpointError for coarse handlers
    with pytest.raises(CheckpointError):
        read_checkpoint(path)


def test_truncated_and_malformed_headers(tmp_path):
    rng = np.random.default_rng(8)
    psi, nuc = _state(rng)
    path = tmp_path / "state.ksnd"
    write_checkpoint(path, 10.0, 1.0, psi, nuc)
    raw = path.read_bytes()

    short = tmp_path / "short.ksnd"
    short.write_bytes(raw[:10])
    with pytest.raises(CheckpointFormatError, match="too short"):
        read_checkpoint(short)

    cut = tmp_path / "cut.ksnd"
    cut.write_bytes(raw[:-200])
    with pytest.raises(CheckpointFormatError, match="size mismatch"):
        read_checkpoint(cut)

    magic = tmp_path / "magic.ksnd"
    magic.write_bytes(b"XSND" + raw[4:])
    with pytest.raises(CheckpointFormatError, match="bad magic"):
        read_checkpoint(magic)

    vers = tmp_path / "vers.ksnd"
    vers.write_bytes(raw[:4] + struct.pack("<I", 99) + raw[8:])
    with pytest.raises(CheckpointFormatError, match="version 99"):
        read_checkpoint(vers)


def test_overwrite_is_atomic_and_clean(tmp_path):
    rng = np.random.default_rng(9)
    psi_a, nuc = _state(rng)
    psi_b = psi_a * 1j
    path = tmp_path / "state.ksnd"
    write_checkpoint(path, 10.0, 0.0, psi_a, nuc)
    write_checkpoint(path, 10.0, 0.5, psi_b, nuc)
    _, t, psi2, _ = read_checkpoint(path)
    assert t == 0.5
    assert np.array_equal(psi2, psi_b)
    assert os.listdir(tmp_path) == ["state.ksnd"]


def test_write_rejects_bad_orbital_shape(tmp_path):
    nuc = NuclearState(np.zeros((0, 3)), np.zeros((0, 3)),
                       np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError, match=r"\(N, n, n, n\)"):
        write_checkpoint(tmp_path / "x.ksnd", 10.0, 0.0,
                         np.zeros((4, 4, 4), dtype=complex), nuc)
