import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from beamalign.channel import RadioConfig, steering_vector
from beamalign.codebook import (PhaseCodebook, angle_grid, beam_gain_pattern, dft_codebook,
                                export_pattern_csv, pc_forward, pc_layer, phases_to_beams,
                                sin_grid)
from beamalign.errors import DimensionError, DomainError
from beamalign.numerics import RngStream

from conftest import rand_complex


def test_dft_small_example():
    V = dft_codebook(4, 4, 0.5)
    assert np.allclose(V.omegas, [-np.pi, -np.pi / 2, 0, np.pi / 2])
    assert np.allclose(V.beams[:, 2], 0.5 * np.ones(4))
    assert np.allclose(V.sin_values, [-1, -0.5, 0, 0.5])


def test_dft_entries_against_formula():
    n, size = 8, 12
    V = dft_codebook(n, size, 0.5)
    for i in range(size):
        omega = 2 * math.pi * 0.5 * (2 * i - size) / size
        for m in range(n):
            want = complex(math.cos(m * omega), math.sin(m * omega)) / math.sqrt(n)
            assert abs(V.beams[m, i] - want) < 1e-15


def test_dft_columns():
    V = dft_codebook(64, 128)
    assert V.size == 128
    assert np.allclose(np.linalg.norm(V.beams, axis=0), 1.0, atol=1e-12)
    assert np.allclose(np.abs(V.beams), 1 / 8, atol=1e-15)
    sq = dft_codebook(16, 16).beams
    gram = sq.conj().T @ sq
    assert np.max(np.abs(gram - np.eye(16))) < 1e-12
    with pytest.raises(DomainError):
        dft_codebook(0, 4)


def test_phases_to_beams_examples():
    W = phases_to_beams(PhaseCodebook(np.zeros((4, 3))))
    assert np.allclose(W, 0.5)
    omega = 0.7
    col = np.arange(6)[:, None] * omega
    beam = phases_to_beams(col)[:, 0]
    assert np.allclose(beam, np.exp(1j * omega * np.arange(6)) / math.sqrt(6))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 4), elements=st.floats(-1e4, 1e4)))
def test_constant_modulus_any_theta(theta):
    W = phases_to_beams(PhaseCodebook(theta))
    assert np.allclose(np.abs(W), 1 / math.sqrt(5), atol=1e-15)
    assert np.allclose(np.linalg.norm(W, axis=0), 1.0)


def test_pc_forward_matches_complex():
    rng = np.random.default_rng(0)
    radio = RadioConfig(0.01, 0.0, 16)
    worst = 0.0
    for _ in range(1000):
        theta = rng.uniform(0, 2 * np.pi, (16, 5))
        h = rand_complex(rng, 16)
        y, z = pc_forward(PhaseCodebook(theta), h, radio)
        direct = math.sqrt(0.01) * (phases_to_beams(theta).T @ h.conj())
        worst = max(worst, np.max(np.abs(y - direct)) / np.max(np.abs(direct)))
        assert (z >= 0).all()
    assert worst < 1e-12


def test_pc_forward_aligned_example():
    y, z = pc_forward(PhaseCodebook(np.zeros((9, 4))), np.ones(9), RadioConfig(1.0, 0.0, 9))
    assert np.allclose(y, 3.0)
    assert np.allclose(z, 9.0)


def test_pc_forward_batch_and_noise():
    rng = np.random.default_rng(2)
    pc = PhaseCodebook(rng.uniform(0, 6, (8, 3)))
    H = rand_complex(rng, 5, 8)
    noise = rand_complex(rng, 5, 3)
    y, z = pc_forward(pc, H, RadioConfig(1.0, 0.0, 8), noise=noise)
    re, im = pc_layer(pc.theta, H, 1.0)
    assert np.allclose(y, re + 1j * im + noise)
    assert np.allclose(z, np.abs(y) ** 2)
    with pytest.raises(DimensionError):
        pc_forward(pc, np.ones(7), RadioConfig(1.0, 0.0, 8))
    with pytest.raises(DomainError):
        pc_forward(pc, H, RadioConfig(1.0, 1.0, 8))
    y1, _ = pc_forward(pc, H[0], RadioConfig(1.0, 1.0, 8), RngStream(0, 1))
    y2, _ = pc_forward(pc, H[0], RadioConfig(1.0, 1.0, 8), RngStream(0, 1))
    assert np.array_equal(y1, y2)


def test_pattern_examples():
    w = np.ones(64) / 8
    assert beam_gain_pattern(w, [0.0])[0] == pytest.approx(10 * math.log10(64))
    V = dft_codebook(64, 128)
    grid = angle_grid(1024)
    for i in (5, 64, 100):
        g = beam_gain_pattern(V.beams[:, i], grid)
        assert abs(np.sin(grid[np.argmax(g)]) - V.sin_values[i]) <= 2 / 1023
    with pytest.raises(DomainError):
        beam_gain_pattern(w, [])


def test_pattern_total_power():
    rng = np.random.default_rng(3)
    u = np.linspace(-1, 1, 4096, endpoint=False)
    for _ in range(5):
        w = phases_to_beams(rng.uniform(0, 2 * np.pi, (32, 1)))[:, 0]
        gain = np.abs(np.array([steering_vector(math.asin(s), 32).conj() @ w for s in u])) ** 2
        assert abs(gain.mean() - 1.0) < 0.05


def test_export_pattern_csv(tmp_path):
    V = dft_codebook(8, 3)
    ids = (sin_grid() > 0).astype(int)
    export_pattern_csv(tmp_path / "p.csv", V.beams, cluster_ids=ids)
    with open(tmp_path / "p.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["sin_psi", "beam_0_dB", "beam_1_dB", "beam_2_dB", "cluster_id"]
    assert len(rows) == 1025
    assert rows[-1][-1] == "1" and rows[1][-1] == "0"
