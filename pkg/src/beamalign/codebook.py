"""DFT transmission codebooks, constant-modulus probing codebooks and beam patterns."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import RadioConfig, steering_matrix
from .errors import DimensionError, DomainError
from .numerics import RngStream, complex_gaussian

PATTERN_FLOOR = 1e-12
PATTERN_GRID_POINTS = 1024


@dataclass(frozen=True)
class DftCodebook:
    beams: np.ndarray      # (n_antennas, size)
    omegas: np.ndarray     # spatial frequency of each column, radians per element
    spacing: float

    @property
    def size(self) -> int:
        return self.beams.shape[1]

    @property
    def n_antennas(self) -> int:
        return self.beams.shape[0]

    @property
    def sin_values(self) -> np.ndarray:
        """Direction (sine of the angle) each column points to."""
        return self.omegas / (2 * np.pi * self.spacing)


def dft_grid_sines(size: int) -> np.ndarray:
    """Sine-space beam centres ``(2 i - size) / size`` for ``i = 0..size-1``."""
    return (2.0 * np.arange(size) - size) / size


def dft_codebook(n_antennas: int, size: int, spacing: float = 0.5) -> DftCodebook:
    if n_antennas < 1 or size < 1:
        raise DomainError("codebook dimensions must be positive")
    omegas = 2 * np.pi * spacing * dft_grid_sines(size)
    m = np.arange(n_antennas)[:, None]
    beams = np.exp(1j * m * omegas[None, :]) / math.sqrt(n_antennas)
    return DftCodebook(beams=beams, omegas=omegas, spacing=spacing)


@dataclass
class PhaseCodebook:
    """Probing codebook stored only through its phase matrix.

    Beams are ``exp(j theta) / sqrt(n_antennas)`` so every element has modulus
    ``1 / sqrt(n_antennas)`` whatever ``theta`` holds.
    """

    theta: np.ndarray  # (n_antennas, size), radians

    @property
    def n_antennas(self) -> int:
        return self.theta.shape[0]

    @property
    def size(self) -> int:
        return self.theta.shape[1]

    @property
    def beams(self) -> np.ndarray:
        return phases_to_beams(self)

    @classmethod
    def random(cls, n_antennas: int, size: int, rng: RngStream) -> "PhaseCodebook":
        return cls(rng.uniform(0.0, 2 * np.pi, (n_antennas, size)))


def phases_to_beams(pc) -> np.ndarray:
    theta = pc.theta if isinstance(pc, PhaseCodebook) else np.asarray(pc, dtype=float)
    return (np.cos(theta) + 1j * np.sin(theta)) / math.sqrt(theta.shape[0])


def pc_layer(theta: np.ndarray, channels: np.ndarray, sqrt_rho: float):
    """Noiseless real-expanded probing layer.

    For channels ``H`` (batch x n_antennas) returns ``(re, im)`` of
    ``sqrt_rho * W^T h*`` per row using only real arithmetic:
    ``re = c (a cos - b sin)``, ``im = c (a sin + b cos)`` with
    ``a + j b = h*`` and ``c = sqrt_rho / sqrt(n_antennas)``.
    """
    hc = np.conj(channels)
    a, b = hc.real, hc.imag
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    c = sqrt_rho / math.sqrt(theta.shape[0])
    re = c * (a @ cos_t - b @ sin_t)
    im = c * (a @ sin_t + b @ cos_t)
    return re, im


def pc_layer_grad(theta: np.ndarray, channels: np.ndarray, sqrt_rho: float,
                  g_re: np.ndarray, g_im: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``theta`` given upstream gradients on ``(re, im)``."""
    hc = np.conj(channels)
    a, b = hc.real, hc.imag
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    c = sqrt_rho / math.sqrt(theta.shape[0])
    at_gr, bt_gr = a.T @ g_re, b.T @ g_re
    at_gi, bt_gi = a.T @ g_im, b.T @ g_im
    return c * ((at_gi - bt_gr) * cos_t - (at_gr + bt_gi) * sin_t)


def pc_forward(pc: PhaseCodebook, h, radio: RadioConfig,
               rng: Optional[RngStream] = None, noise=None):
    """Probe ``h`` (one channel or a batch) with ``pc``; returns ``(y, z)``.

    Noise is taken from ``noise`` if given, else drawn from ``rng`` when the
    radio's noise variance is positive.
    """
    h = np.asarray(h, dtype=np.complex128)
    single = h.ndim == 1
    channels = h[None, :] if single else h
    if channels.ndim != 2 or channels.shape[1] != pc.n_antennas:
        raise DimensionError(f"channel shape {h.shape} vs codebook {pc.theta.shape}")
    re, im = pc_layer(pc.theta, channels, math.sqrt(radio.tx_power))
    y = re + 1j * im
    if noise is None and radio.noise_var > 0:
        if rng is None:
            raise DomainError("a random stream is required when noise_var > 0")
        noise = complex_gaussian(rng, radio.noise_var, y.shape)
    if noise is not None:
        y = y + np.asarray(noise).reshape(y.shape)
    z = y.real ** 2 + y.imag ** 2
    if single:
        return y[0], z[0]
    return y, z


def angle_grid(n: int = PATTERN_GRID_POINTS) -> np.ndarray:
    """Angles whose sines are uniform on [-1, 1]."""
    return np.arcsin(sin_grid(n))


def sin_grid(n: int = PATTERN_GRID_POINTS) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n)


def beam_gain_linear(beams, sin_values, spacing: float = 0.5) -> np.ndarray:
    """``|a(psi)^H w|^2`` for every grid point (rows) and beam (columns)."""
    beams = np.asarray(beams, dtype=np.complex128)
    single = beams.ndim == 1
    if single:
        beams = beams[:, None]
    a = steering_matrix(sin_values, beams.shape[0], spacing)
    g = np.abs(a.conj().T @ beams) ** 2
    return g[:, 0] if single else g


def beam_gain_pattern(w, angles, spacing: float = 0.5) -> np.ndarray:
    """Beam gain in dB over a list of angles (radians)."""
    angles = np.asarray(angles, dtype=float)
    if angles.size == 0:
        raise DomainError("angle grid must be non-empty")
    return 10.0 * np.log10(beam_gain_linear(w, np.sin(angles), spacing) + PATTERN_FLOOR)


def export_pattern_csv(path, beams, spacing: float = 0.5, cluster_ids=None,
                       n_points: int = PATTERN_GRID_POINTS) -> None:
    """Write the dB pattern of every column of ``beams`` on the sine grid.

    Columns: ``sin_psi, beam_0_dB, ..., beam_{N-1}_dB, cluster_id``.
    """
    u = sin_grid(n_points)
    gains = 10.0 * np.log10(beam_gain_linear(beams, u, spacing) + PATTERN_FLOOR)
    if gains.ndim == 1:
        gains = gains[:, None]
    if cluster_ids is None:
        cluster_ids = np.full(len(u), -1)
    header = ["sin_psi"] + [f"beam_{i}_dB" for i in range(gains.shape[1])] + ["cluster_id"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in range(len(u)):
            writer.writerow([repr(float(u[r]))] + [repr(float(v)) for v in gains[r]]
                            + [int(cluster_ids[r])])
