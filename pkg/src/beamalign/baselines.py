"""Conventional beam search baselines and measurement accounting.

Wide (sector) beams are constant-modulus: a quadratic-phase start that
sweeps the sector across the aperture, refined by L-BFGS on the element
phases toward a flat in-sector pattern. Sectors no wider than one mainlobe
get a plain steered beam.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .channel import MeasurementCounter, RadioConfig, sweep_measure
from .codebook import DftCodebook
from .errors import ConfigError, DomainError
from .numerics import RngStream

METHOD_KINDS = ("exhaustive", "binary", "two-tier", "learned-single", "learned-hier")
_DESIGN_GRID = 512


@dataclass(frozen=True)
class MethodSpec:
    kind: str
    n1: int = 0
    n2: int = 0
    wide_size: int = 0

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ConfigError(f"unknown method kind {self.kind!r}")
        if self.kind == "two-tier" and self.wide_size < 1:
            raise ConfigError("two-tier search needs wide_size >= 1")
        if self.kind in ("learned-single", "learned-hier") and (self.n1 < 1 or self.n2 < 1):
            raise ConfigError(f"{self.kind} needs n1 >= 1 and n2 >= 1")

    @property
    def label(self) -> str:
        return self.kind


def measurement_count(spec: MethodSpec, n_beams: int) -> int:
    """Scalar power measurements one UE reports before the beam decision."""
    if spec.kind == "exhaustive":
        return n_beams
    if spec.kind == "binary":
        _check_power_of_two(n_beams)
        return 2 * int(math.log2(n_beams))
    if spec.kind == "two-tier":
        return spec.wide_size + math.ceil(n_beams / spec.wide_size)
    return spec.n1 + spec.n2


def _check_power_of_two(n: int):
    if n < 2 or n & (n - 1):
        raise ConfigError(f"binary search needs a power-of-two codebook, got {n}")


# ---------------------------------------------------------------------------
# sector beams


def sector_bounds(codebook_size: int, lo: int, hi: int):
    """Sine-space span covered by DFT beams ``lo..hi-1`` (half a spacing each side)."""
    u = (2.0 * np.arange(codebook_size) - codebook_size) / codebook_size
    half = 1.0 / codebook_size
    return float(u[lo] - half), float(u[hi - 1] + half)


def sector_wide_beam(sector, n_antennas: int, spacing: float = 0.5) -> np.ndarray:
    """Unit-norm constant-modulus beam with roughly flat gain over ``sector``.

    ``sector = (a, b)`` is an interval of sin(angle) with ``a < b``.
    """
    a, b = float(sector[0]), float(sector[1])
    if not a < b:
        raise DomainError(f"invalid sector ({a}, {b})")
    return _sector_beam_cached(round(a, 12), round(b, 12), int(n_antennas), float(spacing)).copy()


@lru_cache(maxsize=4096)
def _sector_beam_cached(a: float, b: float, n: int, spacing: float) -> np.ndarray:
    m = np.arange(n)
    centre = (a + b) / 2
    mainlobe = 2.0 / (n * spacing)
    if b - a <= mainlobe or n == 1:
        return np.exp(1j * 2 * np.pi * spacing * m * centre) / math.sqrt(n)
    lo, hi = max(a, -1.0), min(b, 1.0)
    natural = 1.0 / (n * spacing)
    span = max(0.0, (hi - lo) - natural)
    x = m - (n - 1) / 2
    phi0 = 2 * np.pi * spacing * (centre * x + span * x ** 2 / (2 * (n - 1)))
    u = np.linspace(-1.0, 1.0, _DESIGN_GRID, endpoint=False) + 1.0 / _DESIGN_GRID
    A = np.exp(-1j * 2 * np.pi * spacing * np.outer(u, m)) / math.sqrt(n)
    inside = (u >= lo) & (u <= hi)
    if not inside.any():
        return np.exp(1j * phi0) / math.sqrt(n)
    n_in, n_out = inside.sum(), max((~inside).sum(), 1)
    target = 2.0 / (hi - lo)
    soft = 1e-3 * target

    def objective(phi):
        e = np.exp(1j * phi)
        s = A @ e
        g = s.real ** 2 + s.imag ** 2
        r = np.log(g[inside] + soft) - math.log(target)
        val = np.sum(r ** 2) / n_in + np.sum((g[~inside] / target) ** 2) / n_out
        dg = np.empty_like(g)
        dg[inside] = 2 * r / (g[inside] + soft) / n_in
        dg[~inside] = 2 * g[~inside] / target ** 2 / n_out
        grad = 2 * np.real(1j * e * (A.T @ (dg * np.conj(s))))
        return val, grad

    res = minimize(objective, phi0, jac=True, method="L-BFGS-B", options={"maxiter": 500})
    return np.exp(1j * res.x) / math.sqrt(n)


def two_tier_sectors(codebook_size: int, wide_size: int):
    """``wide_size`` windows of ``ceil(N/M)`` consecutive beams covering the codebook.

    Window starts are spread evenly, so neighbouring windows may overlap by
    a beam or two; every beam lies in at least one window.
    """
    if wide_size < 1:
        raise DomainError("need at least one sector")
    length = math.ceil(codebook_size / wide_size)
    if wide_size == 1:
        return [(0, codebook_size)]
    starts = [int(round(s * (codebook_size - length) / (wide_size - 1)))
              for s in range(wide_size)]
    return [(s, s + length) for s in starts]


@lru_cache(maxsize=64)
def _two_tier_beams(codebook_size: int, wide_size: int, n_antennas: int, spacing: float):
    sectors = two_tier_sectors(codebook_size, wide_size)
    beams = np.stack([sector_wide_beam(sector_bounds(codebook_size, lo, hi), n_antennas, spacing)
                      for lo, hi in sectors], axis=1)
    return sectors, beams


@lru_cache(maxsize=16)
def _binary_tree(codebook_size: int, n_antennas: int, spacing: float):
    """Beam for every node ``(lo, hi)`` of the halving tree, keyed in a dict."""
    _check_power_of_two(codebook_size)
    beams = {}
    stack = [(0, codebook_size)]
    while stack:
        lo, hi = stack.pop()
        beams[(lo, hi)] = sector_wide_beam(sector_bounds(codebook_size, lo, hi),
                                           n_antennas, spacing)
        if hi - lo > 1:
            mid = (lo + hi) // 2
            stack += [(lo, mid), (mid, hi)]
    return beams


# ---------------------------------------------------------------------------
# per-UE searches


def exhaustive_search(h, codebook: DftCodebook, radio: RadioConfig,
                      rng: Optional[RngStream] = None,
                      counter: Optional[MeasurementCounter] = None) -> int:
    z = sweep_measure(h, codebook.beams, radio, rng, counter)
    return int(np.argmax(z))


def _ideal_score(h, codebook: DftCodebook, lo: int, hi: int, radio: RadioConfig) -> float:
    return float(np.max(radio.tx_power * np.abs(np.conj(h) @ codebook.beams[:, lo:hi]) ** 2))


def binary_search(h, codebook: DftCodebook, radio: RadioConfig,
                  rng: Optional[RngStream] = None,
                  counter: Optional[MeasurementCounter] = None,
                  ideal: bool = False) -> int:
    """Halve the candidate set each level by comparing two sector beams.

    With ``ideal=True`` each sector is scored by its best noiseless DFT gain
    instead of a wide-beam measurement (measurements are still counted).
    """
    n = codebook.size
    tree = _binary_tree(n, codebook.n_antennas, codebook.spacing)
    h = np.asarray(h, dtype=np.complex128)
    lo, hi = 0, n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ideal:
            z = np.array([_ideal_score(h, codebook, lo, mid, radio),
                          _ideal_score(h, codebook, mid, hi, radio)])
            if counter is not None:
                counter.add(2)
        else:
            pair = np.stack([tree[(lo, mid)], tree[(mid, hi)]], axis=1)
            z = sweep_measure(h, pair, radio, rng, counter)
        lo, hi = (lo, mid) if z[0] >= z[1] else (mid, hi)
    return lo


def two_tier_search(h, codebook: DftCodebook, wide_size: int, radio: RadioConfig,
                    rng: Optional[RngStream] = None,
                    counter: Optional[MeasurementCounter] = None,
                    ideal: bool = False) -> int:
    """Sweep ``wide_size`` sector beams, then every DFT beam of the best sector."""
    sectors, wide = _two_tier_beams(codebook.size, wide_size, codebook.n_antennas,
                                    codebook.spacing)
    h = np.asarray(h, dtype=np.complex128)
    if ideal:
        z = np.array([_ideal_score(h, codebook, lo, hi, radio) for lo, hi in sectors])
        if counter is not None:
            counter.add(len(sectors))
    else:
        z = sweep_measure(h, wide, radio, rng, counter)
    lo, hi = sectors[int(np.argmax(z))]
    zn = sweep_measure(h, codebook.beams[:, lo:hi], radio, rng, counter)
    return lo + int(np.argmax(zn))


# ---------------------------------------------------------------------------
# batched evaluation with pre-drawn noise (prefix of each row is used)


def _powers(channels, beams, radio, noise):
    y = math.sqrt(radio.tx_power) * (channels.conj() @ beams)
    if noise is not None:
        y = y + noise
    return y.real ** 2 + y.imag ** 2


def batch_exhaustive(channels, codebook: DftCodebook, radio: RadioConfig, noise=None):
    n = codebook.size
    return np.argmax(_powers(channels, codebook.beams, radio,
                             None if noise is None else noise[:, :n]), axis=1)


def batch_binary(channels, codebook: DftCodebook, radio: RadioConfig, noise=None):
    n = codebook.size
    tree = _binary_tree(n, codebook.n_antennas, codebook.spacing)
    lo = np.zeros(len(channels), dtype=np.int64)
    width = n
    col = 0
    while width > 1:
        half = width // 2
        left = np.stack([tree[(int(l), int(l) + half)] for l in lo], axis=0)
        right = np.stack([tree[(int(l) + half, int(l) + width)] for l in lo], axis=0)
        zl = math.sqrt(radio.tx_power) * np.einsum("bm,bm->b", channels.conj(), left)
        zr = math.sqrt(radio.tx_power) * np.einsum("bm,bm->b", channels.conj(), right)
        if noise is not None:
            zl = zl + noise[:, col]
            zr = zr + noise[:, col + 1]
        go_right = np.abs(zl) ** 2 < np.abs(zr) ** 2
        lo = lo + half * go_right
        width = half
        col += 2
    return lo


def batch_two_tier(channels, codebook: DftCodebook, wide_size: int, radio: RadioConfig,
                   noise=None):
    sectors, wide = _two_tier_beams(codebook.size, wide_size, codebook.n_antennas,
                                    codebook.spacing)
    m = len(sectors)
    z = _powers(channels, wide, radio, None if noise is None else noise[:, :m])
    best = np.argmax(z, axis=1)
    starts = np.array([s for s, _ in sectors])[best]
    length = sectors[0][1] - sectors[0][0]
    cols = starts[:, None] + np.arange(length)[None, :]
    beams = codebook.beams.T[cols]                      # (batch, length, n_antennas)
    y = math.sqrt(radio.tx_power) * np.einsum("bm,blm->bl", channels.conj(), beams)
    if noise is not None:
        y = y + noise[:, m:m + length]
    return starts + np.argmax(np.abs(y) ** 2, axis=1)
