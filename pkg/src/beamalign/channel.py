"""Geometric multipath MISO channels, dataset I/O and the measurement model.

The received pilot for a transmit beam ``w`` is ``y = sqrt(rho) h^H w s + n``
with ``s = 1`` and ``n ~ CN(0, sigma^2)``; a UE reports ``|y|^2``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DatasetParseError, DimensionError, DomainError
from .numerics import (STREAM_DATASET, STREAM_SPLIT, RngStream, complex_gaussian,
                       dbm_to_watts, stream_id)

DATASET_MAGIC = b"BALN"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


@dataclass(frozen=True)
class PathComponent:
    aod: float
    gain: complex

    def __post_init__(self):
        if not -math.pi / 2 < self.aod < math.pi / 2:
            raise DomainError(f"AoD {self.aod} outside (-pi/2, pi/2)")
        if not np.isfinite(complex(self.gain)):
            raise DomainError("path gain must be finite")


@dataclass
class ChannelSample:
    h: np.ndarray
    paths: tuple = ()
    sample_id: int = 0

    @property
    def n_antennas(self) -> int:
        return self.h.shape[0]


@dataclass(frozen=True)
class RadioConfig:
    """Linear-unit radio parameters (watts)."""

    tx_power: float
    noise_var: float
    n_antennas: int
    spacing: float = 0.5

    def __post_init__(self):
        if self.tx_power <= 0:
            raise ConfigError("transmit power must be positive")
        if self.noise_var < 0:
            raise ConfigError("noise variance must be non-negative")
        if self.n_antennas < 1:
            raise ConfigError("need at least one antenna")
        if self.spacing <= 0:
            raise ConfigError("antenna spacing must be positive")

    @classmethod
    def from_dbm(cls, tx_power_dbm: float, noise_psd_dbm_per_hz: float,
                 bandwidth_hz: float, n_antennas: int, spacing: float = 0.5) -> "RadioConfig":
        return cls(tx_power=dbm_to_watts(tx_power_dbm),
                   noise_var=noise_power_watts(noise_psd_dbm_per_hz, bandwidth_hz),
                   n_antennas=n_antennas, spacing=spacing)

    def with_noise(self, noise_var: float) -> "RadioConfig":
        return RadioConfig(self.tx_power, noise_var, self.n_antennas, self.spacing)


def noise_power_dbm(psd_dbm_per_hz: float, bandwidth_hz: float) -> float:
    return psd_dbm_per_hz + 10.0 * math.log10(bandwidth_hz)


def noise_power_watts(psd_dbm_per_hz: float, bandwidth_hz: float) -> float:
    return dbm_to_watts(noise_power_dbm(psd_dbm_per_hz, bandwidth_hz))


class MeasurementCounter:
    """Counts scalar power measurements (one per received pilot)."""

    def __init__(self):
        self.count = 0

    def add(self, n: int = 1):
        self.count += int(n)

    def reset(self):
        self.count = 0


# ---------------------------------------------------------------------------
# channel synthesis


def steering_vector(aod: float, n_antennas: int, spacing: float = 0.5) -> np.ndarray:
    """ULA response; entry m is ``exp(j 2 pi spacing m sin(aod))``."""
    if n_antennas < 1:
        raise DomainError("need at least one antenna")
    m = np.arange(n_antennas)
    return np.exp(1j * 2 * np.pi * spacing * m * np.sin(aod))


def steering_matrix(sin_values, n_antennas: int, spacing: float = 0.5) -> np.ndarray:
    """Stack of steering vectors (n_antennas x len(sin_values)) indexed by sin(angle)."""
    u = np.asarray(sin_values, dtype=float)
    m = np.arange(n_antennas)[:, None]
    return np.exp(1j * 2 * np.pi * spacing * m * u[None, :])


def synthesize_channel(paths: Sequence[PathComponent], n_antennas: int,
                       spacing: float = 0.5, rng: Optional[RngStream] = None,
                       sample_id: int = 0) -> ChannelSample:
    """Sum of per-path steering vectors weighted by complex gains.

    ``rng`` is accepted for interface symmetry; synthesis itself is
    deterministic given the paths.
    """
    if len(paths) == 0:
        raise DomainError("a channel needs at least one path")
    h = np.zeros(n_antennas, dtype=np.complex128)
    for p in paths:
        h += complex(p.gain) * steering_vector(p.aod, n_antennas, spacing)
    return ChannelSample(h=h, paths=tuple(paths), sample_id=sample_id)


@dataclass
class SyntheticSpec:
    """Distribution of synthetic multipath channels.

    ``aod_sectors`` restricts the dominant path to a union of AoD intervals
    (radians), chosen with probability proportional to width. Secondary
    paths are always uniform over the half-plane. ``path_gain_db`` is a
    per-sample large-scale gain applied to every path.
    """

    count: int = 20000
    path_count: tuple = (1, 3)
    secondary_amplitude: tuple = (0.1, 0.5)
    path_gain_db: tuple = (-95.0, -80.0)
    aod_sectors: Optional[list] = None
    dominant_strongest: bool = True

    def validate(self):
        if self.count < 1:
            raise ConfigError("dataset count must be >= 1")
        lo, hi = self.path_count
        if lo < 1 or hi < lo:
            raise ConfigError(f"invalid path-count range {self.path_count}")
        a_lo, a_hi = self.secondary_amplitude
        if a_lo < 0 or a_hi < a_lo:
            raise ConfigError(f"invalid secondary amplitude range {self.secondary_amplitude}")
        if self.dominant_strongest and a_hi > 1.0:
            raise ConfigError("secondary amplitudes exceed the dominant path")
        g_lo, g_hi = self.path_gain_db
        if g_hi < g_lo:
            raise ConfigError(f"invalid path gain range {self.path_gain_db}")
        if self.aod_sectors is not None:
            if len(self.aod_sectors) == 0:
                raise ConfigError("empty sector list")
            for s_lo, s_hi in self.aod_sectors:
                if not -math.pi / 2 <= s_lo < s_hi <= math.pi / 2:
                    raise ConfigError(f"invalid AoD sector ({s_lo}, {s_hi})")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {"count", "path_count", "secondary_amplitude", "path_gain_db",
                 "aod_sectors", "dominant_strongest"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic dataset keys: {sorted(unknown)}")
        kw = dict(d)
        for key in ("path_count", "secondary_amplitude", "path_gain_db"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if kw.get("aod_sectors") is not None:
            kw["aod_sectors"] = [tuple(s) for s in kw["aod_sectors"]]
        spec = cls(**kw)
        spec.validate()
        return spec


_AOD_EDGE = math.pi / 2 * (1 - 1e-12)


def _draw_aod(rng: RngStream, sectors) -> float:
    if sectors is None:
        lo, hi = -_AOD_EDGE, _AOD_EDGE
    else:
        widths = np.array([b - a for a, b in sectors])
        k = int(np.searchsorted(np.cumsum(widths) / widths.sum(), rng.uniform()))
        lo, hi = sectors[min(k, len(sectors) - 1)]
        lo, hi = max(lo, -_AOD_EDGE), min(hi, _AOD_EDGE)
    return float(rng.uniform(lo, hi))


def _draw_paths(spec: SyntheticSpec, rng: RngStream) -> list:
    n_paths = int(rng.integers(spec.path_count[0], spec.path_count[1] + 1))
    scale = 10.0 ** (rng.uniform(*spec.path_gain_db) / 20.0)
    paths = [PathComponent(_draw_aod(rng, spec.aod_sectors),
                           scale * np.exp(1j * rng.uniform(0, 2 * np.pi)))]
    for _ in range(n_paths - 1):
        amp = rng.uniform(*spec.secondary_amplitude)
        paths.append(PathComponent(_draw_aod(rng, None),
                                   scale * amp * np.exp(1j * rng.uniform(0, 2 * np.pi))))
    return paths


class Dataset:
    """Ordered collection of channel vectors with a common antenna count.

    Channels are stored as one ``(count, n_antennas)`` complex array. ``ids``
    are the sample ids of the originating dataset (``0..count-1`` for a
    freshly generated or loaded dataset; subsets keep their parents' ids).
    """

    def __init__(self, channels, paths=None, provenance: str = "synthetic",
                 seed: Optional[int] = None, ids=None):
        channels = np.asarray(channels, dtype=np.complex128)
        if channels.ndim != 2 or channels.shape[0] == 0 or channels.shape[1] == 0:
            raise DimensionError(f"channels must be a non-empty 2-D array, got {channels.shape}")
        if provenance not in ("synthetic", "ingested"):
            raise ConfigError(f"unknown provenance {provenance!r}")
        self.channels = channels
        self.paths = paths
        self.provenance = provenance
        self.seed = seed
        self.ids = np.arange(len(channels)) if ids is None else np.asarray(ids, dtype=np.int64)
        if len(self.ids) != len(channels) or len(np.unique(self.ids)) != len(self.ids):
            raise ConfigError("sample ids must be unique and match the channel count")

    @property
    def n_antennas(self) -> int:
        return self.channels.shape[1]

    def __len__(self) -> int:
        return self.channels.shape[0]

    def __getitem__(self, i: int) -> ChannelSample:
        paths = tuple(self.paths[i]) if self.paths is not None else ()
        return ChannelSample(h=self.channels[i], paths=paths, sample_id=int(self.ids[i]))

    @property
    def samples(self) -> list:
        return [self[i] for i in range(len(self))]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        paths = [self.paths[i] for i in indices] if self.paths is not None else None
        return Dataset(self.channels[indices], paths, self.provenance, self.seed,
                       self.ids[indices])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.channels.shape == other.channels.shape
                and np.array_equal(self.channels, other.channels)
                and np.array_equal(self.ids, other.ids))

    def __repr__(self) -> str:
        return (f"Dataset(count={len(self)}, n_antennas={self.n_antennas}, "
                f"provenance={self.provenance!r}, seed={self.seed})")


def generate_dataset(spec: SyntheticSpec, n_antennas: int, spacing: float = 0.5,
                     seed: int = 0) -> Dataset:
    """Draw ``spec.count`` channels; sample ``i`` uses its own random stream."""
    spec.validate()
    channels = np.empty((spec.count, n_antennas), dtype=np.complex128)
    all_paths = []
    for i in range(spec.count):
        rng = RngStream(seed, stream_id(STREAM_DATASET, i))
        paths = _draw_paths(spec, rng)
        channels[i] = synthesize_channel(paths, n_antennas, spacing).h
        all_paths.append(tuple(paths))
    return Dataset(channels, all_paths, "synthetic", seed)


def split_dataset(ds: Dataset, train_fraction: float, seed: int = 0):
    """Shuffle and partition into (train, test); train gets ``floor(f * n)``."""
    if not 0.0 < train_fraction < 1.0:
        raise DomainError(f"train fraction must lie in (0, 1), got {train_fraction}")
    perm = RngStream(seed, stream_id(STREAM_SPLIT)).permutation(len(ds))
    n_train = int(math.floor(train_fraction * len(ds)))
    if n_train == 0 or n_train == len(ds):
        raise DomainError(f"fraction {train_fraction} of {len(ds)} samples leaves a split empty")
    return ds.subset(perm[:n_train]), ds.subset(perm[n_train:])


# ---------------------------------------------------------------------------
# file formats


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _save_csv(ds, path)
        return
    data = np.empty((len(ds), 2 * ds.n_antennas), dtype="<f8")
    data[:, 0::2] = ds.channels.real
    data[:, 1::2] = ds.channels.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, ds.n_antennas, len(ds)))
        fh.write(data.tobytes())


def _save_csv(ds: Dataset, path: Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# n_antennas={ds.n_antennas}\n")
        for row in ds.channels:
            vals = np.empty(2 * len(row))
            vals[0::2] = row.real
            vals[1::2] = row.imag
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")


def load_dataset(path) -> Dataset:
    """Read a binary ``.baln`` file, or a CSV file when the suffix is ``.csv``."""
    path = Path(path)
    if not path.exists():
        raise DatasetParseError(f"{path}: no such file")
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetParseError(f"{path}: file shorter than header")
    magic, version, n_ant, count = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise DatasetParseError(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise DatasetParseError(f"{path}: unsupported format version {version}")
    if n_ant < 1 or count < 1:
        raise DatasetParseError(f"{path}: header declares n_antennas={n_ant}, count={count}")
    record = 16 * n_ant
    payload = len(raw) - _HEADER.size
    if payload < record * count:
        bad = payload // record
        raise DatasetParseError(
            f"{path}: record {bad} truncated (header declares {count} records of "
            f"{n_ant} antennas, payload holds {payload} bytes)")
    if payload > record * count:
        raise DatasetParseError(
            f"{path}: payload of {payload} bytes does not match header "
            f"({count} records x {n_ant} antennas); record length mismatch")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(count, 2 * n_ant)
    _check_finite(data, path)
    channels = data[:, 0::2] + 1j * data[:, 1::2]
    return Dataset(channels, None, "ingested")


def _check_finite(data: np.ndarray, path) -> None:
    bad = ~np.isfinite(data).all(axis=1)
    if bad.any():
        raise DatasetParseError(f"{path}: record {int(np.argmax(bad))} has non-finite entries")


def _load_csv(path: Path) -> Dataset:
    declared = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "n_antennas=" in line:
                    try:
                        declared = int(line.split("n_antennas=", 1)[1].split()[0])
                    except ValueError:
                        raise DatasetParseError(f"{path}: malformed header {line!r}") from None
                continue
            idx = len(rows)
            try:
                vals = [float(v) for v in line.split(",")]
            except ValueError:
                raise DatasetParseError(f"{path}: record {idx} has a non-numeric field") from None
            if len(vals) % 2:
                raise DatasetParseError(f"{path}: record {idx} has an odd number of fields")
            n_ant = len(vals) // 2
            expected = declared if declared is not None else (len(rows[0]) // 2 if rows else n_ant)
            if n_ant != expected:
                raise DatasetParseError(
                    f"{path}: record {idx} has {n_ant} antennas, expected {expected}")
            rows.append(vals)
    if not rows:
        raise DatasetParseError(f"{path}: no records")
    data = np.asarray(rows, dtype=float)
    _check_finite(data, path)
    return Dataset(data[:, 0::2] + 1j * data[:, 1::2], None, "ingested")


# ---------------------------------------------------------------------------
# measurement model


def _check_beam(h: np.ndarray, w: np.ndarray):
    if h.ndim != 1 or w.shape[0] != h.shape[0]:
        raise DimensionError(f"channel length {h.shape} vs beam {w.shape}")


def receive(h, w, radio: RadioConfig, rng: Optional[RngStream] = None,
            counter: Optional[MeasurementCounter] = None) -> complex:
    """One received pilot sample for beam ``w``."""
    h = np.asarray(h, dtype=np.complex128)
    w = np.asarray(w, dtype=np.complex128)
    _check_beam(h, w)
    if w.ndim != 1:
        raise DimensionError("beam must be a vector")
    if abs(np.linalg.norm(w) - 1.0) > 1e-9:
        raise DomainError("beam must be unit-norm")
    y = math.sqrt(radio.tx_power) * np.vdot(h, w)
    if radio.noise_var > 0:
        if rng is None:
            raise DomainError("a random stream is required when noise_var > 0")
        y += complex_gaussian(rng, radio.noise_var)
    if counter is not None:
        counter.add(1)
    return complex(y)


def snr_db(h, w, radio: RadioConfig) -> float:
    if radio.noise_var <= 0:
        raise DomainError("SNR undefined for zero noise variance")
    h = np.asarray(h, dtype=np.complex128)
    w = np.asarray(w, dtype=np.complex128)
    _check_beam(h, w)
    return 10.0 * math.log10(radio.tx_power * abs(np.vdot(h, w)) ** 2 / radio.noise_var)


def sweep_measure(h, codebook, radio: RadioConfig, rng: Optional[RngStream] = None,
                  counter: Optional[MeasurementCounter] = None) -> np.ndarray:
    """Received power for each column of ``codebook``; independent noise per beam.

    Noise is drawn column by column in the same order as repeated
    :func:`receive` calls on the same stream.
    """
    h = np.asarray(h, dtype=np.complex128)
    codebook = np.asarray(codebook, dtype=np.complex128)
    if codebook.ndim != 2:
        raise DimensionError("codebook must be a matrix")
    _check_beam(h, codebook)
    if not np.allclose(np.linalg.norm(codebook, axis=0), 1.0, atol=1e-9):
        raise DomainError("codebook columns must be unit-norm")
    y = math.sqrt(radio.tx_power) * (h.conj() @ codebook)
    if radio.noise_var > 0:
        if rng is None:
            raise DomainError("a random stream is required when noise_var > 0")
        y = y + complex_gaussian(rng, radio.noise_var, codebook.shape[1])
    if counter is not None:
        counter.add(codebook.shape[1])
    return np.abs(y) ** 2
