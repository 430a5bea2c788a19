"""Experiment orchestration: data preparation, sweeps, reports, pattern export."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .aligner import (AlignmentConfig, HierarchicalAligner, TrainConfig, eval_noise,
                      train_hierarchical, train_single_tier)
from .baselines import (METHOD_KINDS, MethodSpec, batch_binary, batch_exhaustive,
                        batch_two_tier, measurement_count)
from .channel import (Dataset, RadioConfig, SyntheticSpec, generate_dataset, load_dataset,
                      split_dataset)
from .codebook import beam_gain_linear, dft_codebook, export_pattern_csv, sin_grid
from .errors import ConfigError, DomainError
from .labeling import ClusterModel, LabelSet, build_labels

logger = logging.getLogger(__name__)

# probing codebook sizes (n1, n2) per total budget
TABLE_I = ((3, 3), (4, 4), (4, 6), (6, 6), (6, 8), (6, 10), (6, 12), (6, 14))
TABLE_II = ((3, 3), (3, 5), (3, 7), (4, 8), (5, 9), (6, 10), (6, 12), (6, 14))
SPLIT_TABLES = {"table1": TABLE_I, "table2": TABLE_II}
DEFAULT_PSD_AXIS = (-171.0, -166.0, -161.0, -156.0, -151.0)
REPORT_COLUMNS = ("method", "n1", "n2", "measurements", "noise_psd_dbm_hz", "accuracy",
                  "n_samples", "seed")


@dataclass
class ExperimentConfig:
    """Everything a run needs; physical quantities carry their unit in the name."""

    synthetic: Optional[SyntheticSpec] = field(default_factory=SyntheticSpec)
    dataset_path: Optional[str] = None
    n_antennas: int = 64
    spacing_wavelengths: float = 0.5
    tx_power_dbm: float = 10.0
    noise_psd_dbm_per_hz: float = -161.0
    bandwidth_hz: float = 100e6
    n_beams: int = 128
    n_fine_grid: int = 1024
    n_groups: int = 4
    n1: int = 6
    n2: int = 8
    train_fraction: float = 0.6
    training: TrainConfig = field(default_factory=TrainConfig)
    methods: tuple = METHOD_KINDS
    splits: tuple = TABLE_I
    noise_psd_axis: tuple = DEFAULT_PSD_AXIS
    noise_split: tuple = (6, 8)
    noise_reps: int = 1
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.synthetic is None and not self.dataset_path:
            raise ConfigError("config needs either a synthetic dataset spec or a dataset path")
        for m in self.methods:
            if m not in METHOD_KINDS:
                raise ConfigError(f"unknown method {m!r}")
        if not self.splits:
            raise ConfigError("split axis must be non-empty")
        if not self.noise_psd_axis:
            raise ConfigError("noise PSD axis must be non-empty")
        for n1, n2 in list(self.splits) + [tuple(self.noise_split), (self.n1, self.n2)]:
            if n1 < 1 or n2 < n1:
                raise ConfigError(f"split ({n1}, {n2}) must satisfy 1 <= n1 <= n2")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.noise_reps < 1:
            raise ConfigError("noise_reps must be >= 1")
        if self.bandwidth_hz <= 0:
            raise ConfigError("bandwidth must be positive")

    # -- derived objects --

    def radio(self, psd: Optional[float] = None) -> RadioConfig:
        psd = self.noise_psd_dbm_per_hz if psd is None else psd
        return RadioConfig.from_dbm(self.tx_power_dbm, psd, self.bandwidth_hz,
                                    self.n_antennas, self.spacing_wavelengths)

    def alignment(self, n1: Optional[int] = None, n2: Optional[int] = None,
                  psd: Optional[float] = None) -> AlignmentConfig:
        return AlignmentConfig(self.n_antennas, self.n_beams,
                               self.n1 if n1 is None else n1, self.n2 if n2 is None else n2,
                               self.n_groups, self.radio(psd), self.n_fine_grid, self.seed)

    # -- JSON --

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "dataset": ({"path": self.dataset_path} if self.dataset_path
                        else {"synthetic": _spec_dict(self.synthetic)}),
            "array": {"n_antennas": self.n_antennas,
                      "spacing_wavelengths": self.spacing_wavelengths},
            "radio": {"tx_power_dbm": self.tx_power_dbm,
                      "noise_psd_dbm_per_hz": self.noise_psd_dbm_per_hz,
                      "bandwidth_hz": self.bandwidth_hz},
            "alignment": {"n_beams": self.n_beams, "n_fine_grid": self.n_fine_grid,
                          "n_groups": self.n_groups, "n1": self.n1, "n2": self.n2},
            "train_fraction": self.train_fraction,
            "training": {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in asdict(self.training).items()},
            "methods": list(self.methods),
            "sweeps": {"splits": [list(s) for s in self.splits],
                       "noise_psd_dbm_per_hz": list(self.noise_psd_axis),
                       "noise_split": list(self.noise_split)},
            "evaluation": {"noise_reps": self.noise_reps},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            return cls._from_dict(d)
        except (TypeError, ValueError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def _from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"seed", "output_dir", "dataset", "array", "radio", "alignment",
                 "train_fraction", "training", "methods", "sweeps", "evaluation"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        ds = d.get("dataset", {"synthetic": {}})
        if "path" in ds and ds["path"]:
            kw["dataset_path"] = str(ds["path"])
            kw["synthetic"] = None
        else:
            kw["synthetic"] = SyntheticSpec.from_dict(ds.get("synthetic", {}))
        _take(kw, d.get("array", {}), ("n_antennas", "spacing_wavelengths"), "array")
        _take(kw, d.get("radio", {}), ("tx_power_dbm", "noise_psd_dbm_per_hz", "bandwidth_hz"),
              "radio")
        _take(kw, d.get("alignment", {}), ("n_beams", "n_fine_grid", "n_groups", "n1", "n2"),
              "alignment")
        for key in ("seed", "output_dir", "train_fraction"):
            if key in d:
                kw[key] = d[key]
        if "training" in d:
            kw["training"] = TrainConfig.from_dict(d["training"])
        if "methods" in d:
            kw["methods"] = tuple(d["methods"])
        sweeps = d.get("sweeps", {})
        unknown = set(sweeps) - {"splits", "noise_psd_dbm_per_hz", "noise_split"}
        if unknown:
            raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
        if "splits" in sweeps:
            s = sweeps["splits"]
            if isinstance(s, str):
                if s not in SPLIT_TABLES:
                    raise ConfigError(f"unknown split table {s!r}")
                kw["splits"] = SPLIT_TABLES[s]
            else:
                kw["splits"] = tuple(tuple(int(v) for v in pair) for pair in s)
        if "noise_psd_dbm_per_hz" in sweeps:
            kw["noise_psd_axis"] = tuple(float(v) for v in sweeps["noise_psd_dbm_per_hz"])
        if "noise_split" in sweeps:
            kw["noise_split"] = tuple(int(v) for v in sweeps["noise_split"])
        ev = d.get("evaluation", {})
        if "noise_reps" in ev:
            kw["noise_reps"] = int(ev["noise_reps"])
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _spec_dict(spec: SyntheticSpec) -> dict:
    d = asdict(spec)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    if d["aod_sectors"] is not None:
        d["aod_sectors"] = [list(s) for s in d["aod_sectors"]]
    return d


def _take(kw: dict, section: dict, keys, name: str):
    unknown = set(section) - set(keys)
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    for k in keys:
        if k in section:
            kw[k] = section[k]


def desk_config(**overrides) -> ExperimentConfig:
    """The reference desk experiment: 20k synthetic channels, 64 antennas, G = 4."""
    return ExperimentConfig(**overrides)


# ---------------------------------------------------------------------------
# data


@dataclass
class PreparedData:
    train: Dataset
    test: Dataset
    train_labels: LabelSet
    test_labels: LabelSet
    codebook: object


def load_or_generate(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset_path:
        ds = load_dataset(cfg.dataset_path)
        if ds.n_antennas != cfg.n_antennas:
            raise ConfigError(f"dataset has {ds.n_antennas} antennas, config says {cfg.n_antennas}")
        return ds
    return generate_dataset(cfg.synthetic, cfg.n_antennas, cfg.spacing_wavelengths, cfg.seed)


def prepare_data(cfg: ExperimentConfig, dataset: Optional[Dataset] = None) -> PreparedData:
    """Split, then label; clusters are fitted on the training split only."""
    ds = load_or_generate(cfg) if dataset is None else dataset
    train, test = split_dataset(ds, cfg.train_fraction, cfg.seed)
    V = dft_codebook(cfg.n_antennas, cfg.n_beams, cfg.spacing_wavelengths)
    train_labels = build_labels(train, V, cfg.n_fine_grid, cfg.n_groups, cfg.seed)
    test_labels = build_labels(test, V, cfg.n_fine_grid, cfg.n_groups, cfg.seed,
                               clusters=train_labels.clusters)
    return PreparedData(train, test, train_labels, test_labels, V)


# ---------------------------------------------------------------------------
# reports


def accuracy(predicted, oracle) -> float:
    """Fraction of exact index matches."""
    predicted = np.asarray(predicted)
    oracle = np.asarray(oracle)
    if predicted.shape != oracle.shape:
        raise DomainError("prediction and oracle lengths differ")
    if predicted.size == 0:
        raise DomainError("accuracy of an empty set is undefined")
    return float(np.mean(predicted == oracle))


@dataclass
class ReportRow:
    method: str
    n1: int
    n2: int
    measurements: int
    noise_psd_dbm_hz: float
    accuracy: float
    n_samples: int
    seed: int

    def key(self):
        return (self.method, self.n1, self.n2, self.noise_psd_dbm_hz, self.seed)


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, row: ReportRow):
        if not 0.0 <= row.accuracy <= 1.0:
            raise DomainError(f"accuracy {row.accuracy} outside [0, 1]")
        if any(r.key() == row.key() for r in self.rows):
            raise DomainError(f"duplicate report row {row.key()}")
        self.rows.append(row)

    def select(self, **match) -> list:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([r.method, r.n1, r.n2, r.measurements, repr(float(r.noise_psd_dbm_hz)),
                            repr(float(r.accuracy)), r.n_samples, r.seed])

    def write_metadata(self, path) -> None:
        Path(path).write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")

    @classmethod
    def read_csv(cls, path) -> "ExperimentReport":
        rep = cls()
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                rep.add(ReportRow(r["method"], int(r["n1"]), int(r["n2"]), int(r["measurements"]),
                                  float(r["noise_psd_dbm_hz"]), float(r["accuracy"]),
                                  int(r["n_samples"]), int(r["seed"])))
        return rep


def _metadata(cfg: ExperimentConfig, started: float, kind: str) -> dict:
    return {"config_hash": cfg.hash(), "code_version": __version__, "experiment": kind,
            "wall_time_s": time.time() - started}


# ---------------------------------------------------------------------------
# evaluation


def _eval_seed(seed: int, rep: int) -> int:
    return seed + (rep << 40)


@dataclass
class TrainedModels:
    hierarchical: Optional[HierarchicalAligner] = None
    single: object = None


def train_learned(cfg: ExperimentConfig, data: PreparedData, n1: int, n2: int,
                  psd: Optional[float] = None, methods=None) -> TrainedModels:
    methods = cfg.methods if methods is None else methods
    align_cfg = cfg.alignment(n1, n2, psd)
    out = TrainedModels()
    if "learned-hier" in methods:
        out.hierarchical, _ = train_hierarchical(data.train, data.train_labels, align_cfg,
                                                 cfg.training)
    if "learned-single" in methods:
        out.single, _ = train_single_tier(data.train, data.train_labels, n1 + n2, align_cfg,
                                          cfg.training)
    return out


def evaluate_methods(cfg: ExperimentConfig, data: PreparedData, n1: int, n2: int,
                     psd: float, models: TrainedModels, methods=None) -> list:
    """Accuracy rows for every requested method at one (split, PSD) point."""
    methods = cfg.methods if methods is None else methods
    radio = cfg.radio(psd)
    test = data.test
    oracle = data.test_labels.oracle
    rows = []
    for kind in methods:
        spec = _method_spec(kind, n1, n2)
        accs = []
        for rep in range(cfg.noise_reps):
            count = max(cfg.n_beams, n1 + n2, measurement_count(spec, cfg.n_beams))
            noise = (eval_noise(test.ids, count, radio.noise_var, _eval_seed(cfg.seed, rep))
                     if radio.noise_var > 0 else None)
            pred = _predict(kind, spec, test.channels, data.codebook, radio, noise, models)
            accs.append(accuracy(pred, oracle))
        rows.append(ReportRow(kind, n1, n2, measurement_count(spec, cfg.n_beams), float(psd),
                              float(np.mean(accs)), len(test), cfg.seed))
    return rows


def _method_spec(kind: str, n1: int, n2: int) -> MethodSpec:
    if kind == "two-tier":
        return MethodSpec(kind, n1, n2, wide_size=n1 + n2)
    return MethodSpec(kind, n1, n2)


def _predict(kind, spec, channels, codebook, radio, noise, models: TrainedModels):
    if kind == "exhaustive":
        return batch_exhaustive(channels, codebook, radio, noise)
    if kind == "binary":
        return batch_binary(channels, codebook, radio, noise)
    if kind == "two-tier":
        return batch_two_tier(channels, codebook, spec.wide_size, radio, noise)
    if kind == "learned-hier":
        if models.hierarchical is None:
            raise ConfigError("no trained hierarchical model available")
        return models.hierarchical.predict(channels, noise)[0]
    if models.single is None:
        raise ConfigError("no trained single-tier model available")
    return models.single.predict(channels, noise)


def run_accuracy_vs_measurements(cfg: ExperimentConfig, data: Optional[PreparedData] = None,
                                 out_path=None) -> ExperimentReport:
    """Train learned methods per (n1, n2) split and evaluate every method."""
    started = time.time()
    data = prepare_data(cfg) if data is None else data
    report = ExperimentReport(metadata=_metadata(cfg, started, "accuracy_vs_measurements"))
    psd = cfg.noise_psd_dbm_per_hz
    for n1, n2 in cfg.splits:
        logger.info("split n1=%d n2=%d", n1, n2)
        models = train_learned(cfg, data, n1, n2, psd)
        for row in evaluate_methods(cfg, data, n1, n2, psd, models):
            report.add(row)
        if out_path is not None:
            report.write_csv(out_path)
    report.metadata["wall_time_s"] = time.time() - started
    return report


def run_accuracy_vs_noise(cfg: ExperimentConfig, data: Optional[PreparedData] = None,
                          out_path=None) -> ExperimentReport:
    """Fix the noise split and retrain/evaluate at every noise PSD on the axis."""
    started = time.time()
    data = prepare_data(cfg) if data is None else data
    report = ExperimentReport(metadata=_metadata(cfg, started, "accuracy_vs_noise"))
    n1, n2 = cfg.noise_split
    for psd in cfg.noise_psd_axis:
        logger.info("noise PSD %.1f dBm/Hz", psd)
        models = train_learned(cfg, data, n1, n2, psd)
        for row in evaluate_methods(cfg, data, n1, n2, psd, models):
            report.add(row)
        if out_path is not None:
            report.write_csv(out_path)
    report.metadata["wall_time_s"] = time.time() - started
    return report


# ---------------------------------------------------------------------------
# beam patterns


def pattern_concentration(model: HierarchicalAligner, clusters: ClusterModel,
                          n_points: int = 1024) -> np.ndarray:
    """Share of each fine codebook's integrated gain inside its cluster's cell."""
    u = sin_grid(n_points)
    out = np.empty(model.config.n_groups)
    for k, (lo, hi) in enumerate(clusters.cells()):
        gain = beam_gain_linear(model.fine[k].beams, u, model.config.spacing).sum(axis=1)
        inside = (u >= lo) & (u <= hi)
        out[k] = gain[inside].sum() / gain.sum()
    return out


def export_patterns(model: HierarchicalAligner, labels, out_dir) -> list:
    """Write one pattern CSV per codebook plus the cluster cells; returns the paths.

    ``labels`` is a :class:`LabelSet` or directly its :class:`ClusterModel`.
    """
    clusters = labels.clusters if isinstance(labels, LabelSet) else labels
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    u = sin_grid()
    ids = clusters.assign(u)
    spacing = model.config.spacing
    paths = [out_dir / "pattern_coarse.csv"]
    export_pattern_csv(paths[0], model.coarse.beams, spacing, ids)
    for k, pc in enumerate(model.fine):
        p = out_dir / f"pattern_fine_{k}.csv"
        export_pattern_csv(p, pc.beams, spacing, ids)
        paths.append(p)
    cells = out_dir / "clusters.csv"
    with open(cells, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster_id", "centroid", "sin_low", "sin_high"])
        for k, (lo, hi) in enumerate(clusters.cells()):
            w.writerow([k, repr(float(clusters.centroids[k])), repr(lo), repr(hi)])
    paths.append(cells)
    return paths


def report_plot_data(report: ExperimentReport) -> dict:
    """Group rows into per-method (x, accuracy) series for plotting.

    The x axis is the probing budget n1 + n2 when the report spans several
    splits, otherwise the noise PSD.
    """
    budgets = {r.n1 + r.n2 for r in report.rows}
    psds = {r.noise_psd_dbm_hz for r in report.rows}
    by_noise = len(psds) > 1 and len(budgets) == 1
    series = {}
    for r in report.rows:
        x = r.noise_psd_dbm_hz if by_noise else r.n1 + r.n2
        s = series.setdefault(r.method, {"x": [], "accuracy": [], "measurements": []})
        s["x"].append(x)
        s["accuracy"].append(r.accuracy)
        s["measurements"].append(r.measurements)
    for s in series.values():
        order = np.argsort(s["x"], kind="stable")
        for key in s:
            s[key] = [s[key][i] for i in order]
    return {"x_axis": "noise_psd_dbm_hz" if by_noise else "n1_plus_n2", "series": series}


def resolve_output_dir(cfg: ExperimentConfig, explicit: Optional[str] = None) -> Path:
    """Explicit path, else $BEAMALIGN_OUT, else the config's output_dir."""
    if explicit:
        return Path(explicit)
    env = os.environ.get("BEAMALIGN_OUT")
    return Path(env) if env else Path(cfg.output_dir)
