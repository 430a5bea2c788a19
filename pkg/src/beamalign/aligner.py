"""Learned two-tier probing: coarse codebook + selector, fine codebooks + predictors.

Training follows the two-step procedure: the coarse codebook and selector
are fitted to direction-cluster labels first, then frozen; each sample is
hard-routed by the selector and only the chosen branch's fine codebook and
predictor receive gradient from the beam-index cross-entropy.
"""
from __future__ import annotations

import json
import logging
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .channel import ChannelSample, Dataset, MeasurementCounter, RadioConfig
from .codebook import PhaseCodebook
from .errors import CheckpointError, ConfigError, DimensionError, UsageError
from .labeling import LabelSet
from .neural import (Mlp, MlpCache, OptimizerState, TransformStats, input_transform,
                     input_transform_grad, optimizer_step, probe_backward, probe_forward,
                     softmax_cross_entropy)
from .numerics import (STREAM_EVAL_NOISE, STREAM_INIT, STREAM_SHUFFLE, STREAM_TRAIN_NOISE,
                       RngStream, complex_gaussian, stream_id)

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"BALM"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIQ")

STAGE_COARSE, STAGE_FINE, STAGE_SINGLE, STAGE_JOINT = 0, 1, 2, 3


@dataclass
class AlignmentConfig:
    n_antennas: int
    n_beams: int
    n1: int
    n2: int
    n_groups: int
    radio: RadioConfig
    n_grid: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1 or self.n_groups < 1:
            raise ConfigError("n1, n2 and n_groups must be >= 1")
        if self.n_beams < 2:
            raise ConfigError("transmission codebook needs at least 2 beams")
        if self.radio.n_antennas != self.n_antennas:
            raise ConfigError("radio antenna count disagrees with the alignment config")
        if self.n1 + self.n2 >= self.n_beams:
            warnings.warn("probing budget n1 + n2 is not smaller than the codebook size")

    @property
    def spacing(self) -> float:
        return self.radio.spacing

    def to_dict(self) -> dict:
        d = asdict(self)
        d["radio"] = asdict(self.radio)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AlignmentConfig":
        d = dict(d)
        d["radio"] = RadioConfig(**d["radio"])
        return cls(**d)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 20
    validation_fraction: float = 0.1
    selector_hidden: tuple = (64, 64)
    predictor_hidden: tuple = (256, 256)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        kw = dict(d)
        for key in ("selector_hidden", "predictor_hidden"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


def worst_case_sweep_count(config: AlignmentConfig) -> int:
    """Beams the BS sweeps if every fine codebook is needed by some UE."""
    return config.n1 + config.n_groups * config.n2


# ---------------------------------------------------------------------------
# inference helpers


def select_fine(z_coarse, selector: Mlp, stats: TransformStats):
    """Return ``(k*, p)``; ``k*`` is the argmax of the selector output."""
    z_coarse = np.asarray(z_coarse, dtype=float)
    if z_coarse.shape[-1] != selector.sizes[0]:
        raise DimensionError(f"{z_coarse.shape[-1]} coarse powers for a "
                             f"{selector.sizes[0]}-input selector")
    p, _ = selector.forward(input_transform(z_coarse, stats))
    return np.argmax(p, axis=-1), p


def predict_beam(z_coarse, z_fine, predictor: Mlp, stats: TransformStats):
    """Return ``(i*, q)`` from concatenated coarse and fine powers."""
    z = np.concatenate([np.asarray(z_coarse, dtype=float), np.asarray(z_fine, dtype=float)],
                       axis=-1)
    if z.shape[-1] != predictor.sizes[0]:
        raise DimensionError(f"{z.shape[-1]} powers for a {predictor.sizes[0]}-input predictor")
    q, _ = predictor.forward(input_transform(z, stats))
    return np.argmax(q, axis=-1), q


def eval_noise(sample_ids, count: int, noise_var: float, seed: int) -> np.ndarray:
    """Fixed per-sample evaluation noise, ``(len(sample_ids), count)`` complex.

    Sample ``i`` always draws from stream ``(seed, EVAL, i)``, so a method that
    needs fewer measurements sees a prefix of the same realisation.
    """
    out = np.empty((len(sample_ids), count), dtype=np.complex128)
    for r, sid in enumerate(sample_ids):
        out[r] = complex_gaussian(RngStream(seed, stream_id(STREAM_EVAL_NOISE, int(sid))),
                                  noise_var, count)
    return out


# ---------------------------------------------------------------------------
# models


@dataclass
class HierarchicalAligner:
    config: AlignmentConfig
    coarse: PhaseCodebook
    selector: Mlp
    fine: list
    predictors: list
    coarse_stats: TransformStats
    fine_stats: list

    def __post_init__(self):
        c = self.config
        if self.coarse.theta.shape != (c.n_antennas, c.n1):
            raise ConfigError(f"coarse codebook shape {self.coarse.theta.shape} != "
                              f"({c.n_antennas}, {c.n1})")
        if not len(self.fine) == len(self.predictors) == len(self.fine_stats) == c.n_groups:
            raise ConfigError("need one fine codebook, predictor and stats per group")
        for pc in self.fine:
            if pc.theta.shape != (c.n_antennas, c.n2):
                raise ConfigError(f"fine codebook shape {pc.theta.shape} != "
                                  f"({c.n_antennas}, {c.n2})")
        if self.selector.sizes[0] != c.n1 or self.selector.sizes[-1] != c.n_groups:
            raise ConfigError("selector dimensions disagree with the config")
        for g in self.predictors:
            if g.sizes[0] != c.n1 + c.n2 or g.sizes[-1] != c.n_beams:
                raise ConfigError("predictor dimensions disagree with the config")

    @classmethod
    def init(cls, config: AlignmentConfig, train: TrainConfig = TrainConfig()):
        rng = RngStream(config.seed, stream_id(STREAM_INIT, 0))
        coarse = PhaseCodebook.random(config.n_antennas, config.n1, rng)
        selector = Mlp.init([config.n1, *train.selector_hidden, config.n_groups], rng)
        fine = [PhaseCodebook.random(config.n_antennas, config.n2, rng)
                for _ in range(config.n_groups)]
        predictors = [Mlp.init([config.n1 + config.n2, *train.predictor_hidden,
                                config.n_beams], rng) for _ in range(config.n_groups)]
        unit = TransformStats(np.zeros(config.n1), np.ones(config.n1))
        unit2 = TransformStats(np.zeros(config.n1 + config.n2), np.ones(config.n1 + config.n2))
        return cls(config, coarse, selector, fine, predictors, unit,
                   [TransformStats(unit2.mean.copy(), unit2.std.copy())
                    for _ in range(config.n_groups)])

    @property
    def measurements(self) -> int:
        return self.config.n1 + self.config.n2

    def coarse_params(self) -> dict:
        return {"theta_c": self.coarse.theta, **self.selector.params("f")}

    def fine_params(self) -> dict:
        out = {}
        for k in range(self.config.n_groups):
            out[f"theta_f{k}"] = self.fine[k].theta
            out.update(self.predictors[k].params(f"g{k}"))
        return out

    def params(self) -> dict:
        return {**self.coarse_params(), **self.fine_params()}

    @property
    def _sqrt_rho(self) -> float:
        return math.sqrt(self.config.radio.tx_power)

    # -- losses with explicit noise (used by training and gradient checks) --

    def coarse_loss(self, channels, groups, noise_c=None, reduction="mean"):
        """Selector cross-entropy and gradients for the coarse parameters."""
        z, pcache = probe_forward(self.coarse.theta, channels, self._sqrt_rho, noise_c)
        t = input_transform(z, self.coarse_stats)
        logits, inputs, pre = self.selector.logits(t)
        loss, dlogits = softmax_cross_entropy(logits, groups, reduction)
        grads, dt = self.selector.backward(_cache(inputs, pre), dlogits, "f")
        dz = input_transform_grad(z, self.coarse_stats, dt)
        grads["theta_c"] = probe_backward(pcache, dz)
        return loss, grads

    def route(self, channels, noise_c=None):
        """Coarse powers and the selected branch for each channel."""
        z, _ = probe_forward(self.coarse.theta, channels, self._sqrt_rho, noise_c)
        k, _ = select_fine(z, self.selector, self.coarse_stats)
        return z, k

    def fine_loss(self, channels, beams, noise_c=None, noise_f=None, reduction="mean"):
        """Beam cross-entropy with hard routing; gradients only for used branches."""
        n = len(channels)
        z_c, k_star = self.route(channels, noise_c)
        total = 0.0
        grads = {}
        for k in np.unique(k_star):
            rows = np.flatnonzero(k_star == k)
            loss_k, grads_k = self._branch_loss(int(k), channels[rows], z_c[rows], beams[rows],
                                                None if noise_f is None else noise_f[rows])
            total += loss_k
            grads.update(grads_k)
        if reduction == "mean":
            total /= n
            for key in grads:
                grads[key] /= n
        return total, grads

    def _branch_loss(self, k, channels, z_c, beams, noise_f):
        theta = self.fine[k].theta
        z_f, pcache = probe_forward(theta, channels, self._sqrt_rho, noise_f)
        z = np.concatenate([z_c, z_f], axis=1)
        t = input_transform(z, self.fine_stats[k])
        g = self.predictors[k]
        logits, inputs, pre = g.logits(t)
        loss, dlogits = softmax_cross_entropy(logits, beams, "sum")
        grads, dt = g.backward(_cache(inputs, pre), dlogits, f"g{k}")
        dz = input_transform_grad(z, self.fine_stats[k], dt)
        grads[f"theta_f{k}"] = probe_backward(pcache, dz[:, self.config.n1:])
        return loss, grads

    # -- inference --

    def predict(self, channels, noise=None):
        """Vectorised alignment; ``noise`` has at least ``n1 + n2`` columns, or is None.

        Returns ``(beam_index, selected_branch)`` arrays.
        """
        channels = np.atleast_2d(np.asarray(channels, dtype=np.complex128))
        n1 = self.config.n1
        noise_c = None if noise is None else noise[:, :n1]
        z_c, k_star = self.route(channels, noise_c)
        out = np.empty(len(channels), dtype=np.int64)
        for k in np.unique(k_star):
            rows = np.flatnonzero(k_star == k)
            noise_f = None if noise is None else noise[rows, n1:n1 + self.config.n2]
            z_f, _ = probe_forward(self.fine[k].theta, channels[rows], self._sqrt_rho, noise_f)
            out[rows], _ = predict_beam(z_c[rows], z_f, self.predictors[k], self.fine_stats[k])
        return out, k_star

    def align(self, sample, rng: Optional[RngStream] = None,
              counter: Optional[MeasurementCounter] = None):
        """Coarse sweep, branch selection, fine sweep, beam prediction for one UE.

        Returns ``(beam_index, trace)``; the trace holds ``z_coarse``, ``k``,
        ``z_fine``, ``p``, ``q`` and the number of measurements consumed.
        """
        h = sample.h if isinstance(sample, ChannelSample) else np.asarray(sample)
        if h.shape != (self.config.n_antennas,):
            raise DimensionError(f"channel shape {h.shape} vs {self.config.n_antennas} antennas")
        radio = self.config.radio
        if radio.noise_var > 0 and rng is None:
            raise UsageError("noisy alignment needs an RngStream for the measurement noise")
        local = counter if counter is not None else MeasurementCounter()
        before = local.count

        def sweep(theta):
            noise = None
            if radio.noise_var > 0:
                noise = complex_gaussian(rng, radio.noise_var, theta.shape[1])[None, :]
            z, _ = probe_forward(theta, h[None, :], self._sqrt_rho, noise)
            local.add(theta.shape[1])
            return z[0]

        z_c = sweep(self.coarse.theta)
        k, p = select_fine(z_c, self.selector, self.coarse_stats)
        k = int(k)
        z_f = sweep(self.fine[k].theta)
        idx, q = predict_beam(z_c, z_f, self.predictors[k], self.fine_stats[k])
        trace = {"z_coarse": z_c, "k": k, "z_fine": z_f, "p": p, "q": q,
                 "measurements": local.count - before}
        return int(idx), trace


@dataclass
class SingleTierAligner:
    config: AlignmentConfig    # n1 holds the probing size, n2 is unused
    codebook: PhaseCodebook
    predictor: Mlp
    stats: TransformStats

    @classmethod
    def init(cls, config: AlignmentConfig, n_probes: int, train: TrainConfig = TrainConfig()):
        rng = RngStream(config.seed, stream_id(STREAM_INIT, 1))
        codebook = PhaseCodebook.random(config.n_antennas, n_probes, rng)
        predictor = Mlp.init([n_probes, *train.predictor_hidden, config.n_beams], rng)
        return cls(config, codebook, predictor,
                   TransformStats(np.zeros(n_probes), np.ones(n_probes)))

    @property
    def measurements(self) -> int:
        return self.codebook.size

    def params(self) -> dict:
        return {"theta": self.codebook.theta, **self.predictor.params("g")}

    def loss(self, channels, beams, noise=None, reduction="mean"):
        sqrt_rho = math.sqrt(self.config.radio.tx_power)
        z, pcache = probe_forward(self.codebook.theta, channels, sqrt_rho, noise)
        t = input_transform(z, self.stats)
        logits, inputs, pre = self.predictor.logits(t)
        loss, dlogits = softmax_cross_entropy(logits, beams, reduction)
        grads, dt = self.predictor.backward(_cache(inputs, pre), dlogits, "g")
        grads["theta"] = probe_backward(pcache, input_transform_grad(z, self.stats, dt))
        return loss, grads

    def predict(self, channels, noise=None):
        channels = np.atleast_2d(np.asarray(channels, dtype=np.complex128))
        sqrt_rho = math.sqrt(self.config.radio.tx_power)
        z, _ = probe_forward(self.codebook.theta, channels, sqrt_rho,
                             None if noise is None else noise[:, :self.measurements])
        q, _ = self.predictor.forward(input_transform(z, self.stats))
        return np.argmax(q, axis=-1)

    def align(self, sample, rng: Optional[RngStream] = None,
              counter: Optional[MeasurementCounter] = None) -> int:
        h = sample.h if isinstance(sample, ChannelSample) else np.asarray(sample)
        noise = None
        if self.config.radio.noise_var > 0:
            if rng is None:
                raise UsageError("noisy alignment needs an RngStream for the measurement noise")
            noise = complex_gaussian(rng, self.config.radio.noise_var, self.measurements)[None, :]
        if counter is not None:
            counter.add(self.measurements)
        return int(self.predict(h[None, :], noise)[0])


def _cache(inputs, pre):
    return MlpCache(inputs, pre, None)


# ---------------------------------------------------------------------------
# training


def _snapshot(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def _restore(params: dict, snap: dict) -> None:
    for k, v in snap.items():
        params[k][...] = v


def _carve_validation(n: int, fraction: float, rng: RngStream):
    perm = rng.permutation(n)
    n_val = int(round(fraction * n)) if n >= 10 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _fit(params: dict, batch_loss, val_loss, n_train: int, hyper: TrainConfig,
         seed: int, stage: int, label: str):
    """Mini-batch Adam with early stopping on validation loss.

    ``batch_loss(indices, noise_rng)`` returns ``(loss, grads)`` for training
    rows ``indices``; ``val_loss()`` returns a scalar. Returns the per-epoch
    history of (train_loss, val_loss); the best-validation parameters are
    restored in place.
    """
    state = OptimizerState(learning_rate=hyper.learning_rate)
    noise_rng = RngStream(seed, stream_id(STREAM_TRAIN_NOISE, stage))
    shuffle_rng = RngStream(seed, stream_id(STREAM_SHUFFLE, stage))
    best = val_loss()
    best_params = _snapshot(params)
    history = [(float("nan"), best)]
    since_best = 0
    for epoch in range(hyper.max_epochs):
        order = shuffle_rng.permutation(n_train)
        total, seen = 0.0, 0
        for s in range(0, n_train, hyper.batch_size):
            idx = order[s:s + hyper.batch_size]
            loss, grads = batch_loss(idx, noise_rng)
            optimizer_step(params, grads, state)
            total += loss * len(idx)
            seen += len(idx)
        current = val_loss()
        history.append((total / max(seen, 1), current))
        if current < best:
            best, since_best = current, 0
            best_params = _snapshot(params)
        else:
            since_best += 1
        logger.debug("%s epoch %d train %.5f val %.5f", label, epoch, history[-1][0], current)
        if since_best >= hyper.patience:
            break
    _restore(params, best_params)
    return history


def _noise(rng: RngStream, var: float, shape):
    return complex_gaussian(rng, var, shape) if var > 0 else None


@dataclass
class TrainingLog:
    coarse: list = field(default_factory=list)
    fine: list = field(default_factory=list)


def _fixed_noise(config: AlignmentConfig, stage: int, shape):
    rng = RngStream(config.seed, stream_id(STREAM_TRAIN_NOISE, 100 + stage))
    return _noise(rng, config.radio.noise_var, shape)


def train_coarse(model: HierarchicalAligner, train: Dataset, labels: LabelSet,
                 hyper: TrainConfig = TrainConfig()):
    """Jointly fit the coarse codebook and the selector to the group labels."""
    if len(labels) != len(train):
        raise ConfigError("labels do not match the training set")
    cfg = model.config
    var = cfg.radio.noise_var
    fit_idx, val_idx = _carve_validation(len(train), hyper.validation_fraction,
                                         RngStream(cfg.seed, stream_id(STREAM_SHUFFLE, 50)))
    H, groups = train.channels[fit_idx], labels.group[fit_idx]
    z0, _ = probe_forward(model.coarse.theta, H, model._sqrt_rho,
                          _fixed_noise(cfg, STAGE_COARSE, (len(H), cfg.n1)))
    model.coarse_stats = TransformStats.fit(z0)
    Hv, gv = train.channels[val_idx], labels.group[val_idx]
    nv = _fixed_noise(cfg, 10 + STAGE_COARSE, (len(Hv), cfg.n1))

    def batch_loss(idx, rng):
        return model.coarse_loss(H[idx], groups[idx], _noise(rng, var, (len(idx), cfg.n1)))

    def val_loss():
        if len(Hv) == 0:
            return 0.0
        return model.coarse_loss(Hv, gv, nv)[0]

    return _fit(model.coarse_params(), batch_loss, val_loss, len(H), hyper,
                cfg.seed, STAGE_COARSE, "coarse")


def _fit_fine_stats(model: HierarchicalAligner, H: np.ndarray):
    cfg = model.config
    z_c, k_star = model.route(H, _fixed_noise(cfg, STAGE_FINE, (len(H), cfg.n1)))
    noise_f = _fixed_noise(cfg, 20 + STAGE_FINE, (len(H), cfg.n2))
    for k in range(cfg.n_groups):
        rows = np.flatnonzero(k_star == k)
        if len(rows) < 2:
            rows = np.arange(len(H))
        z_f, _ = probe_forward(model.fine[k].theta, H[rows], model._sqrt_rho,
                               None if noise_f is None else noise_f[rows])
        model.fine_stats[k] = TransformStats.fit(np.concatenate([z_c[rows], z_f], axis=1))


def train_fine(model: HierarchicalAligner, train: Dataset, labels: LabelSet,
               hyper: TrainConfig = TrainConfig()):
    """Fit fine codebooks and predictors behind the frozen coarse stage."""
    if len(labels) != len(train):
        raise ConfigError("labels do not match the training set")
    cfg = model.config
    var = cfg.radio.noise_var
    fit_idx, val_idx = _carve_validation(len(train), hyper.validation_fraction,
                                         RngStream(cfg.seed, stream_id(STREAM_SHUFFLE, 51)))
    H, beams = train.channels[fit_idx], labels.oracle[fit_idx]
    _fit_fine_stats(model, H)
    Hv, bv = train.channels[val_idx], labels.oracle[val_idx]
    nvc = _fixed_noise(cfg, 10 + STAGE_FINE, (len(Hv), cfg.n1))
    nvf = _fixed_noise(cfg, 30 + STAGE_FINE, (len(Hv), cfg.n2))

    def batch_loss(idx, rng):
        nc = _noise(rng, var, (len(idx), cfg.n1))
        nf = _noise(rng, var, (len(idx), cfg.n2))
        return model.fine_loss(H[idx], beams[idx], nc, nf)

    def val_loss():
        if len(Hv) == 0:
            return 0.0
        return model.fine_loss(Hv, bv, nvc, nvf)[0]

    return _fit(model.fine_params(), batch_loss, val_loss, len(H), hyper,
                cfg.seed, STAGE_FINE, "fine")


def train_hierarchical(train: Dataset, labels: LabelSet, config: AlignmentConfig,
                       hyper: TrainConfig = TrainConfig(), end_to_end: bool = False):
    """Build and train a :class:`HierarchicalAligner`.

    The default is the two-step procedure. ``end_to_end=True`` instead
    optimises both losses jointly from the start (every parameter updated
    at every step), kept for comparison.
    """
    model = HierarchicalAligner.init(config, hyper)
    log = TrainingLog()
    if end_to_end:
        log.fine = _train_joint(model, train, labels, hyper)
        return model, log
    log.coarse = train_coarse(model, train, labels, hyper)
    log.fine = train_fine(model, train, labels, hyper)
    return model, log


def _train_joint(model, train, labels, hyper):
    cfg = model.config
    var = cfg.radio.noise_var
    H = train.channels
    z0, _ = probe_forward(model.coarse.theta, H, model._sqrt_rho,
                          _fixed_noise(cfg, STAGE_JOINT, (len(H), cfg.n1)))
    model.coarse_stats = TransformStats.fit(z0)
    _fit_fine_stats(model, H)

    def batch_loss(idx, rng):
        nc = _noise(rng, var, (len(idx), cfg.n1))
        nf = _noise(rng, var, (len(idx), cfg.n2))
        lc, gc = model.coarse_loss(H[idx], labels.group[idx], nc)
        lf, gf = model.fine_loss(H[idx], labels.oracle[idx], nc, nf)
        return lc + lf, {**gc, **gf}

    def val_loss():
        return float("inf")

    hyper_joint = TrainConfig(**{**asdict(hyper), "patience": hyper.max_epochs + 1})
    return _fit(model.params(), batch_loss, val_loss, len(H), hyper_joint,
                cfg.seed, STAGE_JOINT, "joint")


def train_single_tier(train: Dataset, labels: LabelSet, n_probes: int,
                      config: AlignmentConfig, hyper: TrainConfig = TrainConfig()):
    """One learned probing codebook of ``n_probes`` beams plus one predictor."""
    if n_probes < 1:
        raise ConfigError("need at least one probing beam")
    if len(labels) != len(train):
        raise ConfigError("labels do not match the training set")
    model = SingleTierAligner.init(config, n_probes, hyper)
    var = config.radio.noise_var
    fit_idx, val_idx = _carve_validation(len(train), hyper.validation_fraction,
                                         RngStream(config.seed, stream_id(STREAM_SHUFFLE, 52)))
    H, beams = train.channels[fit_idx], labels.oracle[fit_idx]
    sqrt_rho = math.sqrt(config.radio.tx_power)
    z0, _ = probe_forward(model.codebook.theta, H, sqrt_rho,
                          _fixed_noise(config, STAGE_SINGLE, (len(H), n_probes)))
    model.stats = TransformStats.fit(z0)
    Hv, bv = train.channels[val_idx], labels.oracle[val_idx]
    nv = _fixed_noise(config, 10 + STAGE_SINGLE, (len(Hv), n_probes))

    def batch_loss(idx, rng):
        return model.loss(H[idx], beams[idx], _noise(rng, var, (len(idx), n_probes)))

    def val_loss():
        if len(Hv) == 0:
            return 0.0
        return model.loss(Hv, bv, nv)[0]

    history = _fit(model.params(), batch_loss, val_loss, len(H), hyper,
                   config.seed, STAGE_SINGLE, "single")
    return model, history


# ---------------------------------------------------------------------------
# checkpoints


def _model_arrays(model) -> dict:
    if isinstance(model, HierarchicalAligner):
        arrays = dict(model.params())
        arrays["stats_c.mean"] = model.coarse_stats.mean
        arrays["stats_c.std"] = model.coarse_stats.std
        for k, st in enumerate(model.fine_stats):
            arrays[f"stats_f{k}.mean"] = st.mean
            arrays[f"stats_f{k}.std"] = st.std
        return arrays
    arrays = dict(model.params())
    arrays["stats.mean"] = model.stats.mean
    arrays["stats.std"] = model.stats.std
    return arrays


def save_model(model, path) -> None:
    """Write a checkpoint: magic, version, JSON header, raw little-endian float64."""
    kind = "hierarchical" if isinstance(model, HierarchicalAligner) else "single"
    arrays = _model_arrays(model)
    names = list(arrays)
    header = {
        "kind": kind,
        "config": model.config.to_dict(),
        "arrays": [[n, list(arrays[n].shape)] for n in names],
    }
    if kind == "hierarchical":
        header["selector_sizes"] = model.selector.sizes
        header["predictor_sizes"] = model.predictors[0].sizes
    else:
        header["predictor_sizes"] = model.predictor.sizes
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_model(path, expect: Optional[AlignmentConfig] = None):
    """Read a checkpoint written by :func:`save_model`.

    Magic and version are verified before any model buffer is allocated. If
    ``expect`` is given, its antenna and codebook counts must match.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_CKPT_HEADER.size)
        if len(head) < _CKPT_HEADER.size:
            raise CheckpointError(f"{path}: truncated header")
        magic, version, blob_len = _CKPT_HEADER.unpack(head)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a model checkpoint (magic {magic!r})")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        try:
            header = json.loads(fh.read(blob_len).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header") from exc
        payload = fh.read()
    try:
        config = AlignmentConfig.from_dict(header["config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt config") from exc
    if expect is not None:
        for key in ("n_antennas", "n_beams"):
            if getattr(expect, key) != getattr(config, key):
                raise ConfigError(f"{path}: checkpoint has {key}={getattr(config, key)}, "
                                  f"expected {getattr(expect, key)}")
    need = sum(int(np.prod(shape)) for _, shape in header["arrays"]) * 8
    if len(payload) != need:
        raise CheckpointError(f"{path}: payload has {len(payload)} bytes, expected {need}")
    arrays, offset = {}, 0
    for name, shape in header["arrays"]:
        size = int(np.prod(shape))
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=size,
                                     offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * size
    try:
        if header["kind"] == "hierarchical":
            return _build_hierarchical(config, header, arrays)
        return _build_single(config, header, arrays)
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing array {exc}") from exc


def _mlp_from(arrays: dict, prefix: str, n_layers: int) -> Mlp:
    return Mlp([arrays[f"{prefix}.W{i}"] for i in range(n_layers)],
               [arrays[f"{prefix}.b{i}"] for i in range(n_layers)])


def _build_hierarchical(config, header, arrays):
    ns = len(header["selector_sizes"]) - 1
    npred = len(header["predictor_sizes"]) - 1
    G = config.n_groups
    return HierarchicalAligner(
        config=config,
        coarse=PhaseCodebook(arrays["theta_c"]),
        selector=_mlp_from(arrays, "f", ns),
        fine=[PhaseCodebook(arrays[f"theta_f{k}"]) for k in range(G)],
        predictors=[_mlp_from(arrays, f"g{k}", npred) for k in range(G)],
        coarse_stats=TransformStats(arrays["stats_c.mean"], arrays["stats_c.std"]),
        fine_stats=[TransformStats(arrays[f"stats_f{k}.mean"], arrays[f"stats_f{k}.std"])
                    for k in range(G)],
    )


def _build_single(config, header, arrays):
    npred = len(header["predictor_sizes"]) - 1
    return SingleTierAligner(config, PhaseCodebook(arrays["theta"]),
                             _mlp_from(arrays, "g", npred),
                             TransformStats(arrays["stats.mean"], arrays["stats.std"]))
