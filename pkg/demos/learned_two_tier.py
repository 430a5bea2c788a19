"""
Learning a two-tier probing codebook
====================================

A scaled-down run of the desk experiment: 32 antennas, 64 DFT beams and
6000 channels, so it finishes in under a minute. The hierarchical model
spends N1 coarse probes to pick one of G fine codebooks, then N2 fine
probes to predict the beam. The single-tier model spends the same N1 + N2
probes on one learned codebook.
"""

import logging

from beamalign.aligner import TrainConfig
from beamalign.channel import SyntheticSpec
from beamalign.harness import (ExperimentConfig, evaluate_methods, prepare_data,
                               train_learned)
from beamalign.numerics import RngStream

logging.basicConfig(level=logging.WARNING, format="%(message)s")

cfg = ExperimentConfig(
    synthetic=SyntheticSpec(count=6000),
    n_antennas=32, n_beams=64, n_fine_grid=512, n_groups=3, n1=4, n2=6,
    training=TrainConfig(batch_size=64, max_epochs=80, patience=10,
                         predictor_hidden=(128, 128)),
)
data = prepare_data(cfg)
print("cluster centroids (sin psi):", data.train_labels.clusters.centroids.round(3))

models = train_learned(cfg, data, cfg.n1, cfg.n2)
rows = evaluate_methods(cfg, data, cfg.n1, cfg.n2, cfg.noise_psd_dbm_per_hz, models)
for r in rows:
    print(f"{r.method:>15}: {r.measurements:3d} measurements, accuracy {r.accuracy:.3f}")

# a single UE, step by step
h = data.test.channels[0]
beam, trace = models.hierarchical.align(h, RngStream(cfg.seed, 99))
print("coarse powers:", trace["z_coarse"])
print("selected fine codebook:", trace["k"], "predicted beam:", beam,
      "oracle beam:", data.test_labels.oracle[0])
