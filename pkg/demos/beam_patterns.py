"""
Where do the learned fine beams point?
======================================

Train a small hierarchical model, then measure how much of each fine
codebook's gain falls inside the direction cell its branch serves. The
pattern CSVs written here can be plotted with any tool: one row per point
of a 1024-point sin grid, one column per beam in dB.
"""

from pathlib import Path

from beamalign.aligner import TrainConfig
from beamalign.channel import SyntheticSpec
from beamalign.harness import (ExperimentConfig, export_patterns, pattern_concentration,
                               prepare_data, train_learned)

cfg = ExperimentConfig(
    synthetic=SyntheticSpec(count=6000),
    n_antennas=32, n_beams=64, n_fine_grid=512, n_groups=3, n1=4, n2=6,
    training=TrainConfig(batch_size=64, max_epochs=80, patience=10,
                         predictor_hidden=(128, 128)),
)
data = prepare_data(cfg)
model = train_learned(cfg, data, cfg.n1, cfg.n2, methods=("learned-hier",)).hierarchical

cells = data.train_labels.clusters.cells()
share = pattern_concentration(model, data.train_labels.clusters)
for k, ((lo, hi), s) in enumerate(zip(cells, share)):
    print(f"fine codebook {k}: cell [{lo:+.2f}, {hi:+.2f}], {100 * s:.0f}% of gain inside")

out = Path("out/patterns")
for p in export_patterns(model, data.train_labels, out):
    print("wrote", p)
