"""
Channels, codebooks and classical beam search
=============================================

Draw a few geometric channels, look at which DFT beam serves each one, and
compare exhaustive, binary and two-tier search on measurement budget and
hit rate.
"""

import numpy as np

from beamalign.baselines import (MethodSpec, batch_binary, batch_exhaustive, batch_two_tier,
                                 measurement_count)
from beamalign.channel import RadioConfig, SyntheticSpec, generate_dataset
from beamalign.codebook import dft_codebook
from beamalign.labeling import oracle_best_beams

# 2000 channels for a 64-element half-wavelength array, 1 to 3 paths each
ds = generate_dataset(SyntheticSpec(count=2000), n_antennas=64, seed=0)
V = dft_codebook(64, 128)
oracle = oracle_best_beams(ds.channels, V)
print(ds)
print("distinct best beams:", len(np.unique(oracle)))

# 10 dBm over 100 MHz, noise PSD -161 dBm/Hz
radio = RadioConfig.from_dbm(10, -161, 100e6, 64)
rng = np.random.default_rng(0)
noise = np.sqrt(radio.noise_var / 2) * (rng.standard_normal((len(ds), 128))
                                        + 1j * rng.standard_normal((len(ds), 128)))

# every method reads a prefix of the same noise row
results = {
    "exhaustive": batch_exhaustive(ds.channels, V, radio, noise),
    "binary": batch_binary(ds.channels, V, radio, noise),
    "two-tier": batch_two_tier(ds.channels, V, 14, radio, noise),
}
for name, pred in results.items():
    spec = MethodSpec(name, wide_size=14) if name == "two-tier" else MethodSpec(name)
    print(f"{name:>10}: {measurement_count(spec, 128):3d} measurements, "
          f"accuracy {np.mean(pred == oracle):.3f}")
