import numpy as np
import pytest

from beamalign.aligner import AlignmentConfig, TrainConfig
from beamalign.channel import RadioConfig, SyntheticSpec, generate_dataset
from beamalign.codebook import dft_codebook
from beamalign.labeling import build_labels


def rand_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny():
    """N_t=8, N1=3, G=2, N2=3, N_V=16 on 64 synthetic samples."""
    ds = generate_dataset(SyntheticSpec(count=64), 8, seed=3)
    V = dft_codebook(8, 16)
    labels = build_labels(ds, V, n_grid=64, n_groups=2, seed=3)
    radio = RadioConfig.from_dbm(10, -161, 100e6, 8)
    config = AlignmentConfig(8, 16, 3, 3, 2, radio, n_grid=64, seed=3)
    hyper = TrainConfig(batch_size=16, max_epochs=3, patience=5,
                        selector_hidden=(8,), predictor_hidden=(12,))
    return ds, labels, config, hyper


# acceptance criteria outcomes, printed once at the end of the session
ACCEPTANCE = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    assert ok, f"criterion {number}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
