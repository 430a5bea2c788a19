"""Acceptance criteria 1-9; each test records one PASS/FAIL line for the summary."""
import json
import time

import numpy as np
import pytest

from beamalign.aligner import (AlignmentConfig, HierarchicalAligner, TrainConfig, eval_noise,
                               train_coarse, train_single_tier)
from beamalign.baselines import MethodSpec, exhaustive_search, measurement_count
from beamalign.channel import MeasurementCounter, RadioConfig
from beamalign.cli import main
from beamalign.codebook import dft_codebook, pc_layer, phases_to_beams
from beamalign.harness import (TABLE_I, ExperimentConfig, TrainedModels, evaluate_methods,
                               pattern_concentration, prepare_data, run_accuracy_vs_noise,
                               train_learned)
from beamalign.labeling import kmeans_1d, oracle_best_beam, sse
from beamalign.neural import finite_difference_check
from beamalign.numerics import RngStream

from conftest import rand_complex, record_criterion
from test_labeling import kmeans_corpus, optimal_sse_dp

DESK_SEEDS = (0, 1, 2)


# ---------------------------------------------------------------------------
# 1. gradients of both training losses on the tiny instance


def test_c1_gradient_check(tiny):
    ds, labels, cfg, _ = tiny
    started = time.time()
    hyper = TrainConfig(batch_size=16, max_epochs=5, patience=10)   # default layer widths
    model = HierarchicalAligner.init(cfg, hyper)
    train_coarse(model, ds, labels, hyper)
    rng = np.random.default_rng(11)
    H = ds.channels
    sigma = np.sqrt(cfg.radio.noise_var / 2)
    nc = sigma * rand_complex(rng, len(H), cfg.n1)
    nf = sigma * rand_complex(rng, len(H), cfg.n2)
    _, k_star = model.route(H, nc)
    branches = sorted(set(k_star.tolist()))

    def coarse(_):
        return model.coarse_loss(H, labels.group, nc, "sum")

    def fine(_):
        return model.fine_loss(H, labels.oracle, nc, nf, "sum")

    worst, checked = 0.0, 0
    groups = [(coarse, name, p) for name, p in model.coarse_params().items()]
    groups += [(fine, name, p) for name, p in model.fine_params().items()
               if int(name.split(".")[0].lstrip("theta_fg")) in branches]
    for i, (fn, name, p) in enumerate(groups):
        worst = max(worst, finite_difference_check(fn, {name: p}, step=1e-6, n_coords=200,
                                                   rng=RngStream(i, 3)))
        checked += min(200, p.size)
    elapsed = time.time() - started
    ok = worst < 1e-5 and elapsed < 30 and checked >= 200 and len(branches) == cfg.n_groups
    record_criterion(1, ok, f"max rel err {worst:.2e} over {checked} coords in {len(groups)} "
                            f"groups, branches {branches}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. real-expanded probing layer vs direct complex arithmetic


def test_c2_forward_equivalence():
    started = time.time()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        n_t, n = int(rng.integers(2, 65)), int(rng.integers(1, 15))
        theta = rng.uniform(0, 2 * np.pi, (n_t, n))
        h = rand_complex(rng, n_t)
        re, im = pc_layer(theta, h[None, :], 1.0)
        direct = phases_to_beams(theta).T @ h.conj()
        worst = max(worst, np.max(np.abs(re[0] + 1j * im[0] - direct)) / np.max(np.abs(direct)))
    elapsed = time.time() - started
    record_criterion(2, worst < 1e-12 and elapsed < 5,
                     f"max rel err {worst:.2e} over 1000 pairs, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 3. exhaustive search equals the matched-filter oracle


def test_c3_oracle_equivalence():
    rng = np.random.default_rng(3)
    V = dft_codebook(64, 128)
    radio = RadioConfig(0.01, 0.0, 64)
    H = rand_complex(rng, 1000, 64)
    hits = sum(exhaustive_search(h, V, radio) == oracle_best_beam(h, V) for h in H)
    record_criterion(3, hits == 1000, f"{hits}/1000 exact index matches")


# ---------------------------------------------------------------------------
# 4. measurement accounting


def test_c4_measurement_accounting(tiny):
    ds, labels, cfg, hyper = tiny
    binary = measurement_count(MethodSpec("binary"), 128)
    exhaustive = measurement_count(MethodSpec("exhaustive"), 128)
    two_tier = [measurement_count(MethodSpec("two-tier", wide_size=a + b), 128) for a, b in TABLE_I]
    hier = HierarchicalAligner.init(cfg, hyper)
    single, _ = train_single_tier(ds, labels, cfg.n1 + cfg.n2, cfg, hyper)
    rng = np.random.default_rng(4)
    counts = set()
    for i, h in enumerate(rand_complex(rng, 50, cfg.n_antennas)):
        for model in (hier, single):
            counter = MeasurementCounter()
            model.align(h, RngStream(4, i), counter)
            counts.add(counter.count)
    ok = (binary == 14 and exhaustive == 128 and all(23 <= c <= 28 for c in two_tier)
          and counts == {cfg.n1 + cfg.n2})
    record_criterion(4, ok, f"binary {binary}, exhaustive {exhaustive}, two-tier {two_tier}, "
                            f"learned counters {sorted(counts)} vs N1+N2={cfg.n1 + cfg.n2}")


# ---------------------------------------------------------------------------
# 5. K-means monotone and near-optimal


def test_c5_kmeans():
    monotone, worst_ratio, n = True, 0.0, 0
    for i, values in enumerate(kmeans_corpus()):
        for k in (2, 3, 4):
            if len(np.unique(values)) < k:
                continue
            model, assign, history = kmeans_1d(values, k, seed=i)
            monotone &= all(b <= a + 1e-12 for a, b in zip(history, history[1:]))
            opt = optimal_sse_dp(values, k)
            got = sse(values, assign, model.centroids)
            worst_ratio = max(worst_ratio, got / opt if opt > 0 else (1.0 if got <= 1e-15 else np.inf))
            n += 1
    record_criterion(5, monotone and worst_ratio <= 1.05,
                     f"{n} instances, monotone={monotone}, worst SSE/optimal {worst_ratio:.4f}")


# ---------------------------------------------------------------------------
# 6 and 9. desk experiment


@pytest.fixture(scope="module")
def desk_runs():
    runs = {}
    started = time.time()
    for seed in DESK_SEEDS:
        cfg = ExperimentConfig(seed=seed)
        data = prepare_data(cfg)
        models = train_learned(cfg, data, 6, 8, methods=("learned-hier", "learned-single"))
        rows = evaluate_methods(cfg, data, 6, 8, cfg.noise_psd_dbm_per_hz, models,
                                ("learned-hier", "learned-single", "binary"))
        acc = {r.method: r.accuracy for r in rows}
        noise = eval_noise(data.test.ids, cfg.n1, cfg.radio().noise_var, cfg.seed)
        _, k_star = models.hierarchical.route(data.test.channels, noise)
        acc["selector"] = float(np.mean(k_star == data.test_labels.group))
        _, k_train = models.hierarchical.route(data.train.channels)
        acc["branches_used"] = len(set(k_train.tolist()))
        runs[seed] = (cfg, data, models, acc)
    return runs, time.time() - started


@pytest.mark.slow
def test_c6_desk_experiment(desk_runs):
    runs, elapsed = desk_runs
    margins = [runs[s][3]["learned-hier"] - runs[s][3]["learned-single"] for s in DESK_SEEDS]
    vs_binary = [runs[s][3]["learned-hier"] - runs[s][3]["binary"] for s in DESK_SEEDS]
    selector = [runs[s][3]["selector"] for s in DESK_SEEDS]
    a = min(margins) >= 0 and np.mean(margins) > 0
    b = min(vs_binary) >= 0
    c = min(selector) > 1 / 4 + 0.2
    detail = "; ".join(
        f"seed {s}: hier {runs[s][3]['learned-hier']:.3f} single {runs[s][3]['learned-single']:.3f} "
        f"binary {runs[s][3]['binary']:.3f} selector {runs[s][3]['selector']:.3f}"
        for s in DESK_SEEDS)
    record_criterion(6, a and b and c and elapsed < 30 * 60,
                     f"(a)={a} (b)={b} (c)={c}, {elapsed / 60:.1f} min; {detail}")


@pytest.mark.slow
def test_every_branch_routed_on_desk_data(desk_runs):
    runs, _ = desk_runs
    assert all(runs[s][3]["branches_used"] == 4 for s in DESK_SEEDS)


@pytest.mark.slow
def test_c9_pattern_coherence(desk_runs):
    runs, _ = desk_runs
    cfg, data, models, _ = runs[0]
    conc = pattern_concentration(models.hierarchical, data.train_labels.clusters)
    record_criterion(9, bool((conc >= 0.5).all()),
                     f"in-cell gain share per fine codebook {np.round(conc, 3).tolist()}")


# ---------------------------------------------------------------------------
# 7. accuracy does not improve as the noise floor rises


@pytest.mark.slow
def test_c7_noise_monotonicity():
    cfg = ExperimentConfig(noise_psd_axis=(-171.0, -151.0), noise_split=(6, 8))
    report = run_accuracy_vs_noise(cfg)
    lines, ok = [], True
    for m in cfg.methods:
        lo = report.select(method=m, noise_psd_dbm_hz=-171.0)[0].accuracy
        hi = report.select(method=m, noise_psd_dbm_hz=-151.0)[0].accuracy
        ok &= lo >= hi - 0.02
        lines.append(f"{m} {lo:.3f}->{hi:.3f}")
    record_criterion(7, ok, "; ".join(lines))


# ---------------------------------------------------------------------------
# 8. byte-identical reruns


def test_c8_determinism(tmp_path):
    cfg = {
        "seed": 5,
        "dataset": {"synthetic": {"count": 600}},
        "array": {"n_antennas": 16},
        "alignment": {"n_beams": 32, "n_fine_grid": 256, "n_groups": 2, "n1": 3, "n2": 4},
        "training": {"batch_size": 64, "max_epochs": 8, "patience": 4,
                     "selector_hidden": [16], "predictor_hidden": [32, 32]},
        "sweeps": {"splits": [[2, 3], [3, 4]]},
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    c = str(tmp_path / "cfg.json")
    blobs = []
    for run in ("a", "b"):
        d = tmp_path / run
        codes = [
            main(["gen", "--config", c, "--threads", "1", "--out", str(d / "ds.baln")]),
            main(["train", "--config", c, "--threads", "1", "--dataset", str(d / "ds.baln"),
                  "--out", str(d / "hier.balm")]),
            main(["train", "--config", c, "--threads", "1", "--dataset", str(d / "ds.baln"),
                  "--method", "learned-single", "--out", str(d / "single.balm")]),
            main(["eval", "--config", c, "--threads", "1", "--dataset", str(d / "ds.baln"),
                  "--model", str(d / "hier.balm"), "--model", str(d / "single.balm"),
                  "--out", str(d / "report.csv")]),
            main(["sweep-measurements", "--config", c, "--threads", "1", "--out", str(d)]),
        ]
        names = ("ds.baln", "hier.balm", "single.balm", "report.csv", "report_measurements.csv")
        blobs.append((codes, {n: (d / n).read_bytes() for n in names}))
    (codes_a, files_a), (codes_b, files_b) = blobs
    same = [n for n in files_a if files_a[n] == files_b[n]]
    ok = codes_a == codes_b == [0] * 5 and len(same) == len(files_a)
    record_criterion(8, ok, f"exit codes {codes_a}/{codes_b}; identical: {same}")
