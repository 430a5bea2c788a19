import csv
import json

import numpy as np
import pytest

from beamalign.aligner import HierarchicalAligner, TrainConfig, load_model
from beamalign.baselines import MethodSpec, measurement_count
from beamalign.channel import SyntheticSpec
from beamalign.cli import main
from beamalign.errors import ConfigError, DomainError
from beamalign.harness import (DEFAULT_PSD_AXIS, TABLE_I, TABLE_II, ExperimentConfig,
                               ExperimentReport, ReportRow, accuracy, export_patterns,
                               pattern_concentration, prepare_data, report_plot_data,
                               resolve_output_dir, run_accuracy_vs_measurements,
                               run_accuracy_vs_noise, train_learned)


def small_dict(**extra):
    d = {
        "seed": 1,
        "dataset": {"synthetic": {"count": 240}},
        "array": {"n_antennas": 8},
        "alignment": {"n_beams": 16, "n_fine_grid": 128, "n_groups": 2, "n1": 2, "n2": 3},
        "training": {"batch_size": 32, "max_epochs": 4, "patience": 3,
                     "selector_hidden": [8], "predictor_hidden": [16]},
        "sweeps": {"splits": [[2, 2], [2, 3]], "noise_psd_dbm_per_hz": [-171, -151],
                   "noise_split": [2, 3]},
    }
    d.update(extra)
    return d


def small_config(**extra):
    return ExperimentConfig.from_dict(small_dict(**extra))


def test_accuracy_examples():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([0, 0], [1, 1]) == 0.0
    assert accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75
    with pytest.raises(DomainError):
        accuracy([], [])
    with pytest.raises(DomainError):
        accuracy([1], [1, 2])


def test_split_tables():
    assert dict((a + b, (a, b)) for a, b in TABLE_I)[14] == (6, 8)
    assert dict((a + b, (a, b)) for a, b in TABLE_II)[10] == (3, 7)
    assert ExperimentConfig.from_dict({"sweeps": {"splits": "table2"}}).splits == TABLE_II
    assert ExperimentConfig().splits == TABLE_I
    assert ExperimentConfig().noise_psd_axis == DEFAULT_PSD_AXIS
    assert -166.0 in DEFAULT_PSD_AXIS and -156.0 in DEFAULT_PSD_AXIS


def test_desk_defaults():
    cfg = ExperimentConfig()
    assert (cfg.n_antennas, cfg.n_beams, cfg.n_groups, cfg.n1, cfg.n2) == (64, 128, 4, 6, 8)
    assert cfg.synthetic.count == 20000 and cfg.train_fraction == 0.6
    radio = cfg.radio()
    assert radio.tx_power == pytest.approx(0.01)
    assert radio.noise_var == pytest.approx(10 ** (-11.1))


def test_config_json_round_trip(tmp_path):
    cfg = small_config()
    cfg.to_json(tmp_path / "c.json")
    back = ExperimentConfig.from_json(tmp_path / "c.json")
    assert back == cfg and back.hash() == cfg.hash()
    assert small_config(seed=2).hash() != cfg.hash()
    assert len(cfg.hash()) == 64


@pytest.mark.parametrize("bad", [
    {"unknown": 1}, {"radio": {"tx_power_w": 1}}, {"alignment": {"n1": 5, "n2": 2}},
    {"methods": ["magic"]}, {"sweeps": {"splits": "table9"}}, {"train_fraction": 1.0},
    {"training": {"lr": 0.1}}, {"evaluation": {"noise_reps": 0}},
])
def test_bad_config(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(small_dict(**bad))


def test_missing_and_invalid_config_file(tmp_path):
    with pytest.raises(ConfigError, match="nope.json"):
        ExperimentConfig.from_json(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(tmp_path / "bad.json")


def test_output_dir_resolution(monkeypatch):
    cfg = small_config(output_dir="from_cfg")
    monkeypatch.delenv("BEAMALIGN_OUT", raising=False)
    assert str(resolve_output_dir(cfg)) == "from_cfg"
    monkeypatch.setenv("BEAMALIGN_OUT", "from_env")
    assert str(resolve_output_dir(cfg)) == "from_env"
    assert str(resolve_output_dir(cfg, "explicit")) == "explicit"


def test_report_rows_and_csv(tmp_path):
    rep = ExperimentReport()
    rep.add(ReportRow("binary", 6, 8, 14, -161.0, 0.5, 100, 0))
    with pytest.raises(DomainError):
        rep.add(ReportRow("binary", 6, 8, 14, -161.0, 0.6, 100, 0))
    with pytest.raises(DomainError):
        rep.add(ReportRow("exhaustive", 6, 8, 128, -161.0, 1.5, 100, 0))
    rep.add(ReportRow("exhaustive", 6, 8, 128, -161.0, 0.1 + 0.2, 100, 0))
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "method,n1,n2,measurements,noise_psd_dbm_hz,accuracy,n_samples,seed"
    back = ExperimentReport.read_csv(tmp_path / "r.csv")
    assert back.rows == rep.rows   # floats survive exactly


@pytest.fixture(scope="module")
def small_data():
    cfg = small_config()
    return cfg, prepare_data(cfg)


def test_prepare_data_split(small_data):
    cfg, data = small_data
    assert (len(data.train), len(data.test)) == (144, 96)
    assert not set(data.train.ids) & set(data.test.ids)
    assert data.codebook.size == 16
    assert np.array_equal(data.test_labels.clusters.centroids, data.train_labels.clusters.centroids)


def test_sweep_measurements_report(small_data, tmp_path):
    cfg, data = small_data
    rep = run_accuracy_vs_measurements(cfg, data, out_path=tmp_path / "m.csv")
    assert len(rep.rows) == len(cfg.splits) * len(cfg.methods)
    for r in rep.rows:
        spec = MethodSpec(r.method, r.n1, r.n2, wide_size=r.n1 + r.n2)
        assert r.measurements == measurement_count(spec, cfg.n_beams)
        assert 0 <= r.accuracy <= 1 and r.n_samples == len(data.test)
    assert {r.measurements for r in rep.select(method="exhaustive")} == {16}
    assert {r.measurements for r in rep.select(method="binary")} == {8}
    assert ExperimentReport.read_csv(tmp_path / "m.csv").rows == rep.rows
    assert rep.metadata["config_hash"] == cfg.hash()
    plot = report_plot_data(rep)
    assert plot["x_axis"] == "n1_plus_n2"
    assert plot["series"]["binary"]["x"] == [4, 5]


def test_sweep_noise_monotone_and_extreme(small_data):
    cfg, data = small_data
    d = small_dict()
    d["sweeps"]["noise_psd_dbm_per_hz"] = [-171, -151, -60]
    d["methods"] = ["exhaustive", "binary", "two-tier"]
    cfg = ExperimentConfig.from_dict(d)
    rep = run_accuracy_vs_noise(cfg, data)
    assert report_plot_data(rep)["x_axis"] == "noise_psd_dbm_hz"
    for m in cfg.methods:
        acc = [rep.select(method=m, noise_psd_dbm_hz=p)[0].accuracy for p in (-171.0, -151.0)]
        assert acc[0] >= acc[1] - 0.02
        # at -60 dBm/Hz the received SNR is far below 0 dB; results sit near chance
        assert rep.select(method=m, noise_psd_dbm_hz=-60.0)[0].accuracy < 4 / cfg.n_beams + 0.1


def test_noise_reps_average(small_data):
    cfg, data = small_data
    d = small_dict(methods=["exhaustive"], evaluation={"noise_reps": 3})
    d["sweeps"]["noise_psd_dbm_per_hz"] = [-120]
    cfg3 = ExperimentConfig.from_dict(d)
    rep = run_accuracy_vs_noise(cfg3, data)
    assert len(rep.rows) == 1 and 0 <= rep.rows[0].accuracy <= 1


def test_patterns_export(small_data, tmp_path):
    cfg, data = small_data
    models = train_learned(cfg, data, 2, 3, methods=("learned-hier",))
    model = models.hierarchical
    paths = export_patterns(model, data.train_labels, tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["clusters.csv", "pattern_coarse.csv", "pattern_fine_0.csv",
                     "pattern_fine_1.csv"]
    with open(tmp_path / "pattern_coarse.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1025 and len(rows[0]) == 1 + 2 + 1
    with open(tmp_path / "pattern_fine_1.csv") as fh:
        assert len(next(csv.reader(fh))) == 1 + 3 + 1
    conc = pattern_concentration(model, data.train_labels.clusters)
    assert conc.shape == (2,) and ((0 <= conc) & (conc <= 1)).all()


def test_export_shapes_for_reference_configs(tmp_path):
    from beamalign.aligner import AlignmentConfig
    from beamalign.channel import RadioConfig
    from beamalign.labeling import ClusterModel
    for n1, n2 in ((4, 6), (3, 7)):
        cfg = AlignmentConfig(16, 32, n1, n2, 3, RadioConfig(1.0, 0.0, 16))
        model = HierarchicalAligner.init(cfg, TrainConfig(selector_hidden=(4,),
                                                          predictor_hidden=(4,)))
        out = tmp_path / f"{n1}_{n2}"
        export_patterns(model, ClusterModel(np.array([-0.5, 0.0, 0.5])), out)
        with open(out / "pattern_coarse.csv") as fh:
            assert len(next(csv.reader(fh))) == n1 + 2
        with open(out / "pattern_fine_2.csv") as fh:
            assert len(next(csv.reader(fh))) == n2 + 2


# ---------------------------------------------------------------------------
# command line


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "cfg.json"
    d = small_dict(methods=["exhaustive", "binary", "two-tier", "learned-hier"])
    path.write_text(json.dumps(d))
    return path


def test_cli_pipeline(cfg_file, tmp_path):
    c = str(cfg_file)
    assert main(["gen", "--config", c, "--out", str(tmp_path / "ds.baln")]) == 0
    ds = str(tmp_path / "ds.baln")
    assert main(["label", "--config", c, "--dataset", ds, "--out",
                 str(tmp_path / "labels.csv")]) == 0
    assert len((tmp_path / "labels.csv").read_text().splitlines()) == 241
    assert main(["train", "--config", c, "--dataset", ds, "--threads", "1",
                 "--out", str(tmp_path / "m.balm")]) == 0
    assert isinstance(load_model(tmp_path / "m.balm"), HierarchicalAligner)
    assert main(["eval", "--config", c, "--dataset", ds, "--model", str(tmp_path / "m.balm"),
                 "--out", str(tmp_path / "report.csv")]) == 0
    rep = ExperimentReport.read_csv(tmp_path / "report.csv")
    assert {r.method for r in rep.rows} == {"exhaustive", "binary", "two-tier", "learned-hier"}
    meta = json.loads((tmp_path / "report.meta.json").read_text())
    recomputed = ExperimentConfig.from_json(tmp_path / "report.config.json").hash()
    assert meta["config_hash"] == recomputed
    assert main(["report", "--input", str(tmp_path / "report.csv")]) == 0
    plot = json.loads((tmp_path / "report.plot.json").read_text())
    assert set(plot["series"]) == {r.method for r in rep.rows}
    assert main(["export-patterns", "--config", c, "--dataset", ds,
                 "--model", str(tmp_path / "m.balm"), "--out", str(tmp_path / "pat")]) == 0
    assert (tmp_path / "pat" / "pattern_fine_1.csv").exists()


def test_cli_sweeps(cfg_file, tmp_path):
    c = str(cfg_file)
    assert main(["sweep-measurements", "--config", c, "--out", str(tmp_path / "a")]) == 0
    assert main(["sweep-noise", "--config", c, "--out", str(tmp_path / "a")]) == 0
    m = ExperimentReport.read_csv(tmp_path / "a" / "report_measurements.csv")
    n = ExperimentReport.read_csv(tmp_path / "a" / "report_noise.csv")
    assert len(m.rows) == 2 * 4 and len(n.rows) == 2 * 4


def test_cli_seed_determinism(cfg_file, tmp_path):
    outs = []
    for name in ("r1", "r2"):
        assert main(["sweep-measurements", "--config", str(cfg_file), "--seed", "1",
                     "--threads", "1", "--out", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name / "report_measurements.csv").read_bytes())
    assert outs[0] == outs[1]


def test_cli_env_output(cfg_file, tmp_path, monkeypatch):
    monkeypatch.setenv("BEAMALIGN_OUT", str(tmp_path / "envout"))
    assert main(["gen", "--config", str(cfg_file)]) == 0
    assert (tmp_path / "envout" / "dataset.baln").exists()


def test_cli_errors(tmp_path, capsys, cfg_file):
    assert main(["gen", "--config", str(tmp_path / "missing.json")]) == 1
    assert "missing.json" in capsys.readouterr().err
    assert main(["frobnicate"]) == 1
    assert main(["gen", "--bogus"]) == 1
    assert main(["train", "--config", str(cfg_file), "--n1", "4", "--n2", "2"]) == 1
    (tmp_path / "junk.baln").write_bytes(b"junk")
    assert main(["eval", "--config", str(cfg_file), "--dataset", str(tmp_path / "junk.baln"),
                 "--out", str(tmp_path / "r.csv")]) == 2
    assert main(["eval", "--config", str(cfg_file), "--model", str(tmp_path / "junk.baln"),
                 "--out", str(tmp_path / "r.csv")]) == 2
