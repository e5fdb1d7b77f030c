import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from seismo import cli, config, dataset, excitation, network

TINY = {
    "seed": 3,
    "excitation": {"duration": 4.0, "pga_levels_g": [0.3, 0.8], "records": {"train": 2, "val": 1, "test": 1}},
    "structures": {
        "train": {"grid": {"stiffness_kN_m": [30, 65], "mass_kg": [120, 240]}},
        "val": {"grid": {"stiffness_kN_m": [30, 65], "mass_kg": [120, 240]}},
        "test": {"table": [[45, 180], [55, 150], [37.5, 210]]},
    },
    "arch": {"hidden_size": 6},
    "train": {"batch_size": 4, "max_epochs": 3},
    "eval": {"spectrum_periods": {"start": 0.1, "stop": 2.0, "count": 10}},
}


def _write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def _pipeline(cfg_path, out):
    for cmd in ("generate", "train", "evaluate"):
        assert cli.main([cmd, "--config", cfg_path, "--out", str(out)]) == cli.EXIT_OK


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = _write_config(root / "tiny.json", TINY)
    _pipeline(cfg_path, root / "a")
    return root, cfg_path


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -- generate ---------------------------------------------------------------


def test_generate_outputs_and_counts(tiny_run):
    root, _ = tiny_run
    data = root / "a" / "data"
    for name in ("train.sds", "val.sds", "test.sds", "manifest.json", "resolved_config.json", "spectra.csv"):
        assert (data / name).is_file()
    man = json.loads((data / "manifest.json").read_text())
    # records x PGA levels x structures
    assert man["splits"]["train"]["n_samples"] == 2 * 2 * 4
    assert man["splits"]["val"]["n_samples"] == 1 * 2 * 4
    assert man["splits"]["test"]["n_samples"] == 1 * 2 * 3
    assert man["seed"] == 3
    assert len(dataset.load(data / "test.sds")) == 6


def test_generate_bundled_config_resolves():
    cfg = config.load("case1_desk")
    assert cfg["excitation"]["records"] == {"train": 10, "val": 3, "test": 5}
    assert len(config.structures(cfg, "train")) == 9
    assert len(config.structures(cfg, "test")) == 4


def test_generate_same_seed_same_hash(tmp_path, tiny_run):
    root, cfg_path = tiny_run
    assert cli.main(["generate", "--config", cfg_path, "--out", str(tmp_path / "g")]) == 0
    a = json.loads((root / "a" / "data" / "manifest.json").read_text())
    b = json.loads((tmp_path / "g" / "data" / "manifest.json").read_text())
    assert a == b
    assert cli.main(["generate", "--config", cfg_path, "--out", str(tmp_path / "h"), "--seed", "4"]) == 0
    c = json.loads((tmp_path / "h" / "data" / "manifest.json").read_text())
    assert c["splits"]["train"]["hash"] != a["splits"]["train"]["hash"]


@pytest.mark.parametrize(
    "patch,key",
    [
        ({"excitation": {"duration": -1.0}}, "excitation.duration"),
        ({"arch": {"foo": 1}}, "arch.foo"),
        ({"simulator": {"model": "elastoplastic"}}, "simulator.model"),
        ({"train": {"lr": "fast"}}, "train.lr"),
    ],
)
def test_config_error_exit_code_and_key_path(tmp_path, capsys, patch, key):
    cfg_path = _write_config(tmp_path / "bad.json", {**TINY, **{k: {**TINY.get(k, {}), **v} for k, v in patch.items()}})
    assert cli.main(["generate", "--config", cfg_path, "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert key in capsys.readouterr().err


def test_unparseable_config(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert cli.main(["generate", "--config", str(p), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "parse error" in capsys.readouterr().err


# -- train / evaluate -------------------------------------------------------


def test_train_outputs(tiny_run):
    root, _ = tiny_run
    model_dir = root / "a" / "model"
    model, meta = network.load_checkpoint(model_dir / "model.ckpt")
    assert model.arch.hidden_size == 6
    assert meta["epochs_run"] == 3 and 1 <= meta["best_epoch"] <= 3
    rows = list(csv.reader(open(model_dir / "history.csv")))
    assert len(rows) == 4


def test_evaluate_outputs(tiny_run):
    root, _ = tiny_run
    ev = root / "a" / "eval"
    report = json.loads((ev / "metrics.json").read_text())
    assert report["aggregate"]["n_samples"] == 6
    subsets = list(csv.DictReader(open(ev / "subsets.csv")))
    assert len(subsets) == 3
    assert [int(r["rank"]) for r in subsets] == [1, 2, 3]
    hist = list(csv.DictReader(open(ev / "ci_hist.csv")))
    assert len(hist) == 20
    assert sum(float(r["probability"]) for r in hist) == pytest.approx(1.0, abs=1e-12)
    preds = sorted((ev / "predictions").glob("*.csv"))
    assert len(preds) == 6  # three representative subsets x two PGA levels
    head = next(csv.reader(open(preds[0])))
    assert head == ["time_s", "pred_m", "truth_m"]
    for name in ("subset_mae.png", "ci_hist.png", "representative.png"):
        assert (ev / name).stat().st_size > 0


def test_rerun_is_byte_identical(tiny_run, tmp_path):
    root, cfg_path = tiny_run
    _pipeline(cfg_path, tmp_path / "b")
    a, b = _tree(root / "a"), _tree(tmp_path / "b")
    assert a.keys() == b.keys()
    # resolved configs differ only in paths.out
    for name in a:
        if not name.endswith("resolved_config.json"):
            assert a[name] == b[name], name


def test_resolved_config_is_sufficient(tiny_run, tmp_path):
    root, _ = tiny_run
    resolved = root / "a" / "data" / "resolved_config.json"
    assert cli.main(["generate", "--config", str(resolved), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "data" / "manifest.json").read_bytes() == (root / "a" / "data" / "manifest.json").read_bytes()


def test_evaluate_table2_grid_has_64_subsets(tmp_path):
    cfg = {
        **TINY,
        "excitation": {"duration": 2.0, "pga_levels_g": [0.5], "records": {"train": 1, "val": 1, "test": 1}},
        "structures": {**TINY["structures"], "test": "table2"},
        "eval": {"plots": False, "prediction_csvs": "none"},
        "train": {"max_epochs": 1},
    }
    _pipeline(_write_config(tmp_path / "t2.json", cfg), tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "eval" / "subsets.csv")))
    assert len(rows) == 64
    assert list(rows[0]) == ["stiffness", "mass", "natural_frequency", "mse", "mae", "r2", "rank"]
    assert not (tmp_path / "eval" / "predictions").exists()


def test_missing_checkpoint_is_runtime_error(tiny_run, tmp_path):
    _, cfg_path = tiny_run
    code = cli.main(["evaluate", "--config", cfg_path, "--out", str(tmp_path), "--checkpoint", str(tmp_path / "nope.ckpt")])
    assert code == cli.EXIT_RUNTIME


# -- predict ----------------------------------------------------------------


def _zero_bias_checkpoint(path, cell):
    model = network.init_params(network.ModelArch(cell, 2, 5), 1)
    for name, arr in model.parameters().items():
        if ".b_" in name or name.endswith(("W_sh", "W_mh")):
            arr[...] = 0.0
    norm = dataset.Normalizer(gm=(-2.0, 2.0), target=(-0.01, 0.01), stiffness=(3e4, 6e4), mass=(100.0, 250.0))
    network.save_checkpoint(path, model, {"normalizer": norm.to_dict()})


@pytest.mark.parametrize("cell", network.CELLS)
def test_predict_zero_record_gives_zero(tmp_path, cell):
    ckpt = tmp_path / "zero.ckpt"
    _zero_bias_checkpoint(ckpt, cell)
    excitation.GroundMotion("quiet", 0.02, np.zeros(50)).to_csv(tmp_path / "quiet.csv")
    out = tmp_path / "p.csv"
    args = ["predict", "--checkpoint", str(ckpt), "--gm", str(tmp_path / "quiet.csv"),
            "--stiffness", "45000", "--mass", "180", "--out", str(out)]
    assert cli.main(args) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["time_s", "pred_m"]
    assert len(rows) == 51
    assert max(abs(float(r[1])) for r in rows[1:]) < 1e-15


def test_predict_with_truth_and_directory_out(tiny_run, tmp_path):
    root, _ = tiny_run
    gm = excitation.generate_synthetic(duration=4.0, seed=1)
    gm.to_csv(tmp_path / "gm.csv")
    excitation.GroundMotion("truth", gm.dt, np.linspace(0, 1e-3, len(gm))).to_csv(tmp_path / "x.csv")
    args = ["predict", "--checkpoint", str(root / "a" / "model" / "model.ckpt"), "--gm", str(tmp_path / "gm.csv"),
            "--stiffness", "45e3", "--mass", "180", "--truth", str(tmp_path / "x.csv"), "--out", str(tmp_path / "pd")]
    assert cli.main(args) == 0
    rows = list(csv.reader(open(tmp_path / "pd" / "prediction.csv")))
    assert rows[0] == ["time_s", "pred_m", "truth_m"]
    assert len(rows) == len(gm) + 1
    assert float(rows[-1][2]) == pytest.approx(1e-3)


def test_predict_bad_gm_file(tiny_run, tmp_path):
    root, _ = tiny_run
    (tmp_path / "bad.csv").write_text("t,a\n0.0,x\n")
    args = ["predict", "--checkpoint", str(root / "a" / "model" / "model.ckpt"), "--gm", str(tmp_path / "bad.csv"),
            "--stiffness", "45e3", "--mass", "180", "--out", str(tmp_path / "o.csv")]
    assert cli.main(args) == cli.EXIT_CONFIG


# -- gradcheck --------------------------------------------------------------


def test_gradcheck_default_passes(capsys):
    assert cli.main(["gradcheck"]) == cli.EXIT_OK
    line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("max relative error")][0]
    assert float(line.split(":")[1]) < 1e-5


@pytest.mark.parametrize("cell", ["gru", "lstm"])
def test_gradcheck_baselines(cell):
    assert cli.main(["gradcheck", "--cell", cell, "--layers", "1", "--hidden", "4", "--steps", "6"]) == 0


def test_gradcheck_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(network, "gradient_check", lambda *a, **k: 2e-4)
    assert cli.main(["gradcheck", "--hidden", "2", "--steps", "3"]) == cli.EXIT_GRADCHECK
    assert "FAIL" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "seismo", "generate", "--config", str(tmp_path / "missing.json")],
                         capture_output=True, text=True)
    assert res.returncode == cli.EXIT_CONFIG
    assert res.stderr.startswith("config error")
