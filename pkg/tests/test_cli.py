import csv
import json
import math
import os

import numpy as np
import pytest

from probsurf import checkpoint as ckpt_io
from probsurf import kernel
from probsurf.cli import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_OK, fmt, main
from probsurf.config import SCHEMA, ConfigError, loads_config
from probsurf.experiment import build_experiment
from probsurf.network import NetworkSpec
from probsurf.trainer import TRACE_COLUMNS

SMOKE = """\
# 1-dim Columns smoke run
instance.name = pso_lde
instance.alpha = 0.25
data.distribution = columns
data.dim = 1
data.dataset_size = 5000
model.num_blocks = 2
model.block_size = 8
train.iterations = 200
train.warm_iters = 100
train.batch_up = 64
train.batch_down = 64
train.checkpoint_period = 100
eval.eval_period = 50
eval.test_size = 2000
eval.integral_samples = 10000
"""


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    cfg = root / "smoke.cfg"
    cfg.write_text(SMOKE)
    assert main(["train", "--config", str(cfg), "--out", str(root / "a")]) == EXIT_OK
    assert main(["train", "--config", str(cfg), "--out", str(root / "b")]) == EXIT_OK
    return root


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- config -----------------------------------------------------------------


def test_config_defaults_and_canonical_text():
    cfg = loads_config(SMOKE)
    assert cfg["train.iterations"] == 200 and cfg["model.topology"] == "block_diagonal"
    again = loads_config(cfg.canonical_text())
    assert again.values == cfg.values
    assert again.hash() == cfg.hash()
    assert cfg.with_overrides(**{"output.dir": "elsewhere"}).hash() == cfg.hash()
    assert cfg.with_overrides(**{"train.seed": "3"}).hash() != cfg.hash()
    assert len(cfg.canonical_text().splitlines()) == len(SCHEMA)


@pytest.mark.parametrize(
    "text, key",
    [
        ("instance.alpha = -1", "instance.alpha"),
        ("model.colour = red", "model.colour"),
        ("train.iterations = ten", "train.iterations"),
        ("instance.name = nope", "instance.name"),
        ("train.iterations = 10\ntrain.warm_iters = 20", "train.warm_iters"),
        ("eval.eval_period = -5", "eval.eval_period"),
        ("data.distribution = dataset", "data.dataset_path"),
        ("train.seed = 1\ntrain.seed = 2", "train.seed"),
    ],
)
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        loads_config(text)
    assert info.value.key == key
    assert key in str(info.value)


def test_config_line_without_equals():
    with pytest.raises(ConfigError):
        loads_config("just words")


def test_build_experiment_variants():
    base = loads_config(SMOKE)
    exp = build_experiment(base)
    assert exp.data.shape == (5000, 1)
    assert exp.spec.input_dim == 1 and exp.spec.n_params > 0
    pairs = build_experiment(base.with_overrides(**{"data.distribution": "linear_gaussian_pairs", "data.dim": "2",
                                                    "instance.name": "cond_log_density", "instance.alpha": "none"}))
    assert pairs.data.shape == (5000, 2) and pairs.down.dim == 2
    cut = build_experiment(base.with_overrides(**{"instance.cut_up_at": "2.0"}))
    assert cut.instance.name.startswith("cut_at")
    explicit = base.with_overrides(**{"down.kind": "explicit", "down.lo": "-3", "down.hi": "3"})
    assert build_experiment(explicit).down.describe() == {"kind": "uniform", "lo": [-3.0], "hi": [3.0]}


# --- checkpoint --------------------------------------------------------------


def _ckpt():
    spec = NetworkSpec(2, topology="block_diagonal", num_blocks=2, block_size=3, num_layers=3)
    theta = np.random.default_rng(0).normal(size=spec.n_params)
    return ckpt_io.Checkpoint(7, "ab" * 16, spec, np.array([0.5, -1.0]), np.array([2.0, 0.25]), theta,
                              {"kind": "uniform", "lo": [0, 0], "hi": [1, 1]}, "x = 1\n", {"k": 1})


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    c = _ckpt()
    path = tmp_path / "c.bin"
    ckpt_io.save(path, c)
    back = ckpt_io.load(path)
    assert back.iteration == 7 and back.config_hash == "ab" * 16 and back.spec == c.spec
    assert np.array_equal(back.theta, c.theta) and back.extra == {"k": 1}
    assert ckpt_io.dumps(back) == path.read_bytes()


def test_checkpoint_corruption_is_detected():
    blob = ckpt_io.dumps(_ckpt())
    with pytest.raises(ckpt_io.CheckpointError):
        ckpt_io.loads(blob[:-20])
    flipped = bytearray(blob)
    flipped[60] ^= 1
    with pytest.raises(ckpt_io.CheckpointError):
        ckpt_io.loads(bytes(flipped))
    with pytest.raises(ckpt_io.CheckpointError):
        ckpt_io.loads(b"short")
    with pytest.raises(ckpt_io.CheckpointError):
        ckpt_io.load("/nonexistent/ckpt.bin")


def test_checkpoint_rejects_wrong_theta_length():
    c = _ckpt()
    c.theta = c.theta[:-1]
    with pytest.raises(ckpt_io.CheckpointError):
        ckpt_io.dumps(c)


def test_checkpoint_is_little_endian_float64():
    c = _ckpt()
    blob = ckpt_io.dumps(c)
    tail = blob[-8 - 8 * c.theta.size : -8]
    assert np.array_equal(np.frombuffer(tail, dtype="<f8"), c.theta)


# --- CLI ---------------------------------------------------------------------


def test_train_outputs(smoke_run):
    a = smoke_run / "a"
    rows = _read_csv(a / "metrics.csv")
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) - 1 == 200 // 50 + 1
    assert sorted(os.listdir(a / "checkpoints")) == ["ckpt_000000100.bin", "ckpt_000000200.bin"]
    summary = json.loads((a / "summary.json").read_text())
    assert summary["iterations"] == 200 and summary["total_integral"] > 0
    assert float(rows[-1][3]) == summary["lsqr"]


def test_train_is_deterministic(smoke_run):
    a = (smoke_run / "a" / "metrics.csv").read_bytes()
    b = (smoke_run / "b" / "metrics.csv").read_bytes()
    assert a == b
    # the stored config text differs only in output.dir
    ca, cb = (ckpt_io.load(smoke_run / r / "final.bin") for r in ("a", "b"))
    assert ca.theta.tobytes() == cb.theta.tobytes() and ca.config_hash == cb.config_hash


def test_eval_reproduces_final_row(smoke_run, capsys):
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(smoke_run / "a" / "final.bin")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    last = _read_csv(smoke_run / "a" / "metrics.csv")[-1]
    for name in ("psqr", "lsqr", "is_err"):
        assert report[name] == pytest.approx(float(last[TRACE_COLUMNS.index(name)]), rel=1e-12, abs=1e-15)


def test_eval_with_other_seed_is_within_mc_error(smoke_run, capsys):
    capsys.readouterr()
    main(["eval", "--checkpoint", str(smoke_run / "a" / "final.bin")])
    base = json.loads(capsys.readouterr().out)
    main(["eval", "--checkpoint", str(smoke_run / "a" / "final.bin"), "--seed", "11",
          "--set", "eval.test_size=20000"])
    other = json.loads(capsys.readouterr().out)
    assert other["n_test"] == 20000
    # spread of the squared log error, estimated on an independent sample
    from probsurf.cli import _load_model

    _, exp, model = _load_model(str(smoke_run / "a" / "final.bin"))
    pts = exp.up_dist.sample(np.random.default_rng(5), 20000)
    sd = ((exp.up_dist.log_pdf(pts) - model(pts)) ** 2).std()
    se = math.hypot(sd / math.sqrt(20000), sd / math.sqrt(2000))
    assert abs(other["lsqr"] - base["lsqr"]) < 3 * se


def test_truncated_checkpoint_exit_code(smoke_run, tmp_path):
    blob = (smoke_run / "a" / "final.bin").read_bytes()
    bad = tmp_path / "bad.bin"
    bad.write_bytes(blob[: len(blob) // 2])
    assert main(["eval", "--checkpoint", str(bad)]) == EXIT_CHECKPOINT
    assert main(["diag", "--checkpoint", str(bad), "--mode", "scan", "--out", str(tmp_path)]) == EXIT_CHECKPOINT


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(SMOKE.replace("instance.alpha = 0.25", "instance.alpha = -1"))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "instance.alpha" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_diag_scan_gramian_and_differential(smoke_run, tmp_path):
    ck = str(smoke_run / "a" / "final.bin")
    out = tmp_path / "diag"
    assert main(["diag", "--checkpoint", ck, "--mode", "scan", "--probes", "100", "--kind", "relative", "--out", str(out)]) == 0
    rows = _read_csv(out / "scan_relative.csv")
    assert rows[0] == ["d", "r"] and len(rows) - 1 == 5050
    assert main(["diag", "--checkpoint", ck, "--mode", "gramian", "--probes", "20", "--out", str(out)]) == 0
    G = np.load(out / "gramian.npy")
    from probsurf.cli import _load_model

    _, _, model = _load_model(ck)
    pts = np.load(out / "gramian_points.npy")
    assert np.array_equal(G, kernel.gramian(model, pts))
    assert len(_read_csv(out / "uncertainty.csv")) == 21
    assert main(["diag", "--checkpoint", ck, "--mode", "differential", "--probes", "10", "--delta", "1e-3",
                 "--delta", "1e-4", "--out", str(out)]) == 0
    recs = _read_csv(out / "differential.csv")
    assert len(recs) - 1 == 20


def test_diag_differential_linear_toy_has_zero_ratio(tmp_path):
    cfg = tmp_path / "lin.cfg"
    cfg.write_text(SMOKE.replace("model.num_blocks = 2", "model.num_layers = 1\nmodel.topology = fully_connected")
                   .replace("train.iterations = 200", "train.iterations = 20").replace("train.warm_iters = 100", "train.warm_iters = 10")
                   .replace("train.checkpoint_period = 100", "train.checkpoint_period = 0")
                   .replace("eval.eval_period = 50", "eval.eval_period = 10"))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    assert main(["diag", "--checkpoint", str(tmp_path / "run" / "final.bin"), "--mode", "differential",
                 "--probes", "20", "--out", str(tmp_path / "d")]) == 0
    rows = _read_csv(tmp_path / "d" / "differential.csv")[1:]
    ratios = [float(r[4]) for r in rows if r[5] == "0"]
    assert ratios and max(ratios) < 1e-9


@pytest.mark.parametrize("name, verdict", [("pso_lde", "feasible"), ("gan_critic", "needs_range_restriction"),
                                           ("unit", "infeasible")])
def test_feasibility_subcommand(name, verdict, capsys, tmp_path):
    args = ["feasibility", "--instance", name, "--out", str(tmp_path)]
    if name == "pso_lde":
        args += ["--param", "alpha=0.25"]
    assert main(args) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["verdict"] == verdict
    assert json.loads((tmp_path / "feasibility.json").read_text())["verdict"] == verdict
    assert main(["feasibility", "--instance", "missing"]) == EXIT_CONFIG


def test_sample_subcommand(tmp_path):
    assert main(["sample", "--distribution", "columns", "--dim", "3", "--count", "50", "--out", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "samples.csv")
    assert rows[0] == ["x0", "x1", "x2"] and len(rows) == 51
    assert main(["sample", "--distribution", "matrix", "--dim", "20", "--out", str(tmp_path)]) == 0
    assert np.loadtxt(tmp_path / "matrix.csv", delimiter=",").shape == (20, 20)


def test_fmt_round_trips_doubles():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17, 3):
        assert float(fmt(v)) == v
    assert fmt(5) == "5"
