import json
import subprocess
import sys

import numpy as np
import pytest

from encoderlab import cli
from encoderlab.agents.runlog import read_runlog, write_runlog
from encoderlab.experiment import ConfigError, ExperimentConfig, load_config
from encoderlab.envs import read_pnm
from encoderlab.metrics import iqm, probability_of_improvement_point

TINY = """\
[experiment]
env = shoal
encoder = impoola
tau = 1
base_channels = 4,8,8
levels = 5
total_steps = 64
seeds = 0
eval_every = 32
eval_episodes = 2

[train]
num_envs = 2
rollout_len = 16
batch_size = 16
epochs = 1
"""


@pytest.fixture
def tiny_ini(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY.replace("eval_episodes = 2", f"eval_episodes = 2\nout_dir = {tmp_path / 'runs'}"))
    return path


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ini = root / "tiny.ini"
    ini.write_text(TINY.replace("eval_episodes = 2", f"eval_episodes = 2\nout_dir = {root / 'runs'}"))
    assert cli.main(["train", "--config", str(ini), "--quiet"]) == 0
    return root / "runs" / "shoal-ppo-impoola-generalization-s0"


def test_defaults_validate():
    cfg = load_config(environ={})
    assert cfg == ExperimentConfig().validate()
    assert cfg.train_config(0).lr == pytest.approx(3.5e-4)


def test_precedence_file_env_flag(tiny_ini):
    cfg = load_config(tiny_ini, environ={})
    assert cfg.levels == 5 and cfg.base_channels == (4, 8, 8)
    env = {"ENCODERLAB_EXPERIMENT_LEVELS": "7", "ENCODERLAB_TRAIN_LR": "0.002", "ENCODERLAB_KERNELS": "bogus"}
    cfg = load_config(tiny_ini, environ=env)
    assert cfg.levels == 7 and cfg.train_config(0).lr == 0.002
    cfg = load_config(tiny_ini, {"levels": "9", "train.lr": "0.003"}, environ=env)
    assert cfg.levels == 9 and cfg.train_config(0).lr == 0.003


def test_ini_round_trip(tiny_ini, tmp_path):
    cfg = load_config(tiny_ini, {"train.clip_eps": "0.1"}, environ={})
    again = tmp_path / "again.ini"
    again.write_text(cfg.to_ini())
    assert load_config(again, environ={}) == cfg


@pytest.mark.parametrize("overrides", [
    {"algo": "sac"}, {"env": "pong"}, {"tau": "x"}, {"track": "speed"}, {"train.bogus": "1"},
    {"train.lr": "-1"}, {"nonsense": "1"}, {"encoder": "resnet"}, {"seeds": ""}, {"kernels": "cuda"},
])
def test_bad_config_raises(overrides):
    with pytest.raises(ConfigError):
        load_config(None, overrides, environ={})


def test_config_errors_exit_2(tmp_path, capsys):
    assert cli.main(["train", "--env", "pong"]) == 2
    assert "env must be" in capsys.readouterr().err
    assert cli.main(["train", "--set", "nonsense"]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[weird]\nx = 1\n")
    assert cli.main(["train", "--config", str(bad)]) == 2
    assert cli.main(["train", "--config", str(tmp_path / "missing.ini")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_exits_3(tiny_ini, capsys):
    code = cli.main(["train", "--config", str(tiny_ini), "--quiet",
                     "--set", "train.lr=1e30", "--set", "train.max_grad_norm=1e30"])
    assert code == 3
    assert "numerical abort" in capsys.readouterr().err


def test_run_dir_layout(trained_run):
    assert sorted(p.name for p in trained_run.iterdir()) == [
        "checkpoint.impk", "config.ini", "manifest.json", "runlog.jsonl"]
    manifest = json.loads((trained_run / "manifest.json").read_text())
    assert manifest["seeds"] == [0] and manifest["encoder"] == "impoola" and manifest["wall_clock_s"] > 0
    records = read_runlog(trained_run / "runlog.jsonl")
    evals = [r for r in records if r["kind"] == "eval"]
    assert sorted({(r["t"], r["split"]) for r in evals}) == [(32, "test"), (32, "train"), (64, "test"), (64, "train")]


def test_training_is_deterministic(trained_run, tmp_path):
    ini = tmp_path / "again.ini"
    ini.write_text(TINY.replace("eval_episodes = 2", f"eval_episodes = 2\nout_dir = {tmp_path}"))
    assert cli.main(["train", "--config", str(ini), "--quiet"]) == 0
    again = tmp_path / trained_run.name
    assert (again / "runlog.jsonl").read_bytes() == (trained_run / "runlog.jsonl").read_bytes()
    assert (again / "checkpoint.impk").read_bytes() == (trained_run / "checkpoint.impk").read_bytes()


def test_evaluate_reproduces_final_eval(trained_run, capsys):
    assert cli.main(["evaluate", str(trained_run)]) == 0
    printed = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    logged = [r for r in read_runlog(trained_run / "runlog.jsonl") if r["kind"] == "eval" and r["t"] == 64]
    assert printed == logged


def test_evaluate_missing_checkpoint_exits_2(tmp_path):
    assert cli.main(["evaluate", str(tmp_path)]) == 2


def test_analyze_sensitivity(trained_run, tmp_path, capsys):
    out = tmp_path / "probe"
    assert cli.main(["analyze", str(trained_run), "--probe", "sensitivity", "--states", "2",
                     "--out", str(out)]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["states"] == 2
    rows = (out / "sensitivity.csv").read_text().splitlines()
    assert rows[0] == "dx,dy,score" and len(rows) == 1 + 17 * 17
    assert read_pnm(out / "sensitivity.pgm").shape == (17, 17)


def test_analyze_dormant_appends_record(trained_run, tmp_path, capsys):
    before = len(read_runlog(trained_run / "runlog.jsonl"))
    assert cli.main(["analyze", str(trained_run), "--probe", "dormant", "--batch", "8",
                     "--out", str(tmp_path)]) == 0
    record = json.loads(capsys.readouterr().out)
    assert record["kind"] == "dormant" and 0 <= record["total_fraction"] <= 1
    after = read_runlog(trained_run / "runlog.jsonl")
    assert len(after) == before + 1 and after[-1] == record


def _fake_run(root, name, algo_encoder, env, seed, finals):
    algo, encoder = algo_encoder.split("/")
    run = root / name
    run.mkdir()
    (run / "manifest.json").write_text(json.dumps({"algo": algo, "encoder": encoder, "env": env,
                                                   "seeds": [seed]}))
    records = []
    for split, final in finals.items():
        records.append({"t": 10, "kind": "eval", "split": split, "norm_score": 0.0})
        records.append({"t": 20, "kind": "eval", "split": split, "norm_score": final})
    write_runlog(run / "runlog.jsonl", records)
    return run


def test_report_tables(tmp_path):
    scores = {"ppo/impala": {"shoal": [0.1, 0.5, 0.2], "corridor": [0.3, 0.0, 0.9]},
              "ppo/impoola": {"shoal": [0.4, 0.6, 0.8], "corridor": [0.2, 0.7, 0.5]}}
    dirs = []
    for algo, per_env in scores.items():
        for env, vals in per_env.items():
            for seed, v in enumerate(vals):
                dirs.append(_fake_run(tmp_path, f"{env}-{algo.replace('/', '-')}-{seed}", algo, env, seed,
                                      {"test": v}))
    out = tmp_path / "report"
    assert cli.main(["report", *map(str, dirs), "--out", str(out), "--resamples", "1000"]) == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "algo,env,split,iqm,ci_lo,ci_hi"
    table = {(r[0], r[1]): [float(v) for v in r[3:]] for r in (line.split(",") for line in lines[1:])}
    # pooled over 6 runs, trim 1 from each end
    assert table[("ppo/impala", "all")][0] == pytest.approx(np.mean([0.1, 0.2, 0.3, 0.5]), abs=1e-6)
    assert table[("ppo/impoola", "all")][0] == pytest.approx(np.mean([0.4, 0.5, 0.6, 0.7]), abs=1e-6)
    # three runs trim nothing
    assert table[("ppo/impala", "shoal")][0] == pytest.approx(np.mean([0.1, 0.5, 0.2]), abs=1e-6)
    for point, lo, hi in table.values():
        assert lo <= point <= hi
    poi = [line.split(",") for line in (out / "poi.csv").read_text().splitlines()[1:]]
    row = next(r for r in poi if r[1] == "ppo/impoola" and r[2] == "ppo/impala")
    expected = probability_of_improvement_point(scores["ppo/impoola"], scores["ppo/impala"])
    assert float(row[3]) == pytest.approx(expected, abs=1e-6)
    svg = (out / "curves-shoal-test.svg").read_text()
    assert svg.startswith("<svg") and "ppo/impoola" in svg


def test_report_refuses_unfinished_run(tmp_path, capsys):
    run = _fake_run(tmp_path, "r", "ppo/impoola", "shoal", 0, {"test": 0.5})
    (run / "manifest.json").unlink()
    assert cli.main(["report", str(run), "--out", str(tmp_path / "out")]) == 2
    assert "manifest" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "encoderlab", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "train" in out.stdout


def test_dqn_run_end_to_end(tmp_path):
    ini = tmp_path / "dqn.ini"
    ini.write_text(TINY.replace("[train]\nnum_envs = 2\nrollout_len = 16\nbatch_size = 16\nepochs = 1\n",
                                "[train]\nnum_envs = 2\nbatch_size = 8\nbuffer_size = 64\nlearning_starts = 16\n"
                                "target_update = 16\n")
                   .replace("[experiment]\n", f"[experiment]\nalgo = dqn\nout_dir = {tmp_path}\n"))
    assert cli.main(["train", "--config", str(ini), "--quiet"]) == 0
    run = tmp_path / "shoal-dqn-impoola-generalization-s0"
    records = read_runlog(run / "runlog.jsonl")
    train = [r for r in records if r["kind"] == "train"]
    assert train and all(np.isfinite(r["loss"]) for r in train if "loss" in r)
    assert any("loss" in r for r in train)
    assert cli.main(["evaluate", str(run), "--split", "test"]) == 0
