import csv
import json

import pytest

from dpcs import cli
from dpcs import config as cfgmod
from dpcs.errors import ConfigurationError


def write_config(path, episodes=3, **train):
    body = {"scenario": {"source": "synthetic", "seed": 1, "households": 2, "T": 8},
            "train": {"episodes": episodes, "beta": 8, "batch_size": 4, "hidden": [8, 8], "gradient_steps": 2,
                      **train},
            "evaluation": {"rollouts": 3, "br_perturbations": 2}}
    path.write_text(json.dumps(body, indent=1))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_train_writes_log(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    rows = read_csv(tmp_path / "run" / "train_log.csv")
    assert len(rows) == 1 + 3
    assert (tmp_path / "run" / "agents.npz").exists()
    assert (tmp_path / "run" / "config.json").read_text() == cfg.read_text()
    assert "episode     3" in capsys.readouterr().out


def test_train_seed_flag_is_reproducible(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    for name in ("a", "b", "c"):
        seed = "8" if name == "c" else "7"
        assert cli.main(["train", "--config", str(cfg), "--seed", seed, "--out", str(tmp_path / name), "--quiet"]) == 0
    a, b, c = ((tmp_path / n / "train_log.csv").read_bytes() for n in "abc")
    assert a == b and a != c


def test_missing_scenario_file(tmp_path, capsys):
    missing = tmp_path / "nowhere.txt"
    assert cli.main(["train", "--scenario", str(missing), "--out", str(tmp_path / "x")]) != 0
    assert str(missing) in capsys.readouterr().err


def test_config_errors_carry_line_and_field(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "train": {\n    "episodes": 3,\n    "gama": 0.9\n  }\n}\n')
    assert cli.main(["train", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "bad.json:4" in err and "train.gama" in err
    bad.write_text('{\n  "train": {"episodes": 3,}\n}\n')
    assert cli.main(["train", "--config", str(bad)]) == 2
    assert "bad.json:2:" in capsys.readouterr().err


def test_eval_outputs(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    run = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg), "--out", str(run), "--quiet"]) == 0
    out = tmp_path / "eval"
    assert cli.main(["eval", "--config", str(cfg), "--checkpoint", str(run / "agents.npz"), "--out", str(out)]) == 0
    metrics = read_csv(out / "metrics.csv")
    assert metrics[0] == ["profile", "peak (kW)", "mean (kW)", "Var", "PAR", "Cost"]
    assert [r[0] for r in metrics[1:]] == ["original", "scheduled"]
    assert set(json.loads((out / "metrics.json").read_text())) == {"original", "scheduled"}
    rtp = read_csv(out / "rtp.csv")
    assert rtp[0] == ["slot", "hour", "load_kw", "rtp"] and len(rtp) == 9
    assert len(read_csv(out / "schedule_h0.csv")) == 9
    summary = json.loads((out / "evaluation.json").read_text())
    assert len(summary["best_response"]) == 2 and summary["rollouts"] == 3
    assert "PAR" in capsys.readouterr().out


def test_eval_bad_checkpoints(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    corrupt = tmp_path / "corrupt.npz"
    corrupt.write_bytes(b"\x00" * 64)
    assert cli.main(["eval", "--config", str(cfg), "--checkpoint", str(corrupt), "--out", str(tmp_path / "e")]) != 0
    run = tmp_path / "wide"
    assert cli.main(["train", "--config", str(cfg), "--synthetic", "3", "--out", str(run), "--quiet"]) == 0
    capsys.readouterr()
    assert cli.main(["eval", "--config", str(cfg), "--checkpoint", str(run / "agents.npz"),
                     "--out", str(tmp_path / "e2")]) == 2
    assert "observation widths" in capsys.readouterr().err


def test_compare_tables(tmp_path):
    cfg = write_config(tmp_path / "c.json", episodes=2)
    out = tmp_path / "cmp"
    assert cli.main(["compare", "--config", str(cfg), "--out", str(out), "--quiet", "--smooth", "2"]) == 0
    table = read_csv(out / "compare.csv")
    assert table[0] == ["metric", "original", "dpcs", "cddpg", "dddpg"]
    metrics = [r[0] for r in table[1:]]
    assert metrics[:5] == ["peak (kW)", "mean (kW)", "Var", "PAR", "Cost"] and "latency_s" in metrics
    latency = table[1 + metrics.index("latency_s")]
    assert all(float(v) > 0 for v in latency[2:])
    rewards = read_csv(out / "rewards.csv")
    assert rewards[0] == ["household", "algorithm", "episode_1", "final_episode"] and len(rewards) == 1 + 3 * 2
    curves = read_csv(out / "reward_curves.csv")
    assert curves[0] == ["episode", "dpcs", "cddpg", "dddpg"] and len(curves) == 3


def test_init_config_and_synth(tmp_path, capsys):
    assert cli.main(["init-config", "-o", str(tmp_path / "c.json")]) == 0
    cfg = cfgmod.load(tmp_path / "c.json")
    assert cfg.train.episodes == 400 and cfg.scenario.households == 4
    assert cli.main(["init-config", "--paper-scale"]) == 0
    paper = cfgmod.loads(capsys.readouterr().out)
    assert paper.train.beta == 1440 and paper.train.episodes == 1000 and paper.scenario.T == 144
    sc_path = tmp_path / "sc.txt"
    assert cli.main(["synth", "-o", str(sc_path), "--households", "3", "--T", "12"]) == 0
    body = {"scenario": {"source": "file", "path": "sc.txt"}}
    (tmp_path / "f.json").write_text(json.dumps(body))
    assert cfgmod.load(tmp_path / "f.json").scenario.load().N == 3


def test_bench(tmp_path, capsys):
    assert cli.main(["bench", "--households", "1", "4", "--repeats", "1", "--inner", "3", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "scaling.csv")
    assert rows[0][0] == "N" and len(rows) == 3


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cfgmod.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    cfg = cfgmod.loads("{}")
    assert cfg.output_dir == str(tmp_path / "root" / "desk")


def test_config_validation_messages():
    with pytest.raises(ConfigurationError, match="scenario.source"):
        cfgmod.loads('{"scenario": {"source": "ftp"}}')
    with pytest.raises(ConfigurationError, match="output.formats"):
        cfgmod.loads('{"output": {"formats": ["xml"]}}')
    with pytest.raises(ConfigurationError, match="not a known section"):
        cfgmod.loads('{"trian": {}}')
    with pytest.raises(ConfigurationError, match="price"):
        cfgmod.loads('{"price": {"sigma1": 0.5}}')
    cfg = cfgmod.loads('{"train": {"noise": {"sigma_start": 0.3, "sigma_end": 0.0, "decay_episodes": 10}}}')
    assert cfg.train.noise.sigma(10) == 0.0
    assert cfgmod.loads(cfg.dumps()).to_dict() == cfg.to_dict()
