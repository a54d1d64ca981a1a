import json

import matplotlib
import matplotlib.figure
import numpy as np
import pytest

from mldsim.cli import main
from mldsim.config import ConfigError, RunConfig, config_hash, dump_toml, load_config
from mldsim.harness import METRIC_COLUMNS, evaluate, read_metrics, run_training, smooth, write_metrics
from mldsim.ppo import EpisodeRecord

TINY = [
    "ppo.total_timesteps=160",
    "ppo.rollout_length=64",
    "ppo.minibatch_size=32",
    "ppo.epochs_per_update=1",
    "ppo.checkpoint_every=1",
    "network.lstm_hidden=4",
    "network.trunk_hidden=[8]",
    "episode.T=8",
]
GOLDEN_HEADER = "episode,timestep,cum_reward,steps,reached_goal,min_obstacle_dist,branch_goal_count"


def test_golden_metrics_header(tmp_path):
    assert ",".join(METRIC_COLUMNS) == GOLDEN_HEADER
    path = tmp_path / "m.csv"
    write_metrics(path, [EpisodeRecord(0, 40, -1.25, 40, True, float("inf"), 3)], "h")
    assert path.read_text().splitlines() == ["# config_hash: h", GOLDEN_HEADER, "0,40,-1.250000,40,1,inf,3"]
    back = read_metrics(path)
    assert back["cum_reward"][0] == -1.25


def test_smooth_trailing_window():
    x = np.arange(10.0)
    s = smooth(x, 3)
    assert s[0] == 0 and s[1] == 0.5 and s[5] == 4.0
    np.testing.assert_array_equal(smooth(np.full(7, 2.5), 50), np.full(7, 2.5))


def test_load_config_layers_and_types(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("seed = 3\n[ppo]\nlearning_rate = 1\n[scene.human]\nenabled = false\n")
    cfg = load_config(p, ["ppo.epochs_per_update=4", "reward.gamma=0.9"], seed=11)
    assert cfg.seed == 11 and cfg.ppo.epochs_per_update == 4
    assert cfg.ppo.learning_rate == 1.0 and isinstance(cfg.ppo.learning_rate, float)
    assert not cfg.scene.human.enabled and cfg.reward.gamma == 0.9


def test_config_errors_name_the_field(tmp_path):
    with pytest.raises(ConfigError, match="ppo.bogus"):
        load_config(None, ["ppo.bogus=1"])
    with pytest.raises(ConfigError, match="integer"):
        load_config(None, ["episode.T=2.5"])
    p = tmp_path / "bad.toml"
    p.write_text("[ppo]\nclip_epsilon = \n")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)
    p.write_text("[ppo]\nclip_epsilon = 1.5\n")
    with pytest.raises(ConfigError, match="clip_epsilon"):
        load_config(p)


def test_config_hash_stable_and_roundtrips(tmp_path):
    cfg = load_config(None, ["ppo.learning_rate=1"])
    assert config_hash(cfg) == config_hash(load_config(None, ["ppo.learning_rate=1.0"]))
    p = tmp_path / "dump.toml"
    p.write_text(dump_toml(cfg))
    assert config_hash(load_config(p)) == config_hash(cfg)
    assert config_hash(cfg) != config_hash(RunConfig())
    assert len(config_hash(cfg)) == 12


def test_train_artifacts_and_determinism(tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--seed", "5", "--out", str(tmp_path / name), *sum((["--override", o] for o in TINY), [])]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    chash = config_hash(load_config(None, TINY, seed=5))
    for name in ("metrics_agent1.csv", "metrics_agent2.csv", "summary.json", "config.toml",
                 "learning_curve_agent1.svg", "learning_curve_agent2.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
        assert chash in (a / name).read_text(), name
    m = read_metrics(a / "metrics_agent1.csv")
    assert len(m["episode"]) == 20
    summary = json.loads((a / "summary.json").read_text())
    assert len(summary["curves"]["agent1"]) == summary["episodes"]["agent1"] == 20
    assert len(summary["smoothed"]["agent2"]) == 20
    ckpts = sorted(p.name for p in (a / "checkpoints").iterdir())
    assert ckpts == ["agent1_final.json", "agent1_update0001.json", "agent1_update0002.json",
                     "agent2_final.json", "agent2_update0001.json", "agent2_update0002.json"]
    assert "wall_clock_seconds" in json.loads((a / "timing.json").read_text())


def test_single_agent_run_without_human(tmp_path):
    cfg = load_config(None, TINY + ["agents=[0]", "scene.human.enabled=false"])
    summary = run_training(cfg, tmp_path)
    assert list(summary.curves) == ["agent1"]
    assert not (tmp_path / "metrics_agent2.csv").exists()


def test_eval_zero_init_policy_is_null(tmp_path):
    cfg = load_config(None, TINY + ["scene.human.enabled=false"])
    summary, records = evaluate(cfg, None, 2, seed=0, agent_index=0)
    assert summary.success_rate == 0.0
    assert [r.steps for r in records] == [8, 8]
    # zero actions: reward is constant along the episode, so both episodes match
    assert records[0].cum_reward == pytest.approx(records[1].cum_reward)


def test_eval_cli_deterministic_and_mismatch(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--out", str(run), *sum((["--override", o] for o in TINY), [])]) == 0
    ck = str(run / "checkpoints" / "agent1_final.json")
    args = ["eval", "--checkpoint", ck, "--episodes", "2", "--seed", "1", *sum((["--override", o] for o in TINY), [])]
    capsys.readouterr()
    assert main(args + ["--out", str(tmp_path / "e1")]) == 0
    first = capsys.readouterr().out
    assert main(args + ["--out", str(tmp_path / "e2")]) == 0
    assert capsys.readouterr().out == first
    assert (tmp_path / "e1" / "eval_agent1.csv").read_bytes() == (tmp_path / "e2" / "eval_agent1.csv").read_bytes()
    code = main(args + ["--override", "network.lstm_hidden=6", "--out", str(tmp_path / "e3")])
    assert code == 2
    assert "policy.lstm" in capsys.readouterr().err


def test_dump_cloud_cli(tmp_path, monkeypatch):
    monkeypatch.setenv("MLDSIM_OUT", str(tmp_path / "default"))
    assert main(["dump-cloud"]) == 0
    (path,) = (tmp_path / "default").iterdir()
    text = path.read_text()
    for name in ("Table", "Human", "Box", "Robot", "Cube"):
        assert f",{name}\n" in text
    out = tmp_path / "nohuman.csv"
    assert main(["dump-cloud", "--override", "scene.human.enabled=false", "--out", str(out)]) == 0
    assert ",Human\n" not in out.read_text()
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["dump-cloud", "--out", str(blocker / "sub" / "c.csv")]) == 3


def test_cli_config_errors(tmp_path, capsys):
    assert main(["train", "--override", "ppo.nope=1", "--out", str(tmp_path)]) == 2
    assert "ppo.nope" in capsys.readouterr().err
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = [\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.toml")]) == 2


def write_csv(path, rewards):
    recs = [EpisodeRecord(k, 40 * (k + 1), r, 40, False, 0.5, 0) for k, r in enumerate(rewards)]
    write_metrics(path, recs, "cafe")


class FigureSpy:
    """Records axis limits and plotted data of every saved figure."""

    def __init__(self, monkeypatch):
        self.figs = []
        real = matplotlib.figure.Figure.savefig

        def spy(fig, *a, **k):
            ax = fig.axes[0]
            self.figs.append({"xlim": ax.get_xlim(), "ylim": ax.get_ylim(),
                              "lines": [ln.get_ydata() for ln in ax.get_lines()],
                              "labels": (ax.get_xlabel(), ax.get_ylabel())})
            return real(fig, *a, **k)

        monkeypatch.setattr(matplotlib.figure.Figure, "savefig", spy)


def test_plot_cli_shared_scales_and_errors(tmp_path, monkeypatch):
    write_csv(tmp_path / "metrics_agent1.csv", [-3.0] * 1400)
    write_csv(tmp_path / "metrics_agent2.csv", np.linspace(-10, 5, 1400))
    spy = FigureSpy(monkeypatch)
    csvs = [str(tmp_path / "metrics_agent1.csv"), str(tmp_path / "metrics_agent2.csv")]
    assert main(["plot", *csvs, "--out", str(tmp_path / "plots")]) == 0
    first, second = spy.figs
    assert first["xlim"] == second["xlim"] == (0, 1400)
    assert first["ylim"] == second["ylim"]
    assert first["labels"] == ("episode", "cumulative reward")
    # constant input: raw and smoothed series are both flat at that value
    for y in first["lines"]:
        np.testing.assert_array_equal(y, np.full(1400, -3.0))
    assert "cafe" in (tmp_path / "plots" / "learning_curve_agent1.svg").read_text()

    assert main(["plot", *csvs, "--out", str(tmp_path / "again")]) == 0
    for name in ("learning_curve_agent1.svg", "learning_curve_agent2.svg"):
        assert (tmp_path / "again" / name).read_bytes() == (tmp_path / "plots" / name).read_bytes()

    (tmp_path / "bad.csv").write_text("episode,reward\n0,1\n")
    assert main(["plot", str(tmp_path / "bad.csv")]) == 2
    assert main(["plot", str(tmp_path / "absent.csv")]) == 2
