import json
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given, settings, strategies as st

from fgdqn.cli import main
from fgdqn.config import PRESETS, RunConfig, parse_assignment, set_dotted
from fgdqn.validation import ValidationError


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestConfig:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_roundtrip(self, name):
        cfg = RunConfig.preset(name)
        again = RunConfig.from_dict(json.loads(cfg.to_json()))
        assert again == cfg
        assert again.to_json() == cfg.to_json()

    def test_overrides(self):
        cfg = RunConfig.preset("forest").with_overrides(["trainer.schedule.base=0.003", "environment.fire_prob=0.01",
                                                          "network.activation=gelu"])
        assert cfg.trainer["schedule"]["base"] == 0.003
        assert cfg.environment["fire_prob"] == 0.01
        assert cfg.topology().activation == "gelu"

    def test_parse_assignment(self):
        assert parse_assignment("a.b=1e-3") == ("a.b", 1e-3)
        assert parse_assignment("x=[1,2]") == ("x", [1, 2])
        assert parse_assignment("x=relu") == ("x", "relu")
        with pytest.raises(ValidationError):
            parse_assignment("novalue")

    def test_set_dotted_creates_sections(self):
        doc = {}
        set_dotted(doc, "a.b.c", 1)
        assert doc == {"a": {"b": {"c": 1}}}
        with pytest.raises(ValidationError):
            set_dotted({"a": 1}, "a.b", 2)

    @pytest.mark.parametrize("override", [
        "environment.name=mountaincar", "trainer.algorithm=sarsa", "trainer.batch_size=0", "budget=-1",
        "seeds=[]", "seeds=[1,1]", "network.activation=tanh", "environment.fire_prob=1.5", "bogus=1",
        "environment.pole_mass=1",
    ])
    def test_invalid(self, override):
        with pytest.raises(ValidationError):
            RunConfig.preset("forest").with_overrides([override])

    def test_cartpole_rejects_tabular(self):
        with pytest.raises(ValidationError):
            RunConfig.preset("cartpole").with_overrides(["trainer.algorithm=tabular_q"])

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1e-6, 1.0), st.integers(1, 500), st.lists(st.integers(0, 99), min_size=1, max_size=5, unique=True))
    def test_roundtrip_property(self, base, batch, seeds):
        cfg = RunConfig.preset("forest").with_overrides(
            [f"trainer.schedule.base={base!r}", f"trainer.batch_size={batch}", f"seeds={json.dumps(seeds)}"])
        assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg


class TestSolve:
    def test_low_regime(self, capsys, tmp_path):
        code, out, _ = run(capsys, "solve", "--out", str(tmp_path))
        assert code == 0 and json.loads(out) == [0, 0, 1, 1, 1, 1, 1, 1, 1, 1]
        doc = json.loads((tmp_path / "solution.json").read_text())
        assert set(doc) >= {"policy", "V", "Q"}

    def test_high_regime(self, capsys, tmp_path):
        code, out, _ = run(capsys, "solve", "--preset", "forest_high", "--out", str(tmp_path))
        assert json.loads(out) == [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]

    def test_zero_discount(self, capsys, tmp_path):
        _, out, _ = run(capsys, "solve", "--set", "trainer.discount=0", "--out", str(tmp_path))
        assert json.loads(out) == [0] + [1] * 9

    def test_config_file(self, capsys, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(RunConfig.preset("forest_high").to_json())
        _, out, _ = run(capsys, "solve", "--config", str(path), "--out", str(tmp_path))
        assert json.loads(out) == [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]

    def test_cartpole_unsupported(self, capsys):
        code, _, err = run(capsys, "solve", "--preset", "cartpole")
        assert code != 0 and "finite" in err


class TestTrain:
    def test_outputs_and_determinism(self, capsys, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert run(capsys, "train", "--set", "budget=150", "--seeds", "0,1", "--out", str(d))[0] == 0
        for name in ("run_0.csv", "run_1.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert (a / "run_0.csv").read_bytes() != (a / "run_1.csv").read_bytes()
        summary = json.loads((a / "summary.json").read_text())
        assert [r["seed"] for r in summary["runs"]] == [0, 1]
        assert (a / "checkpoint_0.json").exists()

    def test_parallel_matches_serial(self, capsys, tmp_path):
        run(capsys, "train", "--set", "budget=60", "--seeds", "0,1", "--out", str(tmp_path / "s"))
        run(capsys, "train", "--set", "budget=60", "--seeds", "0,1", "--parallel", "2", "--out", str(tmp_path / "p"))
        for name in ("run_0.csv", "run_1.csv"):
            assert (tmp_path / "s" / name).read_bytes() == (tmp_path / "p" / name).read_bytes()

    def test_zero_budget_header_only(self, capsys, tmp_path):
        run(capsys, "train", "--set", "budget=0", "--seeds", "0", "--out", str(tmp_path))
        text = (tmp_path / "run_0.csv").read_text()
        assert text == "iter,dqn_bellman_error,running_bellman_error,true_bellman_error,hamming_distance\n"

    def test_cartpole_zero_budget_header(self, capsys, tmp_path):
        run(capsys, "train", "--preset", "cartpole", "--set", "budget=0", "--seeds", "0", "--out", str(tmp_path))
        text = (tmp_path / "run_0.csv").read_text()
        assert text == ("episode,episode_reward,episode_length,moving_average_reward,discounted_return,"
                        "dqn_bellman_error\n")

    def test_invalid_config_exit(self, capsys, tmp_path):
        code, _, err = run(capsys, "train", "--set", "trainer.batch_size=0", "--out", str(tmp_path))
        assert code != 0 and "batch_size" in err

    def test_bad_seeds_flag(self, capsys):
        code, _, err = run(capsys, "train", "--seeds", "a,b")
        assert code != 0 and "seeds" in err

    def test_divergence_nonzero_exit(self, capsys, tmp_path):
        code, _, err = run(capsys, "train", "--set", "budget=300", "--seeds", "0", "--set",
                           'trainer.schedule={"kind":"constant","base":1e6}', "--out", str(tmp_path))
        assert code != 0 and "diverged" in err
        assert json.loads((tmp_path / "summary.json").read_text())["runs"][0]["diverged"] is True

    def test_tabular_checkpoint_eval(self, capsys, tmp_path):
        run(capsys, "train", "--set", "trainer.algorithm=tabular_q", "--set",
            'trainer.schedule={"kind":"polynomial","base":1.0,"exponent":1.0,"offset":2000}',
            "--set", "budget=100000", "--seeds", "0", "--out", str(tmp_path))
        code, out, _ = run(capsys, "eval", "--checkpoint", str(tmp_path / "checkpoint_0.json"))
        assert code == 0 and json.loads(out)["hamming_distance"] == 0


class TestCompare:
    def test_outputs(self, capsys, tmp_path):
        code, out, _ = run(capsys, "compare", "--set", "budget=120", "--seeds", "0,1", "--out", str(tmp_path))
        assert code == 0
        lines = (tmp_path / "compare_running_bellman_error.csv").read_text().splitlines()
        assert lines[0] == "iter,alg,mean,ci_low,ci_high"
        assert len(lines) == 1 + 2 * 120
        ham = (tmp_path / "compare_hamming_distance.csv").read_text().splitlines()[1:]
        assert [int(r.split(",")[0]) for r in ham if ",fgdqn," in r] == [1, 51, 101]
        for name in ("running_bellman_error", "true_bellman_error", "hamming_distance"):
            root = ET.parse(tmp_path / f"compare_{name}.svg").getroot()
            assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2
        assert set(json.loads(out)) == {"dqn", "fgdqn"}
        assert (tmp_path / "fgdqn" / "run_1.csv").exists()

    def test_ci_brackets_mean(self, capsys, tmp_path):
        run(capsys, "compare", "--set", "budget=50", "--seeds", "0,1,2", "--out", str(tmp_path))
        for row in (tmp_path / "compare_true_bellman_error.csv").read_text().splitlines()[1:]:
            _, _, mean, lo, hi = row.split(",")
            assert float(lo) <= float(mean) <= float(hi)

    def test_needs_two_seeds(self, capsys, tmp_path):
        code, _, err = run(capsys, "compare", "--seeds", "0", "--out", str(tmp_path))
        assert code != 0 and "2 seeds" in err

    def test_cartpole_compare(self, capsys, tmp_path):
        code, _, _ = run(capsys, "compare", "--preset", "cartpole", "--set", "budget=3", "--set",
                         "trainer.batch_size=8", "--seeds", "0,1", "--out", str(tmp_path))
        assert code == 0
        lines = (tmp_path / "compare_moving_average_reward.csv").read_text().splitlines()
        assert len(lines) == 1 + 2 * 3


class TestGradcheck:
    def test_passes(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--probes", "10")
        assert code == 0
        assert out.count("PASS") == 2
        assert "layer 0:" in out and "worst probe per layer" in out

    def test_corrupted_gradient_fails(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--probes", "5", "--corrupt", "1e-3")
        assert code != 0 and "FAIL" in out


class TestEval:
    def test_forest_checkpoint(self, capsys, tmp_path):
        run(capsys, "train", "--set", "budget=50", "--seeds", "0", "--out", str(tmp_path))
        code, out, _ = run(capsys, "eval", "--checkpoint", str(tmp_path / "checkpoint_0.json"))
        report = json.loads(out)
        assert code == 0 and len(report["policy"]) == 10 and report["optimal_policy"] == [0, 0] + [1] * 8

    def test_cartpole_rollout(self, capsys, tmp_path):
        run(capsys, "train", "--preset", "cartpole", "--set", "budget=2", "--set", "trainer.batch_size=8",
            "--seeds", "0", "--out", str(tmp_path))
        code, out, _ = run(capsys, "eval", "--preset", "cartpole", "--episodes", "3",
                           "--checkpoint", str(tmp_path / "checkpoint_0.json"))
        report = json.loads(out)
        assert code == 0 and len(report["rewards"]) == 3
        assert all(1 <= r <= 200 for r in report["rewards"])

    def test_missing_checkpoint(self, capsys, tmp_path):
        code, _, err = run(capsys, "eval", "--checkpoint", str(tmp_path / "nope.json"))
        assert code != 0 and "does not exist" in err
