"""End-to-end tests for the deconfound CLI on the smoke preset."""

import json

import numpy as np
import pandas as pd
import pytest

from app.main import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    from app.config import FIELD_NAMES

    for name in FIELD_NAMES:
        monkeypatch.delenv(f"DECONFOUND_{name.upper()}", raising=False)


def _run(tmp_path, *args: str) -> int:
    return main(["--preset", "smoke", "--output-dir", str(tmp_path), *args])


class TestGenExpert:
    def test_writes_dataset_and_family(self, tmp_path):
        assert _run(tmp_path, "gen-expert") == EXIT_OK
        lines = (tmp_path / "expert.jsonl").read_text().splitlines()
        assert len(lines) == 10
        record = json.loads(lines[0])
        assert len(record["steps"]) == 20
        family = json.loads((tmp_path / "family.json").read_text())
        assert family["num_latents"] == 5
        assert "expert_policy" in family

    def test_is_reproducible(self, tmp_path):
        _run(tmp_path / "a", "gen-expert")
        _run(tmp_path / "b", "gen-expert")
        assert (tmp_path / "a" / "expert.jsonl").read_bytes() == (tmp_path / "b" / "expert.jsonl").read_bytes()

    def test_summary_is_printed(self, tmp_path, capsys):
        _run(tmp_path, "gen-expert")
        assert "Expert dataset" in capsys.readouterr().out


class TestTrain:
    @pytest.mark.parametrize("algo", ["tier2", "naive-bc", "tier1"])
    def test_writes_checkpoint_and_log(self, tmp_path, algo):
        assert _run(tmp_path, "gen-expert") == EXIT_OK
        assert _run(tmp_path, "train", "--algo", algo) == EXIT_OK
        run_dir = tmp_path / algo / "seed0"
        checkpoint = json.loads((run_dir / "checkpoint.json").read_text())
        assert checkpoint["algo"] == algo
        assert checkpoint["K"] == 5
        assert "workers" not in checkpoint["config"]
        log = pd.read_csv(run_dir / "training_log.csv")
        assert list(log.columns) == [
            "step", "elbo", "imitation_loss", "online_best_arm_count", "eval_best_arm_prob",
        ]
        assert not np.isnan(log["online_best_arm_count"].iloc[-1])

    def test_tier2_without_dataset_file(self, tmp_path):
        assert _run(tmp_path, "train", "--algo", "tier2") == EXIT_OK
        assert (tmp_path / "tier2" / "seed0" / "checkpoint.json").exists()

    def test_tier1_mle(self, tmp_path):
        assert _run(tmp_path, "--horizon", "200", "gen-expert") == EXIT_OK
        assert _run(tmp_path, "--horizon", "200", "--merge-tolerance", "0.3", "train", "--algo", "tier1-mle") == EXIT_OK
        assert (tmp_path / "tier1-mle" / "seed0" / "checkpoint.json").exists()
        assert not (tmp_path / "tier1-mle" / "seed0" / "training_log.csv").exists()

    def test_offline_algorithm_needs_a_dataset(self, tmp_path):
        assert _run(tmp_path, "train", "--algo", "naive-bc") == EXIT_USAGE

    def test_training_is_reproducible(self, tmp_path):
        for run in ("a", "b"):
            _run(tmp_path / run, "gen-expert")
            _run(tmp_path / run, "train", "--algo", "tier2")
        a = (tmp_path / "a" / "tier2" / "seed0" / "checkpoint.json").read_bytes()
        b = (tmp_path / "b" / "tier2" / "seed0" / "checkpoint.json").read_bytes()
        assert a == b

    def test_numerical_abort_exit_code(self, tmp_path, monkeypatch):
        from app.learn.elbo import ModelGradient

        def poisoned(model, batch, beta, targets=None):
            grad = ModelGradient.zeros_like(model)
            grad.dynamics[...] = np.inf
            return 0.0, grad

        monkeypatch.setattr("app.learn.tier2.elbo_online_batch", poisoned)
        assert _run(tmp_path, "train", "--algo", "tier2") == EXIT_NUMERICAL


class TestEval:
    def test_reference_policy(self, tmp_path):
        assert _run(tmp_path, "eval", "--policy", "random", "--raster") == EXIT_OK
        out = tmp_path / "eval" / "random"
        summary = json.loads((out / "summary.json").read_text())
        assert summary["policy"] == "random"
        assert summary["horizon"] == 20
        assert summary["imitation_loss_mean"] == pytest.approx(np.log(5))
        assert (out / "raster.csv").exists()
        traces = (out / "traces.jsonl").read_text().splitlines()
        assert len(traces) == 10
        first = json.loads(traces[0])
        assert len(first["actions"]) == 20
        assert len(first["action_dists"][0]) == 5
        assert "online_best_arm_smooth" in pd.read_csv(out / "online_best_arm.csv").columns

    def test_no_raster_no_traces(self, tmp_path):
        assert _run(tmp_path, "eval", "--policy", "random") == EXIT_OK
        assert not (tmp_path / "eval" / "random" / "traces.jsonl").exists()

    def test_checkpoint_by_algo(self, tmp_path):
        _run(tmp_path, "gen-expert")
        _run(tmp_path, "train", "--algo", "tier2")
        assert _run(tmp_path, "eval", "--policy", "checkpoint", "--algo", "tier2") == EXIT_OK
        assert (tmp_path / "eval" / "tier2" / "summary.json").exists()

    def test_checkpoint_by_path_with_sampling(self, tmp_path):
        _run(tmp_path, "gen-expert")
        _run(tmp_path, "train", "--algo", "naive-bc")
        pattern = str(tmp_path / "naive-bc" / "seed{seed}" / "checkpoint.json")
        code = _run(tmp_path, "eval", "--policy", "checkpoint", "--checkpoint", pattern, "--sampling", "--label", "bc-ps")
        assert code == EXIT_OK
        assert (tmp_path / "eval" / "bc-ps" / "summary.json").exists()

    def test_checkpoint_needs_a_source(self, tmp_path):
        assert _run(tmp_path, "eval", "--policy", "checkpoint") == EXIT_USAGE

    def test_missing_checkpoint(self, tmp_path):
        assert _run(tmp_path, "eval", "--policy", "checkpoint", "--algo", "tier1") == EXIT_USAGE


class TestCompare:
    def _reports(self, tmp_path):
        _run(tmp_path, "eval", "--policy", "oracle-interventional")
        _run(tmp_path, "eval", "--policy", "random")
        return str(tmp_path / "eval" / "oracle-interventional"), str(tmp_path / "eval" / "random")

    def test_passes_without_thresholds(self, tmp_path, capsys):
        a, b = self._reports(tmp_path)
        assert main(["compare", a, b]) == EXIT_OK
        assert "online_best_arm_final" in capsys.readouterr().out

    def test_failed_threshold(self, tmp_path):
        a, b = self._reports(tmp_path)
        assert main(["compare", a, b, "--min-diff", "online_best_arm_final=5"]) == EXIT_VALIDATION

    def test_malformed_threshold(self, tmp_path):
        a, b = self._reports(tmp_path)
        assert main(["compare", a, b, "--max-abs-diff", "online_best_arm_final"]) == EXIT_USAGE

    def test_horizon_mismatch(self, tmp_path):
        _run(tmp_path, "eval", "--policy", "random")
        main(["--preset", "smoke", "--output-dir", str(tmp_path), "--horizon", "10", "eval", "--policy", "random", "--label", "short"])
        assert main(["compare", str(tmp_path / "eval" / "random"), str(tmp_path / "eval" / "short")]) == EXIT_VALIDATION


class TestValidate:
    def test_registered_environment(self, tmp_path):
        assert _run(tmp_path, "validate") == EXIT_OK

    def test_broken_family_file(self, tmp_path):
        _run(tmp_path, "gen-expert")
        path = tmp_path / "family.json"
        data = json.loads(path.read_text())
        data["transitions"][0][0][0] = [0.9, 0.9]
        path.write_text(json.dumps(data))
        assert _run(tmp_path, "validate", "--family", str(path)) == EXIT_VALIDATION


class TestUsage:
    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as info:
            main(["bogus"])
        assert info.value.code == EXIT_USAGE

    def test_train_needs_algo(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            _run(tmp_path, "train")
        assert info.value.code == EXIT_USAGE

    def test_unknown_preset(self, tmp_path):
        assert main(["--preset", "galactic", "validate"]) == EXIT_USAGE

    def test_bad_override_value(self, tmp_path):
        assert _run(tmp_path, "--horizon", "zero", "validate") == EXIT_USAGE
