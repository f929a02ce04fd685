"""Tests for the command-line interface: verbs, flags, exit codes."""

import csv
import json

import pytest

from semi.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main

SMALL = [
    "--steps", "512",
    "--set", "copy_period=256",
    "--set", "ppo.steps_per_phase=256",
    "--set", "ppo.num_envs=4",
    "--set", "ppo.minibatches=4",
    "--set", "align.pool_warmup=8",
    "--set", "checkpoint_every=0",
]


def run_cli(*argv):
    return main(list(argv))


class TestRunVerb:
    def test_run_writes_directory(self, tmp_path):
        """The run verb trains and leaves a self-describing directory."""
        out = tmp_path / "r0"
        assert run_cli("run", "--out", str(out), *SMALL) == EXIT_OK
        assert (out / "metrics.jsonl").is_file()
        assert (out / "summary.json").is_file()

    def test_semi_out_default_root(self, tmp_path, monkeypatch, capsys):
        """Without --out the run lands under the SEMI_OUT root."""
        monkeypatch.setenv("SEMI_OUT", str(tmp_path / "root"))
        assert run_cli("run", "--reward", "semi-p", "--seed", "3", *SMALL) == EXIT_OK
        expected = tmp_path / "root" / "blipgrid-k1-semi-p-s3"
        assert (expected / "metrics.jsonl").is_file()
        assert str(expected) in capsys.readouterr().out

    def test_existing_default_directory_not_overwritten(self, tmp_path, monkeypatch):
        """A second unnamed run picks a fresh suffixed directory."""
        monkeypatch.setenv("SEMI_OUT", str(tmp_path))
        assert run_cli("run", *SMALL) == EXIT_OK
        assert run_cli("run", *SMALL) == EXIT_OK
        assert (tmp_path / "blipgrid-k1-semi-pa-s0").is_dir()
        assert (tmp_path / "blipgrid-k1-semi-pa-s0-2").is_dir()

    def test_config_file_flag(self, tmp_path):
        """--config reads settings from a key = value file."""
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text(
            "steps = 512\ncopy_period = 256\nppo.steps_per_phase = 256\n"
            "ppo.num_envs = 4\nppo.minibatches = 4\nalign.pool_warmup = 8\n"
            "checkpoint_every = 0\nseed = 6\n")
        out = tmp_path / "r"
        assert run_cli("run", "--config", str(cfg_file), "--out", str(out)) == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert summary["seed"] == 6

    def test_cli_overrides_config_file(self, tmp_path):
        """Command-line flags beat config-file values."""
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text("seed = 6\n")
        out = tmp_path / "r"
        assert run_cli("run", "--config", str(cfg_file), "--seed", "9",
                       "--out", str(out), *SMALL) == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert summary["seed"] == 9


class TestConfigErrors:
    def test_unknown_flag(self, capsys):
        """An unrecognized flag is a configuration error."""
        assert run_cli("run", "--bogus") == EXIT_CONFIG
        assert "error" in capsys.readouterr().err

    def test_unknown_set_key(self, capsys):
        """--set with an unknown key is rejected naming the key."""
        assert run_cli("run", "--set", "ppo.lrr=1", *SMALL) == EXIT_CONFIG
        assert "ppo.lrr" in capsys.readouterr().err

    def test_malformed_set(self, capsys):
        """--set without '=' is rejected."""
        assert run_cli("run", "--set", "seed") == EXIT_CONFIG
        assert "KEY=VALUE" in capsys.readouterr().err

    def test_missing_config_file(self, capsys):
        """Pointing --config at a missing file is a configuration error."""
        assert run_cli("run", "--config", "/no/such/file.cfg") == EXIT_CONFIG
        assert "not found" in capsys.readouterr().err

    def test_invalid_env_choice(self):
        """Environment names are validated against the preset table."""
        assert run_cli("run", "--env", "nonexistent") == EXIT_CONFIG

    def test_runtime_failure_exit_code(self, tmp_path, capsys):
        """A failure past configuration (missing run dir) exits with 2."""
        assert run_cli("export", str(tmp_path / "missing"),
                       "--metric", "interaction_rate") == EXIT_RUNTIME
        assert "runtime failure" in capsys.readouterr().err


class TestSweepVerb:
    def test_sweep_aggregates_seeds(self, tmp_path, capsys):
        """The sweep verb runs every seed and writes the aggregate."""
        out = tmp_path / "sw"
        assert run_cli("sweep", "--seeds", "0,1", "--out", str(out), *SMALL) == EXIT_OK
        assert (out / "seed_0" / "metrics.jsonl").is_file()
        assert (out / "seed_1" / "metrics.jsonl").is_file()
        assert (out / "aggregate.csv").is_file()
        assert "seed 0" in capsys.readouterr().out

    def test_bad_seed_list(self, capsys):
        """A non-integer seed list is a configuration error."""
        assert run_cli("sweep", "--seeds", "0,x", *SMALL) == EXIT_CONFIG
        assert "comma-separated" in capsys.readouterr().err


class TestExportVerb:
    def test_export_writes_csv(self, tmp_path):
        """The export verb produces the step-aligned metric table."""
        out = tmp_path / "r"
        assert run_cli("run", "--out", str(out), *SMALL) == EXIT_OK
        csv_path = tmp_path / "ir.csv"
        assert run_cli("export", str(out), "--metric", "interaction_rate",
                       "--out", str(csv_path)) == EXIT_OK
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["step", "r", "median"]
        assert len(rows) == 3

    def test_unknown_metric_is_config_error(self, tmp_path, capsys):
        """An unknown metric exits 1 and lists what exists."""
        out = tmp_path / "r"
        assert run_cli("run", "--out", str(out), *SMALL) == EXIT_OK
        assert run_cli("export", str(out), "--metric", "nope") == EXIT_CONFIG
        assert "interaction_rate" in capsys.readouterr().err


class TestGradcheckVerb:
    def test_gradcheck_passes(self, capsys):
        """The audit runs every registered loss and reports success."""
        assert run_cli("gradcheck", "--cases", "1") == EXIT_OK
        out = capsys.readouterr().out
        assert "alignment_contrastive" in out
        assert "all gradient checks passed" in out


class TestReplayVerb:
    def test_replay_passes_on_dumped_run(self, tmp_path, capsys):
        """A dumped run replays cleanly through the CLI."""
        out = tmp_path / "r"
        assert run_cli("run", "--out", str(out), "--dump-trajectories", *SMALL) == EXIT_OK
        assert run_cli("replay", str(out)) == EXIT_OK
        assert "replay check passed" in capsys.readouterr().out

    def test_replay_detects_tampering(self, tmp_path, capsys):
        """A corrupted dump makes the replay verb exit 3."""
        out = tmp_path / "r"
        assert run_cli("run", "--out", str(out), "--dump-trajectories", *SMALL) == EXIT_OK
        traj = out / "trajectories.jsonl"
        lines = traj.read_text().splitlines()
        rec = json.loads(lines[0])
        rec["r_a"] += 1.0
        lines[0] = json.dumps(rec, sort_keys=True, separators=(",", ":"))
        traj.write_text("\n".join(lines) + "\n")
        assert run_cli("replay", str(out)) == EXIT_CHECK
        assert "FAILED" in capsys.readouterr().err

    def test_replay_without_dump_is_config_error(self, tmp_path):
        """Replaying a run that has no trajectory dump exits 1."""
        out = tmp_path / "r"
        assert run_cli("run", "--out", str(out), *SMALL) == EXIT_OK
        assert run_cli("replay", str(out)) == EXIT_CONFIG
