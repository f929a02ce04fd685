"""Tests for the phase-based training loop: determinism, metrics, checkpoints."""

import json
from pathlib import Path

import pytest

from semi.config import build, make_config
from semi.metrics import read_jsonl
from semi.trainer import TrainConfig, Trainer


def small_config(**overrides):
    """A few-phase configuration that runs in well under a second."""
    base = {
        "steps": "512",
        "copy_period": "256",
        "ppo.steps_per_phase": "256",
        "ppo.num_envs": "4",
        "ppo.minibatches": "4",
        "align.pool_warmup": "8",
        "checkpoint_every": "0",
    }
    base.update({k: str(v) for k, v in overrides.items()})
    return make_config(overrides=base)


def run_into(tmp_path, name, **overrides):
    cfg = small_config(**overrides)
    out = tmp_path / name
    trainer = Trainer(*build(cfg), out_dir=out)
    summary = trainer.run()
    return out, summary


class TestTrainConfig:
    def test_rejects_bad_values(self):
        """Step counts, ensemble size, and thresholds are validated."""
        with pytest.raises(ValueError):
            TrainConfig(total_steps=0)
        with pytest.raises(ValueError):
            TrainConfig(ensemble_size=1)
        with pytest.raises(ValueError):
            TrainConfig(success_threshold=1.5)
        with pytest.raises(ValueError):
            TrainConfig(ra_timestep="previous")

    def test_defaults_validate(self):
        """The default configuration constructs cleanly."""
        cfg = TrainConfig()
        assert cfg.deterministic
        assert cfg.ra_timestep == "next"


class TestDeterminism:
    def test_identical_runs_identical_metrics(self, tmp_path):
        """Two runs of the same config and seed write byte-identical metrics."""
        out_a, _ = run_into(tmp_path, "a", seed=5)
        out_b, _ = run_into(tmp_path, "b", seed=5)
        assert (out_a / "metrics.jsonl").read_bytes() == (out_b / "metrics.jsonl").read_bytes()

    def test_different_seed_different_metrics(self, tmp_path):
        """Changing the seed changes the training trace."""
        out_a, _ = run_into(tmp_path, "a", seed=5)
        out_b, _ = run_into(tmp_path, "b", seed=6)
        assert (out_a / "metrics.jsonl").read_bytes() != (out_b / "metrics.jsonl").read_bytes()

    def test_wall_clock_null_in_deterministic_mode(self, tmp_path):
        """Deterministic runs record wall_clock as null so bytes can match."""
        out, _ = run_into(tmp_path, "a")
        records = read_jsonl(out / "metrics.jsonl")
        assert all(rec["wall_clock"] is None for rec in records)

    def test_wall_clock_recorded_otherwise(self, tmp_path):
        """With determinism off each phase records a positive wall-clock time."""
        out, _ = run_into(tmp_path, "a", deterministic="false")
        records = read_jsonl(out / "metrics.jsonl")
        assert all(isinstance(rec["wall_clock"], float) and rec["wall_clock"] > 0
                   for rec in records)


class TestMetricsRecords:
    def test_expected_fields_present(self, tmp_path):
        """Each phase record carries steps, rewards, losses, and window stats."""
        out, _ = run_into(tmp_path, "a")
        records = read_jsonl(out / "metrics.jsonl")
        assert len(records) == 2
        expected = {
            "phase", "step", "episodes", "interaction_rate", "success_rate",
            "episode_return_mean", "episode_len_mean", "wall_clock", "reward_mean",
            "r_p_mean", "r_a_mean", "r_curiosity_mean", "r_disagreement_mean",
            "r_rnd_mean", "r_extrinsic_mean", "align_loss", "policy_loss",
            "value_loss", "entropy", "approx_kl", "clip_fraction", "grad_norm",
        }
        assert expected <= set(records[0])

    def test_step_counts_accumulate(self, tmp_path):
        """The step field counts cumulative environment steps across phases."""
        out, _ = run_into(tmp_path, "a")
        records = read_jsonl(out / "metrics.jsonl")
        assert [rec["step"] for rec in records] == [256, 512]

    def test_incongruity_becomes_positive(self, tmp_path):
        """Once the negative pool warms up the perceptual reward is positive."""
        out, _ = run_into(tmp_path, "a")
        records = read_jsonl(out / "metrics.jsonl")
        assert records[-1]["r_p_mean"] > 0.0
        assert records[-1]["r_a_mean"] > 0.0

    def test_total_steps_round_up_to_whole_phases(self, tmp_path):
        """A step budget that is not a phase multiple still gets reached."""
        out, summary = run_into(tmp_path, "a", steps=300)
        assert summary["total_steps"] == 512
        assert summary["phases"] == 2


class TestSummary:
    def test_summary_file_matches_return(self, tmp_path):
        """run() returns the same summary it writes to summary.json."""
        out, summary = run_into(tmp_path, "a")
        on_disk = json.loads((out / "summary.json").read_text())
        assert on_disk == summary

    def test_threshold_not_reached_is_null(self, tmp_path):
        """Exploration worlds never succeed, so steps_to_threshold stays null."""
        _, summary = run_into(tmp_path, "a")
        assert summary["steps_to_threshold"] is None

    def test_interaction_rate_in_unit_interval(self, tmp_path):
        """The summary interaction rate is a per-episode fraction."""
        _, summary = run_into(tmp_path, "a")
        assert 0.0 <= summary["interaction_rate"] <= 1.0
        assert summary["episodes"] > 0


class TestRandomPolicy:
    def test_random_preset_skips_learning(self, tmp_path):
        """The random control keeps its policy parameters untouched."""
        cfg = small_config(reward="random")
        trainer = Trainer(*build(cfg), out_dir=tmp_path / "r")
        before = trainer.policy.params.flatten().copy()
        trainer.run()
        after = trainer.policy.params.flatten()
        assert (before == after).all()

    def test_random_metrics_have_no_ppo_fields(self, tmp_path):
        """Without updates the record has window stats but no PPO losses."""
        cfg = small_config(reward="random")
        Trainer(*build(cfg), out_dir=tmp_path / "r").run()
        records = read_jsonl(tmp_path / "r" / "metrics.jsonl")
        assert "policy_loss" not in records[0]
        assert "interaction_rate" in records[0]


class TestCheckpoints:
    def test_final_checkpoint_always_written(self, tmp_path):
        """Every run ends with a loadable final checkpoint."""
        out, _ = run_into(tmp_path, "a")
        assert (out / "checkpoint.manifest").is_file()
        assert (out / "checkpoint.blob").is_file()

    def test_periodic_checkpoints(self, tmp_path):
        """checkpoint_every saves phase-start snapshots at that cadence."""
        out, _ = run_into(tmp_path, "a", checkpoint_every=1)
        names = {p.name for p in (out / "checkpoints").iterdir()}
        assert "phase_0000.manifest" in names
        assert "phase_0001.manifest" in names

    def test_no_periodic_checkpoints_when_disabled(self, tmp_path):
        """With checkpoint_every 0 and no dump, only the final snapshot exists."""
        out, _ = run_into(tmp_path, "a")
        assert not (out / "checkpoints").exists()

    def test_abort_writes_checkpoint(self, tmp_path):
        """A failure mid-run leaves an abort checkpoint before propagating."""

        class Exploding(Trainer):
            def _collect_phase(self, phase_index):
                if phase_index == 1:
                    raise RuntimeError("injected failure")
                return super()._collect_phase(phase_index)

        cfg = small_config()
        trainer = Exploding(*build(cfg), out_dir=tmp_path / "a")
        with pytest.raises(RuntimeError, match="injected failure"):
            trainer.run()
        assert (tmp_path / "a" / "checkpoint_abort.manifest").is_file()


class TestGammaZeroEquivalence:
    def test_semi_p_equals_semi_pa_with_zero_gamma(self, tmp_path):
        """Zeroing the action-incongruity weight reproduces the perceptual-only run."""
        out_p, _ = run_into(tmp_path, "p", reward="semi-p", seed=9)
        out_pa, _ = run_into(tmp_path, "pa", reward="semi-pa", seed=9, gamma_weight=0.0)
        rec_p = read_jsonl(out_p / "metrics.jsonl")
        rec_pa = read_jsonl(out_pa / "metrics.jsonl")
        for a, b in zip(rec_p, rec_pa):
            assert a["reward_mean"] == b["reward_mean"]
            assert a["episode_return_mean"] == b["episode_return_mean"]
            assert a["interaction_rate"] == b["interaction_rate"]
            assert a["policy_loss"] == b["policy_loss"]
        assert rec_pa[-1]["r_a_mean"] > 0.0
        assert rec_p[-1]["r_a_mean"] == 0.0


class TestRaTimestep:
    def test_current_variant_changes_the_reward(self, tmp_path):
        """Scoring the pre-step observation is a different (supported) rule."""
        out_next, _ = run_into(tmp_path, "n", reward="semi-pa", seed=4)
        out_cur, _ = run_into(tmp_path, "c", reward="semi-pa", seed=4,
                              ra_timestep="current")
        rec_next = read_jsonl(out_next / "metrics.jsonl")
        rec_cur = read_jsonl(out_cur / "metrics.jsonl")
        assert rec_next[0]["r_a_mean"] != rec_cur[0]["r_a_mean"]


class TestBaselinePresets:
    @pytest.mark.parametrize("preset", ["curiosity", "disagreement", "rnd"])
    def test_baseline_runs_complete(self, tmp_path, preset):
        """Each baseline preset trains end to end and logs its reward channel."""
        out, _ = run_into(tmp_path, preset, reward=preset)
        records = read_jsonl(out / "metrics.jsonl")
        assert records[-1][f"r_{preset}_mean"] > 0.0
        assert "align_loss" not in records[0]

    def test_combined_preset_logs_both_channels(self, tmp_path):
        """A baseline+incongruity preset scores both reward families."""
        out, _ = run_into(tmp_path, "c", reward="disagreement+semi-pa")
        records = read_jsonl(out / "metrics.jsonl")
        assert records[-1]["r_disagreement_mean"] > 0.0
        assert records[-1]["r_p_mean"] > 0.0
        assert "align_loss" in records[0]
