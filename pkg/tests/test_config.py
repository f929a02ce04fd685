"""Tests for reward presets, config parsing, precedence, and the canonical echo."""

import pytest

from semi.config import (
    REWARD_PRESETS,
    RunConfig,
    build,
    describe,
    make_config,
    parse_config_text,
)


class TestRewardPresets:
    def test_all_ten_presets_exist(self):
        """The preset table covers every supported reward combination."""
        expected = {
            "semi-p", "semi-pa", "curiosity", "disagreement", "rnd", "random",
            "extrinsic", "extrinsic+semi-pa", "curiosity+semi-pa", "disagreement+semi-pa",
        }
        assert set(REWARD_PRESETS) == expected

    def test_semi_pa_components(self):
        """The combined preset activates both incongruity channels."""
        assert REWARD_PRESETS["semi-pa"] == ("semi_p", "semi_a")

    def test_random_preset_uses_random_policy(self):
        """The random control trains nothing: extrinsic channel, uniform actions."""
        train, spec, _, _ = build(make_config(overrides={"reward": "random"}))
        assert spec.components == ("extrinsic",)
        assert train.random_policy

    def test_combined_presets_stack_components(self):
        """Baseline+incongruity presets carry all named components."""
        cfg = make_config(overrides={"reward": "curiosity+semi-pa"})
        _, spec, _, _ = build(cfg)
        assert set(spec.components) == {"curiosity", "semi_p", "semi_a"}

    def test_unknown_preset_rejected(self):
        """An unrecognized preset name raises and lists the options."""
        with pytest.raises(ValueError, match="semi-pa"):
            RunConfig(reward="semi-qa")


class TestParseConfigText:
    def test_basic_assignments(self):
        """Lines of key = value become a string mapping."""
        parsed = parse_config_text("seed = 4\nenv = sparsegoal\n")
        assert parsed == {"seed": "4", "env": "sparsegoal"}

    def test_comments_and_blanks_ignored(self):
        """Comment lines, inline comments, and blank lines do not parse."""
        text = "# header\n\nseed = 4  # trailing note\n"
        assert parse_config_text(text) == {"seed": "4"}

    def test_dotted_sections(self):
        """Module hyperparameters use dotted keys in the same flat file."""
        parsed = parse_config_text("ppo.lr = 0.001\nalign.temperature = 0.2\n")
        assert parsed == {"ppo.lr": "0.001", "align.temperature": "0.2"}

    def test_malformed_line_reports_line_number(self):
        """A non-assignment line raises with its line number."""
        with pytest.raises(ValueError, match="line 2"):
            parse_config_text("seed = 1\nnot an assignment\n")

    def test_later_assignment_wins(self):
        """Re-assigning a key keeps the last value."""
        assert parse_config_text("seed = 1\nseed = 2\n") == {"seed": "2"}


class TestMakeConfig:
    def test_defaults(self):
        """With no sources the config carries the documented defaults."""
        cfg = make_config()
        assert cfg.env == "blipgrid-k1"
        assert cfg.reward == "semi-pa"
        assert cfg.steps == 200_000
        assert cfg.ppo.steps_per_phase == 2048
        assert cfg.align.temperature == 0.1

    def test_file_overrides_defaults(self):
        """File values replace defaults."""
        cfg = make_config(file_text="seed = 7\nppo.lr = 0.001\n")
        assert cfg.seed == 7
        assert cfg.ppo.lr == 0.001

    def test_cli_overrides_file(self):
        """Override values beat file values which beat defaults."""
        cfg = make_config(file_text="seed = 7\nenv = sparsegoal\n",
                          overrides={"seed": "9"})
        assert cfg.seed == 9
        assert cfg.env == "sparsegoal"

    def test_unknown_key_named_in_error(self):
        """A typo'd key is rejected by name instead of silently ignored."""
        with pytest.raises(ValueError, match="ppo.lrr"):
            make_config(overrides={"ppo.lrr": "0.001"})

    def test_unknown_file_key_named_in_error(self):
        """Unknown keys in files are rejected the same way."""
        with pytest.raises(ValueError, match="sede"):
            make_config(file_text="sede = 3\n")

    def test_bool_coercion(self):
        """Booleans accept true/false spellings and reject the rest."""
        assert make_config(overrides={"dump_trajectories": "true"}).dump_trajectories
        assert not make_config(overrides={"dump_trajectories": "false"}).dump_trajectories
        with pytest.raises(ValueError, match="dump_trajectories"):
            make_config(overrides={"dump_trajectories": "maybe"})

    def test_tuple_coercion(self):
        """Comma-separated integers populate tuple-typed fields."""
        cfg = make_config(overrides={"align.encoder_hidden": "32,16"})
        assert cfg.align.encoder_hidden == (32, 16)

    def test_optional_string(self):
        """The output path accepts none as an explicit null."""
        assert make_config(overrides={"out": "none"}).out is None
        assert make_config(overrides={"out": "/tmp/x"}).out == "/tmp/x"

    def test_typed_overrides_pass_through(self):
        """Non-string override values are used directly."""
        cfg = make_config(overrides={"seed": 5, "ppo.lr": 0.002})
        assert cfg.seed == 5
        assert cfg.ppo.lr == 0.002

    def test_invalid_value_propagates_field_validation(self):
        """Values that fail dataclass validation raise config errors."""
        with pytest.raises(ValueError):
            make_config(overrides={"ppo.steps_per_phase": "100", "ppo.num_envs": "8"})


class TestDescribe:
    def test_round_trip(self):
        """Parsing the canonical echo reproduces the config exactly."""
        cfg = make_config(overrides={
            "seed": "3", "env": "sparsegoal", "reward": "extrinsic+semi-pa",
            "gamma_weight": "0.5", "ppo.lr": "0.001", "align.encoder_hidden": "32,16",
            "out": "/tmp/somewhere",
        })
        assert make_config(file_text=describe(cfg)) == cfg

    def test_echo_contains_every_key(self):
        """The echo lists run-level, ppo, and align settings."""
        text = describe(make_config())
        for key in ("env = ", "reward = ", "ppo.lr = ", "align.temperature = "):
            assert key in text

    def test_default_round_trip(self):
        """The all-defaults config also survives the round trip."""
        cfg = make_config()
        assert make_config(file_text=describe(cfg)) == cfg


class TestBuild:
    def test_expands_into_module_configs(self):
        """Building yields the trainer, reward, policy, and alignment configs."""
        cfg = make_config(overrides={"seed": "11", "steps": "4096",
                                     "gamma_weight": "0.25", "beta_weight": "2.0"})
        train, spec, ppo, align = build(cfg)
        assert train.seed == 11
        assert train.total_steps == 4096
        assert spec.gamma_weight == 0.25
        assert spec.beta_weight == 2.0
        assert ppo is cfg.ppo
        assert align is cfg.align

    def test_run_flags_reach_trainer_config(self):
        """Dump, determinism, and replay-related knobs pass through."""
        cfg = make_config(overrides={"dump_trajectories": "true",
                                     "deterministic": "false",
                                     "ra_timestep": "current"})
        train, _, _, _ = build(cfg)
        assert train.dump_trajectories
        assert not train.deterministic
        assert train.ra_timestep == "current"
