"""Checkpoint manifest/blob round-trips and validation."""

import numpy as np
import pytest

from semi.checkpoint import load_checkpoint, save_checkpoint
from semi.net import ParameterSet


class TestRoundTrip:
    """Save then load reproduces every bit."""

    def test_bit_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        sections = {
            "policy": ParameterSet({"W0": rng.normal(size=(5, 3)), "b0": rng.normal(size=3)}),
            "alignment": ParameterSet({"W0": rng.normal(size=(2, 2)) * 1e-300}),
        }
        sections["policy"]["b0"][0] = -0.0
        stem = str(tmp_path / "ck")
        save_checkpoint(stem, sections, meta={"step": "123", "seed": "7"})
        loaded, meta = load_checkpoint(stem)
        assert meta == {"step": "123", "seed": "7"}
        for sec, params in sections.items():
            for name, arr in params.items():
                got = loaded[sec][name]
                assert got.shape == arr.shape
                assert np.array_equal(
                    got.view(np.uint64), arr.astype(np.float64).view(np.uint64)
                )

    def test_scalar_parameter(self, tmp_path):
        sections = {"policy": ParameterSet({"log_std": np.array(-0.7)})}
        stem = str(tmp_path / "ck")
        save_checkpoint(stem, sections)
        loaded, _ = load_checkpoint(stem)
        assert loaded["policy"]["log_std"].shape == ()
        assert loaded["policy"]["log_std"] == -0.7

    def test_manifest_is_plain_text_key_value(self, tmp_path):
        stem = str(tmp_path / "ck")
        save_checkpoint(stem, {"s": ParameterSet({"w": np.zeros(2)})})
        lines = (tmp_path / "ck.manifest").read_text().strip().splitlines()
        assert all(": " in ln for ln in lines)
        assert any(ln.startswith("tensor.s.w.shape: ") for ln in lines)
        assert any(ln.startswith("tensor.s.w.offset: ") for ln in lines)


class TestValidation:
    """Corrupt inputs are rejected loudly."""

    def test_truncated_blob_detected(self, tmp_path):
        stem = str(tmp_path / "ck")
        save_checkpoint(stem, {"s": ParameterSet({"w": np.zeros(4)})})
        blob = (tmp_path / "ck.blob").read_bytes()
        (tmp_path / "ck.blob").write_bytes(blob[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(stem)

    def test_bad_section_name_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_checkpoint(str(tmp_path / "ck"), {"a.b": ParameterSet({"w": np.zeros(1)})})

    def test_unknown_format_rejected(self, tmp_path):
        stem = str(tmp_path / "ck")
        save_checkpoint(stem, {"s": ParameterSet({"w": np.zeros(1)})})
        text = (tmp_path / "ck.manifest").read_text().replace("-v1", "-v9")
        (tmp_path / "ck.manifest").write_text(text)
        with pytest.raises(ValueError):
            load_checkpoint(stem)
