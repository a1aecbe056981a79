"""File format round trips and determinism of writers."""

import numpy as np
import pytest

from facestream.fileio import (
    DataError,
    parse_manifest,
    read_checkpoint,
    read_features,
    read_motion,
    write_checkpoint,
    write_csv,
    write_features,
    write_motion,
)


class TestMotionFormat:
    def test_round_trip(self, tmp_path):
        offsets = np.random.default_rng(0).normal(size=(7, 5, 3))
        path = tmp_path / "m.sgmo"
        write_motion(path, offsets, 25.0)
        loaded, rate = read_motion(path)
        assert rate == 25.0
        np.testing.assert_allclose(loaded, offsets, atol=1e-6)  # f32 payload

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DataError):
            read_motion(path)

    def test_bad_shape_rejected(self, tmp_path):
        with pytest.raises(DataError):
            write_motion(tmp_path / "x.sgmo", np.zeros((3, 4)), 25.0)


class TestFeatureFormat:
    def test_round_trip(self, tmp_path):
        feats = np.random.default_rng(1).normal(size=(9, 4))
        path = tmp_path / "f.sgaf"
        write_features(path, feats, 25.0)
        loaded, rate = read_features(path)
        assert rate == 25.0
        np.testing.assert_allclose(loaded, feats, atol=1e-6)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "f.sgaf"
        write_features(path, np.zeros((4, 4)), 25.0)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(DataError):
            read_features(path)


class TestCheckpointFormat:
    def test_bit_exact_round_trip(self, tmp_path):
        r = np.random.default_rng(2)
        tensors = {
            "b.weights": r.normal(size=(3, 4)),
            "a.bias": r.normal(size=5),
            "idx": np.arange(6, dtype=np.int64),
            "scalar0": r.normal(size=()),
        }
        manifest = {"width": 64, "profile": "synthetic-small"}
        path = tmp_path / "ck.sgck"
        write_checkpoint(path, tensors, manifest)
        loaded, mf = read_checkpoint(path)
        assert mf == {"width": "64", "profile": "synthetic-small"}
        assert set(loaded) == set(tensors)
        for name, arr in tensors.items():
            assert loaded[name].dtype == arr.dtype
            np.testing.assert_array_equal(loaded[name], arr)

    def test_identical_state_identical_bytes(self, tmp_path):
        tensors = {"w": np.ones((2, 2)), "v": np.zeros(3)}
        a, b = tmp_path / "a", tmp_path / "b"
        write_checkpoint(a, tensors, {"k": 1})
        write_checkpoint(b, {k: v.copy() for k, v in tensors.items()}, {"k": 1})
        assert a.read_bytes() == b.read_bytes()

    def test_float32_payload(self, tmp_path):
        tensors = {"w": np.ones((2, 2), dtype=np.float32)}
        path = tmp_path / "c"
        write_checkpoint(path, tensors, {})
        loaded, _ = read_checkpoint(path)
        assert loaded["w"].dtype == np.float32


class TestManifestAndCSV:
    def test_manifest_parse(self):
        parsed = parse_manifest("a = 1\n# note\nb = two words\n")
        assert parsed == {"a": "1", "b": "two words"}

    def test_bad_manifest_line(self):
        with pytest.raises(DataError):
            parse_manifest("not a pair\n")

    def test_csv_deterministic_full_precision(self, tmp_path):
        rows = [[1, 0.1 + 0.2, "x"], [2, 1e-17, "y"]]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(a, ["i", "v", "s"], rows)
        write_csv(b, ["i", "v", "s"], [list(r) for r in rows])
        assert a.read_bytes() == b.read_bytes()
        text = a.read_text()
        assert text.splitlines()[0] == "i,v,s"
        assert repr(0.1 + 0.2) in text  # round-trippable float formatting
