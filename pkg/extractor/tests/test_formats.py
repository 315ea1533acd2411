"""Writer layout checks, validated with the consumer package's reader so
the two independent implementations pin the same bytes."""

import hashlib
import json

import numpy as np
import pytest
from oodkit import load_head, read_dump
from oodkit.errors import FormatError

from oodx.errors import ConfigError
from oodx.oodf import write_dump, write_head, write_sidecar


@pytest.fixture()
def arrays():
    rng = np.random.default_rng(7)
    n, d, c, t = 6, 4, 3, 2
    return {
        "features": rng.standard_normal((n, d)).astype(np.float32),
        "labels": rng.integers(0, c, n),
        "logits": rng.standard_normal((n, c)).astype(np.float32),
        "dropout_prob_stacks": rng.random((n, t, c)).astype(np.float32),
        "odin_logits": rng.standard_normal((n, c)).astype(np.float32),
    }


class TestDumpWriter:
    def test_full_round_trip(self, tmp_path, arrays):
        path = tmp_path / "a.oodf"
        write_dump(path, **arrays, meta={"k": 1})
        dump = read_dump(path)
        np.testing.assert_array_equal(dump.data.features, arrays["features"])
        np.testing.assert_array_equal(dump.data.labels, arrays["labels"])
        np.testing.assert_array_equal(dump.data.logits, arrays["logits"])
        np.testing.assert_array_equal(
            dump.aug.dropout_prob_stacks, arrays["dropout_prob_stacks"]
        )
        np.testing.assert_array_equal(dump.aug.odin_logits, arrays["odin_logits"])
        assert dump.meta == {"k": 1}

    def test_features_only(self, tmp_path, arrays):
        path = tmp_path / "b.oodf"
        write_dump(path, arrays["features"])
        dump = read_dump(path)
        assert dump.data.labels is None and dump.data.logits is None
        assert dump.aug is None

    def test_float64_input_rounds_to_f32(self, tmp_path):
        z = np.array([[1.0 + 1e-12, 2.0]])
        path = tmp_path / "c.oodf"
        write_dump(path, z)
        np.testing.assert_array_equal(
            read_dump(path).data.features, z.astype(np.float32)
        )

    @pytest.mark.parametrize(
        "bad",
        [
            {"features": np.zeros(4)},
            {"features": np.zeros((4, 2)), "labels": np.zeros(3, dtype=int)},
            {"features": np.zeros((4, 2)), "labels": -np.ones(4, dtype=int)},
            {"features": np.zeros((4, 2)), "logits": np.zeros((3, 2))},
            {
                "features": np.zeros((4, 2)),
                "logits": np.zeros((4, 2)),
                "odin_logits": np.zeros((4, 3)),
            },
            {
                "features": np.zeros((4, 2)),
                "logits": np.zeros((4, 2)),
                "dropout_prob_stacks": np.zeros((4, 2)),
            },
            {"features": np.array([[np.inf, 0.0]])},
        ],
    )
    def test_rejects_malformed_channels(self, tmp_path, bad):
        with pytest.raises(ConfigError):
            write_dump(tmp_path / "d.oodf", **bad)

    def test_reader_rejects_truncation(self, tmp_path, arrays):
        path = tmp_path / "e.oodf"
        write_dump(path, arrays["features"], logits=arrays["logits"])
        raw = path.read_bytes()
        path.write_bytes(raw[:-2])
        with pytest.raises(FormatError):
            read_dump(path)


class TestHeadWriter:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((3, 5)).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        path = tmp_path / "h.oodh"
        write_head(path, w, b)
        head = load_head(path)
        np.testing.assert_array_equal(head.weights, w)
        np.testing.assert_array_equal(head.bias, b)

    def test_bias_shape_checked(self, tmp_path):
        with pytest.raises(ConfigError):
            write_head(tmp_path / "h.oodh", np.zeros((3, 5)), np.zeros(4))


class TestSidecar:
    def test_checksums_cover_written_bytes(self, tmp_path, arrays):
        path = tmp_path / "f.oodf"
        channels = write_dump(path, **arrays)
        side = tmp_path / "f.json"
        write_sidecar(
            side,
            path,
            {k: np.asarray(v).shape for k, v in arrays.items()},
            channels,
            options={"seed": 0},
            references={"odin": np.arange(3.0)},
        )
        record = json.loads(side.read_text())
        assert record["dump"] == "f.oodf"
        for key, raw in channels.items():
            assert record["sha256"][key] == hashlib.sha256(raw).hexdigest()
        assert record["references"]["odin"] == [0.0, 1.0, 2.0]
        # every checksummed byte string really is a slice of the file
        blob = path.read_bytes()
        for raw in channels.values():
            assert raw in blob
