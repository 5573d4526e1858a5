import json

import numpy as np
import pytest

from app.errors import CheckpointIntegrityError, CheckpointVersionError
from app.utils.checkpoint import checkpoint_roundtrip, dumps_checkpoint, loads_checkpoint, read_checkpoint, write_checkpoint


@pytest.fixture
def params():
    rng = np.random.default_rng(0)
    return {
        "encoder.gnn0.W_0": rng.normal(size=(4, 6)),
        "actor.log_std": np.array([[np.log(0.5), -1e-300, 5e-324]]),
        "critic.dense1.b": np.array([[np.pi]]),
    }


def test_round_trip_is_bitwise(params, tmp_path):
    restored = checkpoint_roundtrip(params, tmp_path / "model.json", meta={"seed": 3})
    assert set(restored) == set(params)
    for name, value in params.items():
        assert restored[name].shape == value.shape
        assert restored[name].tobytes() == value.tobytes()


def test_meta_round_trip(params, tmp_path):
    path = write_checkpoint(tmp_path / "nested" / "model.json", params, meta={"algorithm": "hgrl", "seed": 2})
    _, meta = read_checkpoint(path)
    assert meta == {"algorithm": "hgrl", "seed": 2}


def test_document_is_canonical(params):
    assert dumps_checkpoint(params, {"b": 1, "a": 2}) == dumps_checkpoint(dict(reversed(params.items())),
                                                                       {"a": 2, "b": 1})


def test_corrupted_value_fails_integrity(params):
    document = json.loads(dumps_checkpoint(params))
    values = document["params"]["critic.dense1.b"]["values"]
    values[0] = (float.fromhex(values[0]) + 1.0).hex()
    with pytest.raises(CheckpointIntegrityError, match="checksum"):
        loads_checkpoint(json.dumps(document))


def test_truncated_file_fails_integrity(params, tmp_path):
    path = tmp_path / "model.json"
    text = dumps_checkpoint(params)
    path.write_text(text[: len(text) // 2], encoding="ascii")
    with pytest.raises(CheckpointIntegrityError):
        read_checkpoint(path)


def test_missing_checksum(params):
    document = json.loads(dumps_checkpoint(params))
    del document["checksum"]
    with pytest.raises(CheckpointIntegrityError):
        loads_checkpoint(json.dumps(document))


def test_version_mismatch(params):
    document = json.loads(dumps_checkpoint(params))
    document["version"] = 2
    with pytest.raises(CheckpointVersionError):
        loads_checkpoint(json.dumps(document))


def test_rewrite_is_byte_identical(params, tmp_path):
    first = write_checkpoint(tmp_path / "a.json", params, meta={"config": {"train": {"seeds": [0, 1]}}})
    restored, meta = read_checkpoint(first)
    second = write_checkpoint(tmp_path / "b.json", restored, meta)
    assert first.read_bytes() == second.read_bytes()
