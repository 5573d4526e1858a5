import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from app.errors import CheckpointIntegrityError, CheckpointVersionError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def _canonical(document: Dict[str, Any]) -> str:
    return json.dumps(document, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def _checksum(body: Dict[str, Any]) -> str:
    return hashlib.sha256(_canonical(body).encode("ascii")).hexdigest()


def encode_parameters(params: Dict[str, np.ndarray]) -> Dict[str, Any]:
    """
    Flat map of parameter name to shape and row-major float64 values.

    Values are stored with float.hex so they read back bit for bit.
    """
    encoded = {}
    for name, value in params.items():
        matrix = np.asarray(value, dtype=np.float64)
        encoded[name] = {
            "shape": list(matrix.shape),
            "values": [float(v).hex() for v in matrix.reshape(-1)],
        }
    return encoded


def decode_parameters(encoded: Dict[str, Any]) -> Dict[str, np.ndarray]:
    params = {}
    for name, entry in encoded.items():
        try:
            shape = tuple(int(s) for s in entry["shape"])
            values = np.array([float.fromhex(v) for v in entry["values"]], dtype=np.float64)
            params[name] = values.reshape(shape)
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointIntegrityError(f"parameter {name!r} is malformed: {e}") from e
    return params


def dumps_checkpoint(params: Dict[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> str:
    body = {
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta or {}),
        "params": encode_parameters(params),
    }
    document = dict(body, checksum=_checksum(body))
    return _canonical(document) + "\n"


def loads_checkpoint(text: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Parse a checkpoint document.

    Returns:
        Parameters and metadata

    Raises:
        CheckpointVersionError: Unsupported format version
        CheckpointIntegrityError: Unparseable document or checksum mismatch
    """
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointIntegrityError(f"checkpoint is not valid JSON: {e}") from e
    if not isinstance(document, dict) or "checksum" not in document:
        raise CheckpointIntegrityError("checkpoint has no checksum")

    version = document.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version!r} is not supported (expected {CHECKPOINT_VERSION})"
        )
    body = {k: v for k, v in document.items() if k != "checksum"}
    if _checksum(body) != document["checksum"]:
        raise CheckpointIntegrityError("checkpoint checksum does not match its contents")
    return decode_parameters(body.get("params", {})), body.get("meta", {})


def write_checkpoint(path: Union[str, Path], params: Dict[str, np.ndarray],
                     meta: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_checkpoint(params, meta), encoding="ascii")
    logger.debug("Wrote checkpoint %s (%d tensors)", path, len(params))
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except UnicodeDecodeError as e:
        raise CheckpointIntegrityError(f"checkpoint {path} contains non-ASCII bytes") from e
    return loads_checkpoint(text)


def checkpoint_roundtrip(params: Dict[str, np.ndarray], path: Union[str, Path],
                         meta: Optional[Dict[str, Any]] = None) -> Dict[str, np.ndarray]:
    """Write parameters and read them straight back."""
    write_checkpoint(path, params, meta)
    restored, _ = read_checkpoint(path)
    return restored
