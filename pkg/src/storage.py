# GraphicalMTPOptimizer/src/storage.py
"""
Output directory, artifact manifest and (de)serialization helpers.

Every artifact a pipeline stage writes is recorded in ``<out>/manifest.json``
together with the digest of the configuration it was built from. A stage
whose recorded digest matches is reused instead of recomputed.
"""
import hashlib
import json
import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

from src.errors import ConfigError

MANIFEST = "manifest.json"
LOCK = ".lock"


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "to_dict"):
        return value.to_dict()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable.")


def digest(*parts: Any) -> str:
    """Content digest (16 hex characters) of the canonical JSON of ``parts``."""
    text = json.dumps(parts, sort_keys=True, default=_jsonable)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def setup_output_dir(out: Union[str, Path]) -> Path:
    """
    Creates (if needed) and locks an output directory.

    Args:
        out (str | Path): Directory for all artifacts of one run.

    Returns:
        Path: The directory.

    Raises:
        ConfigError: If another pipeline holds the lock.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"Output directory {out} is locked by another run (remove {lock} if it is stale).")
    with os.fdopen(fd, "w") as handle:
        handle.write(str(os.getpid()))
    logging.info(f"Using output directory '{out}'.")
    return out


def release_output_dir(out: Union[str, Path]) -> None:
    lock = Path(out) / LOCK
    if lock.exists():
        lock.unlink()


@contextmanager
def locked_output_dir(out: Union[str, Path]):
    path = setup_output_dir(out)
    try:
        yield path
    finally:
        release_output_dir(path)


def load_manifest(out: Union[str, Path]) -> Dict[str, Any]:
    path = Path(out) / MANIFEST
    if not path.exists():
        return {"artifacts": {}}
    return json.loads(path.read_text())


def record_artifact(
    out: Union[str, Path],
    name: str,
    path: Union[str, Path],
    artifact_digest: str,
    stage: str,
    elapsed_seconds: float,
    **extra: Any,
) -> None:
    """Adds or replaces one manifest entry (paths are stored relative to ``out``)."""
    out = Path(out)
    manifest = load_manifest(out)
    entry = {
        "path": os.path.relpath(path, out),
        "digest": artifact_digest,
        "stage": stage,
        "elapsed_seconds": elapsed_seconds,
    }
    entry.update(extra)
    manifest["artifacts"][name] = entry
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable))


def find_artifact(out: Union[str, Path], name: str, artifact_digest: str) -> Optional[Dict[str, Any]]:
    """
    Manifest entry for ``name`` if it was built from ``artifact_digest`` and its file still exists.

    A recorded entry with a different digest is stale; it is reported and ignored.
    """
    out = Path(out)
    entry = load_manifest(out)["artifacts"].get(name)
    if entry is None:
        return None
    if entry["digest"] != artifact_digest:
        logging.info(f"Artifact '{name}' is stale (digest {entry['digest']} != {artifact_digest}); rebuilding.")
        return None
    if not (out / entry["path"]).exists():
        return None
    return entry


def save_json(data: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, default=_jsonable))
    return path


def load_json(path: Union[str, Path]) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Error loading {path}: {e}")


def save_frame(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Writes a table as CSV with 17 significant digits, enough to read every float back exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def load_frame(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")
