import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, Optional, Tuple

import torch
from safetensors.torch import load_file, save_file
from safetensors import safe_open

from ..errors import CheckpointError

logger = logging.getLogger(__name__)


class Storage:
    def __init__(self):
        self.root: Optional[Path] = None

    @property
    def datasets_dir(self) -> Path:
        return self._sub("datasets")

    @property
    def checkpoints_dir(self) -> Path:
        return self._sub("checkpoints")

    @property
    def refs_dir(self) -> Path:
        return self._sub("refs")

    @property
    def reports_dir(self) -> Path:
        return self._sub("reports")

    @property
    def plans_dir(self) -> Path:
        return self._sub("plans")

    @property
    def losses_dir(self) -> Path:
        return self._sub("losses")

    def _sub(self, name: str) -> Path:
        if self.root is None:
            raise RuntimeError("Storage not connected. Call connect_to_storage() first.")
        return self.root / name


storage = Storage()


def connect_to_storage(root: Path) -> Storage:
    """Point the artifact store at `root` and create its layout"""
    storage.root = Path(root)
    for sub in ("datasets", "checkpoints", "refs", "reports", "plans", "losses"):
        (storage.root / sub).mkdir(parents=True, exist_ok=True)
    logger.info(f"Artifact store ready at {storage.root}")
    return storage


def atomic_write_bytes(path: Path, payload: bytes) -> Path:
    """Write through a temp file in the same directory and rename over the target"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def save_checkpoint(path: Path, params: torch.Tensor, metadata: Dict) -> Path:
    """
    Store a flat float64 parameter vector with its header
    Args:
        path: target .safetensors file
        params: 1-D parameter vector
        metadata: JSON-serialisable header (architecture hash, dims, engine, ...)
    Returns:
        Path written
    """
    path = Path(path)
    header = {key: json.dumps(value) for key, value in metadata.items()}
    tensors = {"params": params.detach().to(torch.float64).contiguous().clone()}
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        save_file(tensors, tmp, metadata=header)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.info(f"Saved checkpoint {path.name} ({tensors['params'].numel()} parameters)")
    return path


def load_checkpoint(path: Path) -> Tuple[torch.Tensor, Dict]:
    """Read back (flat parameters, header) written by save_checkpoint"""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"missing checkpoint {path}")
    try:
        with safe_open(str(path), framework="pt") as f:
            header = f.metadata() or {}
        params = load_file(str(path))["params"]
    except CheckpointError:
        raise
    except Exception as e:
        logger.error(f"Error reading checkpoint {path}: {e}")
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
    return params, {key: json.loads(value) for key, value in header.items()}
