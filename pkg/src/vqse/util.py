"""Small shared helpers: config fingerprints and atomic file writes."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile

import torch


def fingerprint_dataclass(obj) -> str:
    """Stable short hash of a (possibly nested) dataclass; identifies configs
    in reports and output directories."""
    data = dataclasses.asdict(obj) if dataclasses.is_dataclass(obj) else obj
    blob = json.dumps(data, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def atomic_torch_save(obj, path):
    """Write-then-rename so readers never observe a partial checkpoint."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(obj, fh)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
