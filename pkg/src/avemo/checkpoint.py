"""Checkpoint container: a zip archive mapping ``params/<group>/<param-name>.npy``
to float32 payloads, plus the model config and a small metadata record.

Archives are written with fixed timestamps and no compression so identical model
states produce byte-identical files; save -> load round-trips exactly.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .model import AVEmotionModel, ModelConfig

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(Exception):
    pass


def _write_entry(archive: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    archive.writestr(info, payload)


def save_checkpoint(path: str | Path, model: AVEmotionModel, meta: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta_doc = {"format_version": FORMAT_VERSION}
    if meta:
        meta_doc.update(meta)
    with zipfile.ZipFile(path, "w") as archive:
        _write_entry(archive, "config.json", json.dumps(model.config.to_dict(), sort_keys=True).encode())
        _write_entry(archive, "meta.json", json.dumps(meta_doc, sort_keys=True).encode())
        for group_name, group in sorted(model.parameter_groups().items()):
            for param_name in sorted(group.params):
                buf = io.BytesIO()
                np.save(buf, group.params[param_name].detach().cpu().numpy().astype(np.float32, copy=False))
                _write_entry(archive, f"params/{group_name}/{param_name}.npy", buf.getvalue())
    return path


def load_checkpoint(path: str | Path) -> tuple[AVEmotionModel, dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as archive:
        names = set(archive.namelist())
        if "config.json" not in names:
            raise CheckpointError(f"{path}: missing config.json")
        config = ModelConfig.from_dict(json.loads(archive.read("config.json")))
        meta = json.loads(archive.read("meta.json")) if "meta.json" in names else {}

        # Fork the RNG so rebuilding the module skeleton does not disturb callers.
        with torch.random.fork_rng():
            model = AVEmotionModel(config)

        expected = {
            f"params/{g}/{n}.npy": (g, n)
            for g, group in model.parameter_groups().items()
            for n in group.params
        }
        stored = {n for n in names if n.startswith("params/")}
        if stored != set(expected):
            raise CheckpointError(
                f"{path}: parameter entries do not match the config "
                f"(missing={sorted(set(expected) - stored)}, extra={sorted(stored - set(expected))})"
            )
        with torch.no_grad():
            for entry, (group_name, param_name) in expected.items():
                arr = np.load(io.BytesIO(archive.read(entry)))
                param = model.parameter_groups()[group_name].params[param_name]
                if tuple(arr.shape) != tuple(param.shape):
                    raise CheckpointError(f"{path}: shape mismatch for {param_name}")
                param.copy_(torch.from_numpy(arr))
    return model, meta
