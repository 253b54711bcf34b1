"""Checkpoint directory: one ``.npz`` of named tensors per component plus a manifest.

``manifest.json`` records the format version, each component's constructor
config and the name/shape/dtype of every tensor, and the noise schedule.
Loading refuses unknown versions and any tensor whose shape disagrees with
the manifest.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

FORMAT = "ldcodec-checkpoint"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"


class CheckpointError(ValueError):
    pass


def save_component(directory: Path, name: str, module: torch.nn.Module) -> dict:
    state = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    np.savez(directory / f"{name}.npz", **state)
    return {
        "config": module.config(),
        "tensors": {k: {"shape": list(v.shape), "dtype": str(v.dtype)} for k, v in state.items()},
    }


def load_component(directory: Path, name: str, module: torch.nn.Module, entry: dict) -> torch.nn.Module:
    path = directory / f"{name}.npz"
    if not path.exists():
        raise CheckpointError(f"missing tensor file {path}")
    with np.load(path) as data:
        state = {}
        for key, meta in entry["tensors"].items():
            if key not in data.files:
                raise CheckpointError(f"{name}: tensor {key} missing from {path.name}")
            arr = data[key]
            if list(arr.shape) != meta["shape"]:
                raise CheckpointError(f"{name}: {key} has shape {arr.shape}, manifest says {meta['shape']}")
            state[key] = torch.from_numpy(arr.copy())
    module.load_state_dict(state)
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def write_manifest(directory: Path, manifest: dict) -> None:
    manifest = {"format": FORMAT, "version": FORMAT_VERSION, **manifest}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_manifest(directory: Path) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise CheckpointError(f"no {MANIFEST} in {directory}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT or manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint {manifest.get('format')} v{manifest.get('version')}"
        )
    return manifest
