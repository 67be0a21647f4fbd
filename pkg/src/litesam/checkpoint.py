"""Checkpoints: one LTSR file per parameter, a JSON manifest and the model config."""
from __future__ import annotations

import json
from pathlib import Path

from .config import ModelConfig
from .segkit.model import LiteSAM
from .tensor import ltsr

MANIFEST = "manifest.json"
CONFIG = "config.json"


def save_checkpoint(model: LiteSAM, path) -> Path:
    path = Path(path)
    (path / "tensors").mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name, p in model.named_parameters():
        rel = f"tensors/{name}.ltsr"
        ltsr.save(path / rel, p.data)
        manifest[name] = rel
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    cfg = json.dumps(model.cfg.model_dump(mode="json"), indent=2, sort_keys=True)
    (path / CONFIG).write_text(cfg + "\n")
    return path


def load_checkpoint(path) -> LiteSAM:
    path = Path(path)
    cfg = ModelConfig.model_validate(json.loads((path / CONFIG).read_text()))
    model = LiteSAM(cfg)
    manifest = json.loads((path / MANIFEST).read_text())
    model.load_state_dict({name: ltsr.load(path / rel) for name, rel in manifest.items()})
    return model
