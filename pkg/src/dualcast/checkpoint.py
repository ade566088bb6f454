"""Checkpoint directories: a JSON config snapshot plus one binary file per parameter.

Tensor file layout (all integers little-endian uint32)::

    bytes 0-3    magic b"DCT1"
    bytes 4-7    ndim
    next 4*ndim  dims, outermost first
    remainder    prod(dims) little-endian float32 values, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .config import ModelConfig
from .model import DualForecaster

MAGIC = b"DCT1"
CONFIG_NAME = "config.json"
PARAM_DIR = "params"


def encode_tensor(t: torch.Tensor) -> bytes:
    arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def decode_tensor(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise ValueError("not a tensor file (bad magic)")
    (ndim,) = struct.unpack_from("<I", blob, 4)
    dims = struct.unpack_from(f"<{ndim}I", blob, 8)
    offset = 8 + 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    if offset + 4 * count != len(blob):
        raise ValueError("tensor file length does not match its header")
    return data.reshape(dims).astype(np.float32)


def save_checkpoint(model: DualForecaster, directory: str | Path, extra: dict[str, Any] | None = None) -> Path:
    directory = Path(directory)
    (directory / PARAM_DIR).mkdir(parents=True, exist_ok=True)
    names = []
    for name, p in model.named_parameters():
        (directory / PARAM_DIR / f"{name}.bin").write_bytes(encode_tensor(p))
        names.append(name)
    snapshot = {
        "model": model.config.to_dict(),
        "ablation": str(model.ablation),
        "parameters": names,
    }
    if extra:
        snapshot["extra"] = extra
    (directory / CONFIG_NAME).write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def load_checkpoint(directory: str | Path, dtype: torch.dtype = torch.float32) -> DualForecaster:
    directory = Path(directory)
    cfg_path = directory / CONFIG_NAME
    if not cfg_path.exists():
        raise FileNotFoundError(f"checkpoint config not found: {cfg_path}")
    snapshot = json.loads(cfg_path.read_text(encoding="utf-8"))
    model = DualForecaster(ModelConfig.from_dict(snapshot["model"]), snapshot["ablation"]).to(dtype)
    params = dict(model.named_parameters())
    if sorted(params) != sorted(snapshot["parameters"]):
        raise ValueError("checkpoint parameter list does not match the model built from its config")
    with torch.no_grad():
        for name, p in params.items():
            arr = decode_tensor((directory / PARAM_DIR / f"{name}.bin").read_bytes())
            if tuple(arr.shape) != tuple(p.shape):
                raise ValueError(f"{name}: stored shape {arr.shape} != model shape {tuple(p.shape)}")
            p.copy_(torch.from_numpy(arr))
    return model


def read_checkpoint_config(directory: str | Path) -> dict[str, Any]:
    return json.loads((Path(directory) / CONFIG_NAME).read_text(encoding="utf-8"))
