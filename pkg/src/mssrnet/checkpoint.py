"""Checkpoint container.

Layout: ``MSSRCKPT`` magic, u32 format version, u64 header length, a UTF-8
JSON header (config, seed, extras, and a manifest of ``name/shape/role``
entries), then every manifest tensor as row-major little-endian float32 in
manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import numpy as np
import torch

MAGIC = b"MSSRCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: Path | str, tensors: Mapping[str, Tuple[torch.Tensor, str]],
                    header: Dict[str, Any] | None = None) -> None:
    manifest = []
    blobs = []
    for name, (t, role) in tensors.items():
        arr = t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
        manifest.append({"name": name, "shape": list(arr.shape), "role": role})
        blobs.append(arr.tobytes(order="C"))
    meta = dict(header or {})
    meta["manifest"] = manifest
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def load_checkpoint(path: Path | str) -> Tuple[Dict[str, Any], Dict[str, Tuple[torch.Tensor, str]]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, size = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = 8 + struct.calcsize("<IQ")
    header = json.loads(data[offset:offset + size].decode("utf-8"))
    offset += size
    tensors = {}
    for entry in header["manifest"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        offset += 4 * count
        tensors[entry["name"]] = (torch.from_numpy(arr.copy()), entry["role"])
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return header, tensors


def module_tensors(module: torch.nn.Module, role_of, prefix: str = "") -> Dict[str, Tuple[torch.Tensor, str]]:
    return {prefix + n: (p, role_of(n)) for n, p in module.state_dict().items()}


def load_module(module: torch.nn.Module, tensors: Mapping[str, Tuple[torch.Tensor, str]], prefix: str = "") -> None:
    state = {n[len(prefix):]: t for n, (t, _) in tensors.items() if n.startswith(prefix)}
    module.load_state_dict(state)


def optimizer_tensors(opt, prefix: str) -> Tuple[Dict[str, Tuple[torch.Tensor, str]], Dict[str, int]]:
    """Adam moments as tensors plus per-parameter step counts."""
    tensors, steps = {}, {}
    role = "optimizer:" + opt.store.role
    for name, p in opt.store.items():
        st = opt.state.get(p)
        if not st:
            continue
        tensors[f"{prefix}{name}/exp_avg"] = (st["exp_avg"], role)
        tensors[f"{prefix}{name}/exp_avg_sq"] = (st["exp_avg_sq"], role)
        steps[name] = int(st["step"])
    return tensors, steps


def restore_optimizer(opt, tensors: Mapping[str, Tuple[torch.Tensor, str]], steps: Mapping[str, int],
                      prefix: str) -> None:
    for name, p in opt.store.items():
        if name not in steps:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(steps[name])),
            "exp_avg": tensors[f"{prefix}{name}/exp_avg"][0].clone(),
            "exp_avg_sq": tensors[f"{prefix}{name}/exp_avg_sq"][0].clone(),
        }


def save_teacher(path: Path | str, teacher, config: Dict[str, Any], vocab_tokens, extra: Dict[str, Any] | None = None
                 ) -> None:
    header = {"kind": "teacher", "config": config, "vocab": list(vocab_tokens),
              "num_styles": teacher.num_styles, "d_model": teacher.encoder.d_model, **(extra or {})}
    save_checkpoint(path, module_tensors(teacher, lambda n: "teacher"), header)


def load_teacher(path: Path | str):
    from .config import TeacherConfig
    from .data import Vocabulary
    from .teacher import build_teacher

    header, tensors = load_checkpoint(path)
    if header.get("kind") != "teacher":
        raise CheckpointError(f"{path}: not a teacher checkpoint")
    cfg = TeacherConfig(**header["config"])
    vocab = Vocabulary.from_list(header["vocab"])
    max_pos = tensors["pos_emb.weight"][0].shape[0] - 1
    teacher = build_teacher(len(vocab), header["num_styles"], header["d_model"], cfg, max_pos)
    load_module(teacher, tensors)
    return teacher.eval(), vocab, header


def save_model(path: Path | str, model, run_config: Dict[str, Any], vocab_tokens,
               extra: Dict[str, Any] | None = None) -> None:
    header = {"kind": "model", "config": run_config, "vocab": list(vocab_tokens), **(extra or {})}
    role = lambda n: "style_generator" if n.startswith("style_generator.") else "transfer"  # noqa: E731
    save_checkpoint(path, module_tensors(model, role, "model."), header)


def load_model(path: Path | str):
    """Load an MSSRNet from a final model file or a training checkpoint."""
    from .config import RunConfig
    from .data import Vocabulary
    from .model import MSSRNet

    header, tensors = load_checkpoint(path)
    if "vocab" not in header:
        raise CheckpointError(f"{path}: checkpoint carries no vocabulary")
    cfg = RunConfig.from_dict(header["config"])
    model = MSSRNet(cfg.model)
    load_module(model, tensors, "model.")
    return model.eval(), Vocabulary.from_list(header["vocab"]), cfg
