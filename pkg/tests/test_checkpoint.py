import json
import struct

import pytest
import torch

from conftest import tiny_model_config, tiny_run_config
from mssrnet.checkpoint import (MAGIC, CheckpointError, load_checkpoint, load_model, load_teacher, save_checkpoint,
                                save_model, save_teacher)
from mssrnet.model import MSSRNet


def test_roundtrip_layout(tmp_path):
    tensors = {"a": (torch.arange(6.0).reshape(2, 3), "transfer"), "b": (torch.tensor([1.5]), "teacher")}
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, tensors, {"seed": 4})
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    version, size = struct.unpack_from("<IQ", raw, 8)
    header = json.loads(raw[20:20 + size])
    assert version == 1 and header["seed"] == 4
    assert header["manifest"] == [{"name": "a", "role": "transfer", "shape": [2, 3]},
                                  {"name": "b", "role": "teacher", "shape": [1]}]
    assert len(raw) == 20 + size + 4 * 7
    h, t = load_checkpoint(path)
    assert torch.equal(t["a"][0], tensors["a"][0]) and t["b"][1] == "teacher"


def test_corrupt_files_rejected(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\0" * 20)
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    save_checkpoint(p, {"a": (torch.zeros(2), "transfer")})
    p.write_bytes(p.read_bytes() + b"\0\0\0\0")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_teacher_and_model_roundtrip(tmp_path, small_corpus, tiny_teacher):
    cfg = tiny_run_config(len(small_corpus.vocab))
    from dataclasses import asdict

    save_teacher(tmp_path / "t.ckpt", tiny_teacher, asdict(cfg.teacher), small_corpus.vocab.to_list())
    teacher, vocab, _ = load_teacher(tmp_path / "t.ckpt")
    ids = torch.tensor([[4, 5, 6]])
    assert torch.equal(teacher(ids), tiny_teacher(ids))
    assert vocab.to_list() == small_corpus.vocab.to_list()

    torch.manual_seed(0)
    model = MSSRNet(cfg.model).eval()
    save_model(tmp_path / "m.ckpt", model, cfg.to_dict(), vocab.to_list())
    loaded, _, loaded_cfg = load_model(tmp_path / "m.ckpt")
    assert loaded_cfg == cfg
    assert all(torch.equal(a, b) for a, b in zip(model.state_dict().values(), loaded.state_dict().values()))
    with pytest.raises(CheckpointError):
        load_teacher(tmp_path / "m.ckpt")
