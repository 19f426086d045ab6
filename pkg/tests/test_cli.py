import json
import subprocess
import sys

import pytest

from mssrnet.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-synthetic", "--styles", "2", "--per-style", "150", "--seed", "7", "--out-dir", str(data),
                 "--references"]) == 0
    cfg = root / "cfg.json"
    from mssrnet.config import desk, with_overrides

    with_overrides(desk(0, 2), model={"d_model": 16, "d_style": 16, "d_ff": 32, "enc_layers": 1, "dec_layers": 1,
                                      "style_layers": 1},
                   teacher={"layers": 1, "d_ff": 32, "max_steps": 60, "eval_every": 30},
                   critic={"d_ff": 32}, schedule={"batch_size": 16}).to_json(cfg)
    corpus = [str(data / "style0.txt"), str(data / "style1.txt")]
    assert main(["teacher-train", "--corpus", *corpus, "--out", str(root / "teacher.ckpt"), "--config", str(cfg)]) == 0
    assert main(["train", "--corpus", *corpus, "--teacher", str(root / "teacher.ckpt"), "--out-dir",
                 str(root / "run"), "--config", str(cfg), "--max-iterations", "2", "--checkpoint-every", "1",
                 "--seed", "5"]) == 0
    (root / "in.txt").write_text("\n".join((data / "style0.txt").read_text().splitlines()[:6]) + "\n")
    return root, corpus, cfg


def test_gen_synthetic_files(tmp_path):
    assert main(["gen-synthetic", "--styles", "2", "--per-style", "2000", "--seed", "7", "--out-dir",
                 str(tmp_path / "a")]) == 0
    files = sorted(p.name for p in (tmp_path / "a").glob("style*.txt"))
    assert files == ["style0.txt", "style1.txt"]
    assert all(len((tmp_path / "a" / f).read_text().splitlines()) == 2000 for f in files)
    main(["gen-synthetic", "--styles", "2", "--per-style", "2000", "--seed", "7", "--out-dir", str(tmp_path / "b")])
    assert all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    main(["gen-synthetic", "--styles", "4", "--per-style", "10", "--out-dir", str(tmp_path / "c")])
    assert len(list((tmp_path / "c").glob("style?.txt"))) == 4
    sidecar = json.loads((tmp_path / "a" / "gen-synthetic.config.json").read_text())
    assert sidecar["args"]["per_style"] == 2000 and sidecar["args"]["seed"] == 7


def test_teacher_outputs(workspace):
    root, _, _ = workspace
    report = json.loads((root / "teacher.ckpt.report.json").read_text())
    assert 0 <= report["valid_accuracy"] <= 1
    sidecar = json.loads((root / "teacher.ckpt.config.json").read_text())
    assert sidecar["command"] == "teacher-train" and sidecar["config"]["teacher"]["max_steps"] == 60


def test_teacher_single_style_is_data_error(workspace, tmp_path):
    root, corpus, cfg = workspace
    assert main(["teacher-train", "--corpus", corpus[0], "--out", str(tmp_path / "t.ckpt"), "--config",
                 str(cfg)]) == 2


def test_train_outputs(workspace):
    root, _, _ = workspace
    run = root / "run"
    for name in ("model.ckpt", "step-1.ckpt", "step-2.ckpt", "metrics.jsonl", "gain_gap.csv", "gain_gap.png",
                 "losses.png", "config.json"):
        assert (run / name).exists(), name
    rows = [json.loads(l) for l in (run / "metrics.jsonl").read_text().splitlines()]
    assert rows[-1]["iteration"] == 2
    cfg = json.loads((run / "config.json").read_text())["config"]
    assert cfg["seed"] == 5 and cfg["schedule"]["iterations"] == 2
    gaps = (run / "gain_gap.csv").read_text().splitlines()
    assert gaps[0] == "critic,iteration,gap,rolling_mean,rolling_var" and len(gaps) == 1 + 2 * 2


def test_train_resume(workspace):
    root, corpus, cfg = workspace
    out = root / "resumed"
    assert main(["train", "--corpus", *corpus, "--teacher", str(root / "teacher.ckpt"), "--out-dir", str(out),
                 "--config", str(cfg), "--max-iterations", "2", "--checkpoint-every", "1", "--seed", "5", "--resume",
                 str(root / "run" / "step-1.ckpt")]) == 0
    a = (root / "run" / "model.ckpt").read_bytes()
    b = (out / "model.ckpt").read_bytes()
    assert a == b


def test_transfer_line_aligned_and_deterministic(workspace):
    root, _, _ = workspace
    args = ["transfer", "--model", str(root / "run" / "model.ckpt"), "--input", str(root / "in.txt"), "--style", "1"]
    assert main(args + ["--output", str(root / "o1.txt")]) == 0
    assert main(args + ["--output", str(root / "o2.txt")]) == 0
    assert len((root / "o1.txt").read_text().splitlines()) == 6
    assert (root / "o1.txt").read_bytes() == (root / "o2.txt").read_bytes()
    assert main(["transfer", "--model", str(root / "run" / "model.ckpt"), "--input", str(root / "in.txt"),
                 "--style", "7", "--output", str(root / "o3.txt")]) == 1


def test_evaluate_outputs(workspace):
    root, corpus, _ = workspace
    main(["transfer", "--model", str(root / "run" / "model.ckpt"), "--input", str(root / "in.txt"), "--style", "1",
          "--output", str(root / "out.txt")])
    base = ["evaluate", "--source", str(root / "in.txt"), "--source-style", "0", "--output", str(root / "out.txt"),
            "--target-style", "1", "--classifier", str(root / "teacher.ckpt")]
    assert main(base + ["--report", str(root / "plain.json")]) == 0
    plain = json.loads((root / "plain.json").read_text())
    assert "r_bleu" not in plain and plain["ppl"] is None
    refs = root / "refs.txt"
    refs.write_text("\n".join((root.parent / root.name / "data" / "style0.ref.txt").read_text().splitlines()[:6]))
    assert main(base + ["--references", str(refs), "--lm-corpus", corpus[1], "--teacher", str(root / "teacher.ckpt"),
                        "--report", str(root / "full.json")]) == 0
    full = json.loads((root / "full.json").read_text())
    assert "r_bleu" in full and full["ppl"] > 0 and "transfer_ratio" in full
    assert (root / "full.ratios.csv").exists() and (root / "full.violin.png").exists()


def test_explain_records(workspace):
    root, _, _ = workspace
    out = root / "ex.jsonl"
    assert main(["explain", "--teacher", str(root / "teacher.ckpt"), "--input", str(root / "in.txt"), "--label",
                 "0", "--beta", "0.05", "--out", str(out)]) == 0
    recs = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(recs) == 6
    assert all(r["empty"] == (not r["spans"]) and 0 <= r["probability"] <= 1 for r in recs)
    assert json.loads((root / "ex.jsonl.config.json").read_text())["args"]["beta"] == 0.05


def test_dump_representations_cli(workspace):
    root, corpus, _ = workspace
    out = root / "vec.tsv"
    assert main(["dump-representations", "--model", str(root / "run" / "model.ckpt"), "--teacher",
                 str(root / "teacher.ckpt"), "--corpus", str(root / "in.txt"), corpus[1], "--out", str(out)]) == 0
    assert out.read_text().startswith("id\tpos\trole\tstyle\tvector\n")


def test_exit_codes(tmp_path):
    assert main(["explain", "--teacher", str(tmp_path / "missing"), "--input", "x", "--label", "0", "--out",
                 str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit) as e:
        main(["train"])
    assert e.value.code == 1
    proc = subprocess.run([sys.executable, "-m", "mssrnet.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gen-synthetic" in proc.stdout
