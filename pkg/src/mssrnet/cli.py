"""Command line entry point: ``mssrnet <command> ...``.

Exit codes: 0 success, 1 usage, 2 data, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .config import ConfigError, RunConfig, desk, with_overrides
from .data import (DataError, STYLE_MARKERS, TokenSequence, Vocabulary, gen_synthetic_corpus, load_corpus,
                   read_labeled, read_lines, synthetic_sentences, transfer_reference, write_lines)
from .nn import NumericError

log = logging.getLogger("mssrnet")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_sidecar(path: Path, command: str, args: argparse.Namespace, config: Optional[RunConfig] = None) -> None:
    raw = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    payload = {"command": command, "args": raw}
    if config is not None:
        payload["config"] = config.to_dict()
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def resolve_config(args, vocab_size: int = 0, num_styles: int = 2) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_json(args.config)
    elif args.preset == "desk":
        cfg = desk(vocab_size, num_styles)
    else:
        cfg = RunConfig()
    cfg.model.vocab_size = vocab_size or cfg.model.vocab_size
    cfg.model.num_styles = num_styles
    if getattr(args, "seed", None) is not None:
        cfg.seed = cfg.schedule.seed = cfg.teacher.seed = args.seed
    return cfg.validate()


# --- commands ---------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = synthetic_sentences(args.styles, args.per_style, args.seed)
    for k, sents in enumerate(rows):
        write_lines(out / f"style{k}.txt", (" ".join(t) for t, _ in sents))
        if args.references:
            target = (k + 1) % args.styles
            write_lines(out / f"style{k}.ref.txt", (" ".join(transfer_reference(t, k, target)) for t, _ in sents))
    write_sidecar(out / "gen-synthetic.config.json", "gen-synthetic", args)
    print(f"wrote {args.styles} style files with {args.per_style} lines to {out}")
    return 0


def cmd_teacher_train(args) -> int:
    from .teacher import accuracy, train_teacher

    corpus = load_corpus(args.corpus, min_freq=args.min_freq)
    if corpus.num_styles < 2:
        raise DataError("teacher training needs sentences from at least two styles")
    cfg = resolve_config(args, len(corpus.vocab), corpus.num_styles)
    train, valid = corpus.split([1 - cfg.teacher.valid_fraction, cfg.teacher.valid_fraction], seed=cfg.teacher.seed)
    res = train_teacher(train, cfg.teacher, len(corpus.vocab), cfg.model.d_style, valid=valid,
                        max_positions=cfg.model.max_positions)
    out = Path(args.out)
    report = {"valid_accuracy": res.valid_accuracy, "train_accuracy": accuracy(res.model, train),
              "best_step": res.best_step, "steps": res.steps, "initial_loss": res.initial_loss,
              "final_loss": res.final_loss}
    from dataclasses import asdict
    ckpt.save_teacher(out, res.model, asdict(cfg.teacher), corpus.vocab.to_list(), {"report": report})
    Path(str(out) + ".report.json").write_text(json.dumps(report, indent=2) + "\n")
    write_sidecar(Path(str(out) + ".config.json"), "teacher-train", args, cfg)
    print(json.dumps(report))
    return 0


def cmd_train(args) -> int:
    from .plotting import plot_gain_gap, plot_losses, write_gain_gap_csv
    from .training import Trainer, gain_gap

    teacher, vocab, _ = ckpt.load_teacher(args.teacher)
    corpus = load_corpus(args.corpus, vocab=vocab)
    cfg = resolve_config(args, len(vocab), corpus.num_styles)
    overrides = {}
    if args.max_iterations is not None:
        overrides["schedule"] = {"iterations": args.max_iterations}
    sched = overrides.setdefault("schedule", {})
    for name in ("checkpoint_every", "validate_every", "batch_size"):
        if getattr(args, name) is not None:
            sched[name] = getattr(args, name)
    if args.no_teacher_student:
        overrides["weights"] = {"teach": 0.0, "s_pol": 0.0}
    if args.fixed_style_vector:
        overrides["model"] = {"fixed_style_vector": True}
    cfg = with_overrides(cfg, **overrides)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, valid = corpus.split([0.95, 0.05], seed=cfg.seed)
    trainer = Trainer(cfg, train, teacher, valid, metrics_path=out / "metrics.jsonl", checkpoint_dir=out,
                      record_trace=False, history_every=1)
    if args.resume:
        trainer.restore(args.resume)
    write_sidecar(out / "config.json", "train", args, cfg)
    result = trainer.fit(select_best=not args.last)
    ckpt.save_model(out / "model.ckpt", result.model, cfg.to_dict(), vocab.to_list(),
                    {"counters": result.counters, "best_iteration": result.best_iteration})
    stats = gain_gap(result.gain_records, window=args.window)
    write_gain_gap_csv(out / "gain_gap.csv", stats)
    if stats:
        plot_gain_gap(stats, out / "gain_gap.png")
    plot_losses(result.history, ["reconstruction/cst", "reconstruction/teach"], out / "losses.png")
    print(json.dumps({"iterations": trainer.iteration, "counters": result.counters,
                      "best_iteration": result.best_iteration}))
    return 0


def cmd_transfer(args) -> int:
    from .evaluation import transfer_all

    model, vocab, _ = ckpt.load_model(args.model)
    if not 0 <= args.style < model.cfg.num_styles:
        raise UsageError(f"style {args.style} outside [0, {model.cfg.num_styles})")
    lines = read_lines(args.input)
    seqs, keep = [], []
    for i, line in enumerate(lines):
        ids = vocab.tokenize(line.lower())
        if 1 <= len(ids) <= model.cfg.max_positions - model.cfg.decode_margin:
            seqs.append(TokenSequence(ids, 0))
            keep.append(i)
    outs = transfer_all(model, seqs, [args.style] * len(seqs))
    result = [""] * len(lines)
    for i, o in zip(keep, outs):
        result[i] = vocab.detokenize(o)
    write_lines(args.output, result)
    write_sidecar(Path(str(args.output) + ".config.json"), "transfer", args)
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate
    from .metrics import train_ngram_lm, write_ratio_csv
    from .plotting import plot_ratio_violin

    classifier, vocab, _ = ckpt.load_teacher(args.classifier)
    sources = [s.lower() for s in read_lines(args.source)]
    outputs = [s.lower() for s in read_lines(args.output)]
    if len(sources) != len(outputs):
        raise DataError(f"{args.source} has {len(sources)} lines but {args.output} has {len(outputs)}")
    if not sources or any(not s.split() for s in sources):
        raise DataError(f"{args.source}: empty or blank source lines")
    refs = [s.lower() for s in read_lines(args.references)] if args.references else None
    lm = None
    if args.lm_corpus:
        lm = train_ngram_lm([s.lower() for _, s in read_labeled(args.lm_corpus)], order=args.lm_order)
    ratio_model = ckpt.load_teacher(args.teacher)[0] if args.teacher else None
    report, ratios = evaluate([(s, args.source_style) for s in sources], [(o, args.target_style) for o in outputs],
                              classifier, vocab, lm, refs, ratio_model)
    out = Path(args.report)
    report.to_json(out)
    if ratio_model is not None:
        write_ratio_csv(out.with_suffix(".ratios.csv"), ratios)
        plot_ratio_violin({"ours": [r for r in ratios if r is not None]}, out.with_suffix(".violin.png"))
    write_sidecar(Path(str(out) + ".config.json"), "evaluate", args)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_explain(args) -> int:
    from .teacher import SalienceConfig, select_stylistic_tokens

    teacher, vocab, _ = ckpt.load_teacher(args.teacher)
    if not 0 <= args.label < teacher.num_styles:
        raise UsageError(f"label {args.label} outside [0, {teacher.num_styles})")
    cfg = SalienceConfig(beta=args.beta, renormalize=not args.raw, relative=args.relative)
    with open(args.out, "w", encoding="utf-8") as fh:
        for line in read_lines(args.input):
            ids = vocab.tokenize(line.lower())
            if not ids:
                continue
            res = select_stylistic_tokens(ids, args.label, teacher, cfg)
            rec = {
                "sentence": line,
                "label": args.label,
                "probability": res.base_prob,
                "spans": [{"start": s.start, "length": s.length, "tokens": vocab.decode(s.tokens),
                           "drop": s.drop} for s in res.spans],
                "empty": not res.spans,
            }
            if res.warning:
                rec["warning"] = res.warning
            fh.write(json.dumps(rec) + "\n")
    write_sidecar(Path(str(args.out) + ".config.json"), "explain", args)
    return 0


def cmd_dump(args) -> int:
    from .metrics import dump_representations

    model, vocab, _ = ckpt.load_model(args.model)
    teacher, _, _ = ckpt.load_teacher(args.teacher)
    corpus = load_corpus(args.corpus, vocab=vocab)
    rows = dump_representations(model, teacher, corpus.sequences, args.out)
    write_sidecar(Path(str(args.out) + ".config.json"), "dump-representations", args)
    print(f"wrote {rows} rows to {args.out}")
    return 0


# --- parser -----------------------------------------------------------------


def _config_flags(p):
    p.add_argument("--config", type=Path, help="JSON run config; overrides --preset")
    p.add_argument("--preset", choices=("paper", "desk"), default="paper")
    p.add_argument("--seed", type=int)


def build_parser() -> Parser:
    parser = Parser(prog="mssrnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("gen-synthetic", help="write a synthetic style corpus")
    p.add_argument("--styles", type=int, default=2, choices=(2, 3, 4))
    p.add_argument("--per-style", type=int, default=2000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("--references", action="store_true", help="also write gold transfers to the next style")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("teacher-train", help="train the style classifier")
    p.add_argument("--corpus", nargs="+", required=True, help="style0.txt style1.txt ... or one labeled .tsv")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--min-freq", type=int, default=1)
    _config_flags(p)
    p.set_defaults(func=cmd_teacher_train)

    p = sub.add_parser("train", help="adversarial + teacher-student training")
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--teacher", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--validate-every", type=int)
    p.add_argument("--resume", type=Path)
    p.add_argument("--no-teacher-student", action="store_true", help="zero the teach and style-polarity losses")
    p.add_argument("--fixed-style-vector", action="store_true", help="broadcast one pooled style vector")
    p.add_argument("--last", action="store_true", help="keep the final weights instead of the best validation")
    p.add_argument("--window", type=int, default=20, help="rolling window for gain-gap statistics")
    _config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="transfer sentences to a target style")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--style", type=int, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("evaluate", help="accuracy, BLEU, r-BLEU, PPL and transfer ratios")
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--source-style", type=int, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--target-style", type=int, required=True)
    p.add_argument("--classifier", type=Path, required=True)
    p.add_argument("--references", type=Path)
    p.add_argument("--lm-corpus", nargs="+")
    p.add_argument("--lm-order", type=int, default=5)
    p.add_argument("--teacher", type=Path, help="classifier used to pick stylistic spans")
    p.add_argument("--report", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="select stylistic spans by pooling-weight ablation")
    p.add_argument("--teacher", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--beta", type=float, default=0.10)
    p.add_argument("--relative", action="store_true", help="treat beta as a relative drop")
    p.add_argument("--raw", action="store_true", help="do not renormalize surviving weights")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("dump-representations", help="write content/style vectors as TSV")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--teacher", type=Path, required=True)
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"mssrnet: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ckpt.CheckpointError, ConfigError, FileNotFoundError, UnicodeDecodeError) as e:
        print(f"mssrnet: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"mssrnet: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
