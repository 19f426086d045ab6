"""Interleaved reconstruction / critic / adversarial training.

Each outer iteration consumes ``n_rc`` reconstruction + teacher-student
batches, then ``n_dr`` critic batches, then ``n_adr`` adversarial batches
whose target styles differ from the source styles.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch

from .checkpoint import (load_checkpoint, load_module, module_tensors, optimizer_tensors, restore_optimizer,
                         save_checkpoint)
from .config import RunConfig
from .critics import StyleCritic, TextCritic, build_critics
from .data import Batch, Corpus, batch_stream, collate, noise_sequence
from .losses import (gradient_penalty, interpolate, loss_style_polarity, loss_teach, loss_text_polarity, masked_nll,
                     pick, wgan_losses)
from .model import MSSRNet
from .nn import Adam, NumericError
from .teacher import TeacherModel

log = logging.getLogger(__name__)

PHASES = ("reconstruction", "critic", "adversarial")


@dataclass
class GainGapRecord:
    iteration: int
    critic: str
    real: float
    fake: float

    @property
    def gap(self) -> float:
        return self.real - self.fake


def gain_gap(records: List[GainGapRecord], window: int) -> Dict[str, List[dict]]:
    """Trailing-window mean and population variance of the gap, per critic."""
    if window < 1:
        raise ValueError("window must be >= 1")
    out: Dict[str, List[dict]] = {}
    for name in sorted({r.critic for r in records}):
        gaps = [r.gap for r in records if r.critic == name]
        iters = [r.iteration for r in records if r.critic == name]
        rows = []
        for i in range(len(gaps)):
            w = np.array(gaps[max(0, i - window + 1): i + 1])
            rows.append({"iteration": iters[i], "gap": gaps[i], "mean": float(w.mean()), "var": float(w.var())})
        out[name] = rows
    return out


@dataclass
class TrainResult:
    model: MSSRNet
    style_critic: StyleCritic
    text_critic: TextCritic
    counters: Dict[str, int]
    trace: List[str]
    gain_records: List[GainGapRecord]
    history: List[dict] = field(default_factory=list)
    validations: List[dict] = field(default_factory=list)
    best_iteration: Optional[int] = None


class Trainer:
    def __init__(self, cfg: RunConfig, train: Corpus, teacher: TeacherModel, valid: Optional[Corpus] = None,
                 metrics_path: Optional[Path | str] = None, checkpoint_dir: Optional[Path | str] = None,
                 record_trace: bool = True, history_every: int = 1):
        if teacher is None:
            raise ValueError("training requires a pretrained teacher")
        self.cfg = cfg.validate()
        mc = cfg.model
        if teacher.encoder.d_model != mc.d_style:
            raise ValueError(f"teacher width {teacher.encoder.d_model} must equal d_style {mc.d_style}")
        self.train = train
        self.valid = valid
        self.teacher = teacher.freeze()
        torch.manual_seed(cfg.schedule.seed)
        self.model = MSSRNet(mc)
        self.style_critic, self.text_critic = build_critics(mc, cfg.critic)
        sc = cfg.schedule
        self.theta, self.phi = self.model.stores()
        self.critic_stores = (self.style_critic.store(), self.text_critic.store())
        adam = dict(lr=sc.lr, betas=(sc.beta1, sc.beta2), eps=sc.eps)
        self.opts = {
            "transfer": Adam(self.theta, **adam),
            "style_generator": Adam(self.phi, **adam),
            "style_critic": Adam(self.critic_stores[0], **adam),
            "text_critic": Adam(self.critic_stores[1], **adam),
        }
        self.rng = np.random.default_rng(sc.seed)
        self.stream = batch_stream(train, sc.batch_size, sc.seed)
        self.by_style = [train.by_style(k) for k in range(train.num_styles)]
        self.counters = {p: 0 for p in PHASES}
        self.iteration = 0
        self.trace: List[str] = []
        self.record_trace = record_trace
        self.gain_records: List[GainGapRecord] = []
        self.history: List[dict] = []
        self.history_every = history_every
        self.validations: List[dict] = []
        self.best = (-math.inf, None, None)
        self.metrics_path = Path(metrics_path) if metrics_path else None
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        if self.checkpoint_dir:
            self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        self._fixed_batch = collate(train.sequences[: min(64, len(train))])
        self._initial_teach = None

    # -- role isolation -------------------------------------------------------
    def _generator_mode(self):
        self.theta.set_trainable(True)
        self.phi.set_trainable(True)
        for s in self.critic_stores:
            s.set_trainable(False)
        self.model.train()
        self.style_critic.eval()
        self.text_critic.eval()

    def _critic_mode(self):
        self.theta.set_trainable(False)
        self.phi.set_trainable(False)
        for s in self.critic_stores:
            s.set_trainable(True)
        self.model.eval()
        self.style_critic.train()
        self.text_critic.train()

    def _zero(self):
        for o in self.opts.values():
            o.zero_grad(set_to_none=True)

    def _check(self, losses: Dict[str, torch.Tensor]):
        for k, v in losses.items():
            if not torch.isfinite(v):
                if self.checkpoint_dir:
                    self.save(self.checkpoint_dir / f"step-{self.total_batches}.ckpt")
                raise NumericError(f"non-finite {k} loss at iteration {self.iteration}")

    @property
    def total_batches(self) -> int:
        return sum(self.counters.values())

    def _next(self, phase: str) -> Batch:
        self.counters[phase] += 1
        if self.record_trace:
            self.trace.append(phase)
        return next(self.stream)

    def _targets(self, styles: torch.Tensor) -> torch.Tensor:
        k = self.train.num_styles
        shift = torch.from_numpy(self.rng.integers(1, k, size=len(styles)))
        return (styles + shift) % k

    def _real_batch(self, styles: torch.Tensor) -> Batch:
        seqs = [self.by_style[int(s)][int(self.rng.integers(len(self.by_style[int(s)])))] for s in styles]
        return collate(seqs)

    # -- phases ---------------------------------------------------------------
    def reconstruction_step(self) -> Dict[str, float]:
        b = self._next("reconstruction")
        w = self.cfg.weights
        self._generator_mode()
        noisy = collate([noise_sequence(s, self.cfg.schedule.noise_p, self.rng) for s in b.sequences])
        losses = {}
        h, _, _ = self.model.encode(noisy.ids, b.pad_mask, b.styles)
        logits = self.model.decode_teacher_forced_logits(h, b.pad_mask, b.ids, b.pad_mask)
        targets, tgt_mask = self.model.gold_targets(b.ids, b.pad_mask)
        log_probs = torch.log_softmax(logits, -1)
        losses["cst"] = masked_nll(log_probs, targets, tgt_mask)
        style = self.model.generate_style(b.ids, b.pad_mask, b.styles)
        with torch.no_grad():
            teacher_states = self.teacher.encode(b.ids, b.pad_mask)
        losses["teach"] = loss_teach(style, teacher_states, b.pad_mask)
        losses["s_pol"] = loss_style_polarity(style, b.pad_mask, b.styles, self.teacher)
        dist = log_probs[:, :-1].exp()
        losses["t_pol"] = loss_text_polarity(dist, b.pad_mask, b.styles, self.teacher)
        total = w.cst * losses["cst"] + w.teach * losses["teach"] + w.s_pol * losses["s_pol"] \
            + w.t_pol * losses["t_pol"]
        self._check(losses)
        self._zero()
        total.backward()
        self._clip(self.theta, self.phi)
        self.opts["transfer"].step()
        self.opts["style_generator"].step()
        return {k: v.item() for k, v in losses.items()}

    def critic_step(self) -> Dict[str, float]:
        b = self._next("critic")
        w = self.cfg.weights
        self._critic_mode()
        targets = self._targets(b.styles)
        real = self._real_batch(targets)
        with torch.no_grad():
            h, fake_style, _ = self.model.encode(b.ids, b.pad_mask, targets)
            dec = self.model.decode_soft(h, b.pad_mask)
            _, fake_mask = dec.content_mask()
            fake_dist = dec.probs
            real_style = self.teacher.encode(real.ids, real.pad_mask)
        eps = torch.from_numpy(self.rng.random(len(b))).float()
        losses = {}
        # style critic
        r = pick(self.style_critic(real_style, real.pad_mask), targets)
        f = pick(self.style_critic(fake_style, b.pad_mask), targets)
        pts, pmask = interpolate(real_style, real.pad_mask, fake_style, b.pad_mask, eps)
        gp = gradient_penalty(self.style_critic, pts, pmask, targets) if w.gp else None
        losses["ws"], _ = wgan_losses(r, f, gp, w.gp)
        self.gain_records.append(GainGapRecord(self.iteration, "style", r.mean().item(), f.mean().item()))
        # text critic
        real_emb = self.text_critic.embed(real.ids)
        fake_emb = self.text_critic.embed_soft(fake_dist)
        r = pick(self.text_critic(real_emb, real.pad_mask), targets)
        f = pick(self.text_critic(fake_emb, fake_mask), targets)
        tok_real = self.text_critic.word_emb.weight[real.ids]
        tok_fake = fake_dist @ self.text_critic.word_emb.weight
        pts, pmask = interpolate(tok_real.detach(), real.pad_mask, tok_fake.detach(), fake_mask, eps)
        gp = gradient_penalty(lambda e, m: self.text_critic(self.text_critic.add_positions(e), m), pts, pmask,
                              targets) if w.gp else None
        losses["wt"], _ = wgan_losses(r, f, gp, w.gp)
        self.gain_records.append(GainGapRecord(self.iteration, "text", r.mean().item(), f.mean().item()))
        self._check(losses)
        self._zero()
        (losses["ws"] + losses["wt"]).backward()
        self._clip(*self.critic_stores)
        self.opts["style_critic"].step()
        self.opts["text_critic"].step()
        out = {k: v.item() for k, v in losses.items()}
        for rec in self.gain_records[-2:]:
            out[f"gap_{rec.critic}"] = rec.gap
            out[f"real_{rec.critic}"] = rec.real
            out[f"fake_{rec.critic}"] = rec.fake
        return out

    def adversarial_step(self) -> Dict[str, float]:
        b = self._next("adversarial")
        w = self.cfg.weights
        self._generator_mode()
        targets = self._targets(b.styles)
        h, style, _ = self.model.encode(b.ids, b.pad_mask, targets)
        dec = self.model.decode_soft(h, b.pad_mask)
        _, mask = dec.content_mask()
        losses = {}
        if w.adv:
            losses["adv_phi"] = -pick(self.style_critic(style, b.pad_mask), targets).mean()
            emb = self.text_critic.embed_soft(dec.probs)
            losses["adv_theta"] = -pick(self.text_critic(emb, mask), targets).mean()
        losses["t_pol"] = loss_text_polarity(dec.probs, mask, targets, self.teacher)
        total = w.t_pol * losses["t_pol"]
        if w.adv:
            total = total + w.adv * (losses["adv_phi"] + losses["adv_theta"])
        self._check(losses)
        self._zero()
        total.backward()
        self._clip(self.theta, self.phi)
        self.opts["transfer"].step()
        self.opts["style_generator"].step()
        return {k: v.item() for k, v in losses.items()}

    def _clip(self, *stores):
        c = self.cfg.schedule.grad_clip
        if c > 0:
            torch.nn.utils.clip_grad_norm_([p for s in stores for p in s if p.grad is not None], c)

    # -- loop -----------------------------------------------------------------
    def run_iteration(self) -> dict:
        sc = self.cfg.schedule
        self.iteration += 1
        rec: Dict[str, list] = {"reconstruction": [], "critic": [], "adversarial": []}
        for _ in range(sc.n_rc):
            rec["reconstruction"].append(self.reconstruction_step())
        for _ in range(sc.n_dr):
            rec["critic"].append(self.critic_step())
        for _ in range(sc.n_adr):
            rec["adversarial"].append(self.adversarial_step())
        summary = {"iteration": self.iteration}
        for phase, rows in rec.items():
            for k in rows[0] if rows else ():
                summary[f"{phase}/{k}"] = float(np.mean([r[k] for r in rows]))
        return summary

    def fit(self, iterations: Optional[int] = None, select_best: bool = True) -> TrainResult:
        sc = self.cfg.schedule
        target = iterations if iterations is not None else sc.iterations
        fh = open(self.metrics_path, "a", encoding="utf-8") if self.metrics_path else None
        try:
            while self.iteration < target:
                summary = self.run_iteration()
                if self.iteration % self.history_every == 0 or self.iteration == target:
                    summary["teach_fixed"] = self.fixed_batch_teach_loss()
                    self.history.append(summary)
                if fh:
                    fh.write(json.dumps(summary) + "\n")
                    fh.flush()
                if sc.validate_every and self.iteration % sc.validate_every == 0 and self.valid is not None:
                    self.validate(fh)
                if sc.checkpoint_every and self.checkpoint_dir and self.iteration % sc.checkpoint_every == 0:
                    self.save(self.checkpoint_dir / f"step-{self.iteration}.ckpt")
        finally:
            if fh:
                fh.close()
        if select_best and self.best[1] is not None:
            self.model.load_state_dict(self.best[1])
        self.model.eval()
        return TrainResult(self.model, self.style_critic, self.text_critic, dict(self.counters), self.trace,
                           self.gain_records, self.history, self.validations, self.best[2])

    @torch.no_grad()
    def fixed_batch_teach_loss(self) -> float:
        was = self.model.training
        self.model.eval()
        b = self._fixed_batch
        s = self.model.generate_style(b.ids, b.pad_mask, b.styles)
        val = float(loss_teach(s, self.teacher.encode(b.ids, b.pad_mask), b.pad_mask))
        self.model.train(was)
        return val

    def validate(self, fh=None) -> dict:
        from .evaluation import self_transfer_scores

        scores = self_transfer_scores(self.model, self.valid.sequences[:256], self.teacher)
        score = 0.5 * scores["accuracy"] + 0.5 * scores["self_bleu"] / 100.0
        row = {"iteration": self.iteration, "validation": score, **scores}
        self.validations.append(row)
        if score > self.best[0]:
            self.best = (score, {k: v.clone() for k, v in self.model.state_dict().items()}, self.iteration)
        if fh:
            fh.write(json.dumps(row) + "\n")
        log.info("validation at %d: %s", self.iteration, row)
        return row

    # -- checkpointing --------------------------------------------------------
    def save(self, path: Path | str) -> None:
        tensors = {}
        tensors.update(module_tensors(self.model, lambda n: "style_generator" if n.startswith("style_generator.")
                                      else "transfer", "model."))
        tensors.update(module_tensors(self.style_critic, lambda n: "style_critic", "style_critic."))
        tensors.update(module_tensors(self.text_critic, lambda n: "text_critic", "text_critic."))
        steps = {}
        for name, opt in self.opts.items():
            t, s = optimizer_tensors(opt, f"opt.{name}.")
            tensors.update(t)
            steps[name] = s
        buf = io.BytesIO()
        torch.save(torch.get_rng_state(), buf)
        header = {
            "config": self.cfg.to_dict(),
            "seed": self.cfg.schedule.seed,
            "iteration": self.iteration,
            "counters": self.counters,
            "optimizer_steps": steps,
            "numpy_rng": self.rng.bit_generator.state,
            "torch_rng": base64.b64encode(buf.getvalue()).decode("ascii"),
            "gain_records": [asdict(r) for r in self.gain_records],
            "best_iteration": self.best[2],
        }
        if self.train.vocab is not None:
            header["vocab"] = self.train.vocab.to_list()
        save_checkpoint(path, tensors, header)

    def restore(self, path: Path | str) -> None:
        header, tensors = load_checkpoint(path)
        load_module(self.model, tensors, "model.")
        load_module(self.style_critic, tensors, "style_critic.")
        load_module(self.text_critic, tensors, "text_critic.")
        for name, opt in self.opts.items():
            restore_optimizer(opt, tensors, header["optimizer_steps"][name], f"opt.{name}.")
        self.iteration = header["iteration"]
        self.counters = dict(header["counters"])
        self.rng.bit_generator.state = header["numpy_rng"]
        torch.set_rng_state(torch.load(io.BytesIO(base64.b64decode(header["torch_rng"]))))
        self.gain_records = [GainGapRecord(**r) for r in header["gain_records"]]
        self.stream = batch_stream(self.train, self.cfg.schedule.batch_size, self.cfg.schedule.seed)
        for _ in range(self.total_batches):
            next(self.stream)


def run_training(corpus: Corpus, teacher: TeacherModel, cfg: RunConfig, valid: Optional[Corpus] = None,
                 **kw) -> TrainResult:
    iterations = kw.pop("iterations", None)
    select_best = kw.pop("select_best", True)
    return Trainer(cfg, corpus, teacher, valid, **kw).fit(iterations, select_best)
