"""Adam training with linear warmup, per-epoch JSONL logging, and greedy
evaluation against the paragraph metrics.

Videos are the batch unit so events inside each video stay sequential
(the decoder memory depends on it). The contrastive term is computed once
per batch over every event in the batch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import losses as L
from . import metrics as M
from . import tensor as T
from .data import tokenize
from .errors import NumericalError, ValidationError


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    warmup_epochs: int = 5
    epochs: int = 20
    batch_size: int = 4
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValidationError(f"warmup_epochs={self.warmup_epochs} outside "
                                  f"[0, epochs={self.epochs}]")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.grad_clip <= 0.0:
            raise ValidationError(f"grad_clip must be > 0, got {self.grad_clip}")


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: dict):
        self.m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.step = 0


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total

EPS = 1e-8


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig,
              warmup_steps: int):
    """One optimizer step; rejects the whole step on any non-finite gradient.

    The learning rate ramps linearly from zero over ``warmup_steps``
    optimizer steps, then stays constant. Weight decay is decoupled from
    the moment estimates.
    """
    for name in params:
        if not np.isfinite(grads[name]).all():
            raise NumericalError(f"non-finite gradient in {name}; step rejected")
    state.step += 1
    t = state.step
    lr = cfg.lr * min(1.0, t / warmup_steps) if warmup_steps > 0 else cfg.lr
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + EPS)
        p.values = p.values - lr * (update + cfg.weight_decay * p.values)


@dataclass
class EpochStats:
    epoch: int
    l_cap: float
    l_con: float
    tau: float
    acc: float

    def log_line(self) -> str:
        return json.dumps({"epoch": self.epoch, "L_cap": self.l_cap,
                           "L_con": self.l_con, "tau": self.tau, "acc": self.acc})


def _batches(n: int, size: int, order) -> list:
    return [order[i:i + size] for i in range(0, n, size)]


def train(model, records, table, vocab, cfg: TrainConfig, loss_cfg: L.LossConfig,
          log_path: str = None, callback=None) -> list:
    """Optimize the model in place; returns per-epoch stats.

    ``callback(stats)`` runs after each epoch and may return True to stop
    early. On a non-finite loss the parameters are rolled back to the end
    of the last finished epoch before the error propagates, so the caller
    can still checkpoint a usable model.
    """
    if not records:
        raise ValidationError("cannot train on an empty dataset")
    params = model.named_params()
    state = AdamState(params)
    rng = np.random.default_rng(cfg.seed)
    n_batches = math.ceil(len(records) / cfg.batch_size)
    warmup_steps = cfg.warmup_epochs * n_batches
    last_good = {k: p.values.copy() for k, p in params.items()}
    history = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(records))
            cap_sum = con_sum = tau_sum = 0.0
            n_events = n_con = 0
            correct = total = 0
            for batch_ids in _batches(len(records), cfg.batch_size, order):
                T.zero_grads(params.values())
                cap_terms, tau_terms = [], []
                event_vecs, caption_vecs = [], []
                for vi in batch_ids:
                    fwd = model.forward_video(records[vi], table, vocab)
                    for logits, targets in zip(fwd.logits, fwd.targets):
                        total_ev, _, tau_ev = L.captioning_loss(
                            logits, targets, loss_cfg)
                        cap_terms.append(total_ev)
                        tau_terms.append(float(tau_ev.values))
                        pred = logits.values.argmax(axis=1)
                        correct += int((pred == targets).sum())
                        total += targets.size
                    event_vecs.append(fwd.event_embeddings)
                    if loss_cfg.use_contrastive:
                        caption_vecs.append(model.caption_embeddings(records[vi], vocab))
                loss = T.tmean(T.stack(cap_terms)) if len(cap_terms) > 1 else cap_terms[0]
                cap_sum += float(loss.values) * len(cap_terms)
                tau_sum += sum(tau_terms)
                n_events += len(cap_terms)
                if loss_cfg.use_contrastive:
                    con = L.contrastive_loss(T.concat(event_vecs, axis=0),
                                             T.concat(caption_vecs, axis=0),
                                             model.rho)
                    con_sum += float(con.values)
                    n_con += 1
                    loss = loss + con
                if not np.isfinite(loss.values):
                    for k, p in params.items():
                        p.values = last_good[k].copy()
                    raise NumericalError(
                        f"loss diverged at epoch {epoch}; parameters rolled back")
                T.backward(loss)
                grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.values))
                         for k, p in params.items()}
                clip_gradients(grads, cfg.grad_clip)
                adam_step(params, grads, state, cfg, warmup_steps)
            stats = EpochStats(
                epoch=epoch,
                l_cap=cap_sum / max(n_events, 1),
                l_con=con_sum / max(n_con, 1),
                tau=tau_sum / max(n_events, 1),
                acc=correct / max(total, 1),
            )
            history.append(stats)
            last_good = {k: p.values.copy() for k, p in params.items()}
            if log_fh:
                log_fh.write(stats.log_line() + "\n")
                log_fh.flush()
            if callback is not None and callback(stats):
                break
    finally:
        if log_fh:
            log_fh.close()
    return history


def teacher_forced_accuracy(model, records, table, vocab) -> float:
    """Fraction of target positions whose argmax logit is the target token."""
    if not records:
        raise ValidationError("cannot score an empty dataset")
    correct = total = 0
    with T.no_grad():
        for rec in records:
            fwd = model.forward_video(rec, table, vocab)
            for logits, targets in zip(fwd.logits, fwd.targets):
                correct += int((logits.values.argmax(axis=1) == targets).sum())
                total += targets.size
    return correct / total


def decode_pairs(model, records, table, vocab, max_len: int = None) -> list:
    """Greedy-decode every video into metric-ready paragraph pairs."""
    if not records:
        raise ValidationError("cannot decode an empty dataset")
    pairs = []
    for rec in records:
        hyp_ids = model.decode_video(rec, table, max_len)
        hyps = [vocab.decode(ids) for ids in hyp_ids]
        refs = [tokenize(ev.caption) for ev in rec.events]
        pairs.append(M.ParagraphPair(hyps=hyps, refs=refs))
    return pairs


def evaluate(model, records, table, vocab, max_len: int = None) -> dict:
    """Greedy decoding plus the metric report, deterministic end to end."""
    model.check_table(table, vocab)
    return M.report(decode_pairs(model, records, table, vocab, max_len))
