"""Finite-difference verification: per-primitive checks and a whole-model
check of the combined training loss on a tiny configuration.

Random inputs are sampled away from the nonsmooth points of each
primitive (relu and clamp kinks, norm origins, selection thresholds), so
a central difference with h=1e-5 is a trustworthy reference.
"""

from __future__ import annotations

import numpy as np

from . import losses as L
from . import tensor as T
from .data import EventRecord, SnippetInput, VideoRecord, build_vocab
from .encoder import VocabEmbeddingTable
from .errors import NumericalError
from .model import CaptionModel, ModelConfig
from .tensor import Tensor

PRIMITIVE_TOL = 1e-6
END_TO_END_TOL = 1e-4


def _weights(rng, shape):
    return Tensor(rng.normal(size=shape))


def _away_from_zero(rng, shape, low=0.3, high=1.5):
    signs = rng.choice([-1.0, 1.0], size=shape)
    return signs * rng.uniform(low, high, size=shape)


def _primitive_cases():
    """(name, builder) pairs; builder(rng) -> (scalar function, variable)."""

    def case_add(rng):
        y = Tensor(rng.normal(size=(4,)))
        w = _weights(rng, (3, 4))
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return lambda x: T.tsum((x + y) * w), x

    def case_sub(rng):
        y = Tensor(rng.normal(size=(3, 4)))
        w = _weights(rng, (3, 4))
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return lambda x: T.tsum((y - x) * w), x

    def case_mul(rng):
        y = Tensor(rng.normal(size=(3, 1)))
        w = _weights(rng, (3, 4))
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return lambda x: T.tsum(x * y * w), x

    def case_div(rng):
        y = Tensor(_away_from_zero(rng, (3, 4)))
        w = _weights(rng, (3, 4))
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)

        def f(x):
            return T.tsum((x / y) * w) + T.tsum((1.0 / (x * x + 1.0)) * w)
        return f, x

    def case_neg(rng):
        w = _weights(rng, (5,))
        x = Tensor(rng.normal(size=(5,)), requires_grad=True)
        return lambda x: T.tsum(-x * w), x

    def case_matmul_left(rng):
        b = Tensor(rng.normal(size=(4, 2)))
        w = _weights(rng, (3, 2))
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return lambda x: T.tsum(T.matmul(x, b) * w), x

    def case_matmul_right(rng):
        a = Tensor(rng.normal(size=(3, 4)))
        w = _weights(rng, (3, 2))
        x = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        return lambda x: T.tsum(T.matmul(a, x) * w), x

    def case_dot(rng):
        y = Tensor(rng.normal(size=(6,)))
        x = Tensor(rng.normal(size=(6,)), requires_grad=True)
        return lambda x: T.dot(x, y) + 0.5 * T.dot(x, x), x

    def case_transpose(rng):
        w = _weights(rng, (4, 3))
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return lambda x: T.tsum(T.transpose(x) * w), x

    def case_reshape(rng):
        w = _weights(rng, (2, 6))
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return lambda x: T.tsum(T.reshape(x, (2, 6)) * w), x

    def case_concat(rng):
        y = Tensor(rng.normal(size=(2, 4)))
        w = _weights(rng, (5, 4))
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return lambda x: T.tsum(T.concat([x, y], axis=0) * w), x

    def case_stack(rng):
        y = Tensor(rng.normal(size=(4,)))
        w = _weights(rng, (3, 4))
        x = Tensor(rng.normal(size=(4,)), requires_grad=True)
        return lambda x: T.tsum(T.stack([x, y, x], axis=0) * w), x

    def case_take_rows(rng):
        w = _weights(rng, (4, 3))
        x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        return lambda x: T.tsum(T.take_rows(x, [0, 2, 0, 1]) * w), x

    def case_sum(rng):
        w = _weights(rng, (4,))
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)

        def f(x):
            return T.tsum(T.tsum(x, axis=0) * w) + T.tsum(x) * 0.25
        return f, x

    def case_mean(rng):
        w = _weights(rng, (3, 1))
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)

        def f(x):
            return T.tsum(T.tmean(x, axis=1, keepdims=True) * w) + T.tmean(x)
        return f, x

    def case_l2_norm_rows(rng):
        w = _weights(rng, (3,))
        x = Tensor(_away_from_zero(rng, (3, 4), low=0.5), requires_grad=True)
        return lambda x: T.tsum(T.l2_norm_rows(x) * w), x

    def case_exp(rng):
        w = _weights(rng, (4,))
        x = Tensor(rng.normal(size=(4,)), requires_grad=True)
        return lambda x: T.tsum(T.texp(x) * w), x

    def case_log(rng):
        w = _weights(rng, (4,))
        x = Tensor(rng.uniform(0.4, 2.0, size=(4,)), requires_grad=True)
        return lambda x: T.tsum(T.tlog(x) * w), x

    def case_sigmoid(rng):
        w = _weights(rng, (5,))
        x = Tensor(rng.normal(size=(5,)), requires_grad=True)
        return lambda x: T.tsum(T.sigmoid(x) * w), x

    def case_log_sigmoid(rng):
        w = _weights(rng, (5,))
        x = Tensor(rng.normal(size=(5,)), requires_grad=True)
        return lambda x: T.tsum(T.log_sigmoid(x) * w), x

    def case_relu(rng):
        w = _weights(rng, (3, 4))
        x = Tensor(_away_from_zero(rng, (3, 4)), requires_grad=True)
        return lambda x: T.tsum(T.relu(x) * w), x

    def case_gelu(rng):
        w = _weights(rng, (3, 4))
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return lambda x: T.tsum(T.gelu(x) * w), x

    def case_clamp_min(rng):
        w = _weights(rng, (3, 4))
        x = Tensor(_away_from_zero(rng, (3, 4)), requires_grad=True)
        return lambda x: T.tsum(T.clamp_min(x, 0.05) * w), x

    def case_softmax(rng):
        w = _weights(rng, (3, 5))
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        return lambda x: T.tsum(T.softmax(x, axis=1) * w), x

    def case_log_softmax(rng):
        w = _weights(rng, (3, 5))
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        return lambda x: T.tsum(T.log_softmax(x, axis=1) * w), x

    def case_layer_norm_x(rng):
        gain = Tensor(rng.uniform(0.5, 1.5, size=(4,)))
        bias = Tensor(rng.normal(size=(4,)))
        w = _weights(rng, (3, 4))
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return lambda x: T.tsum(T.layer_norm(x, gain, bias) * w), x

    def case_layer_norm_affine(rng):
        h = Tensor(rng.normal(size=(3, 4)))
        bias = Tensor(rng.normal(size=(4,)))
        w = _weights(rng, (3, 4))
        x = Tensor(rng.uniform(0.5, 1.5, size=(4,)), requires_grad=True)
        return lambda x: T.tsum(T.layer_norm(h, x, bias) * w), x

    return [(name[5:], fn) for name, fn in sorted(locals().items())
            if name.startswith("case_")]


def run_primitive_checks(n_seeds: int = 10, tol: float = PRIMITIVE_TOL) -> dict:
    """Check every primitive against central differences over many seeds.

    Returns {primitive: worst relative error}; raises if any exceeds
    ``tol``.
    """
    worst = {}
    for case_index, (name, builder) in enumerate(_primitive_cases()):
        errs = []
        for seed in range(n_seeds):
            rng = np.random.default_rng([case_index, seed])
            f, x = builder(rng)
            errs.append(T.finite_diff_check(f, x))
        worst[name] = max(errs)
    failures = {k: v for k, v in worst.items() if v > tol}
    if failures:
        raise NumericalError(f"primitive gradient checks above {tol}: {failures}")
    return worst


def _tiny_world(seed: int = 7):
    """One 2-event video with 2 snippets per event and 2-word captions."""
    rng = np.random.default_rng(seed)
    d_env, d_agent, d_frame = 4, 3, 5
    tokens = ["dog", "runs", "cat", "sits", "tree", "pond"]
    table = VocabEmbeddingTable(tokens=tokens,
                                text_features=rng.normal(size=(len(tokens), d_frame)),
                                w_text=rng.normal(size=(d_frame, d_frame)),
                                w_image=rng.normal(size=(d_frame, d_frame)))
    captions = ["dog runs", "cat sits"]

    def snippet():
        return SnippetInput(env=rng.normal(size=d_env),
                            agents=rng.normal(size=(2, d_agent)),
                            frame=rng.normal(size=d_frame))

    events = [EventRecord(begin=float(i * 2), end=float(i * 2 + 2), caption=cap,
                          snippets=[snippet(), snippet()])
              for i, cap in enumerate(captions)]
    record = VideoRecord(video_id="tiny", events=events)
    vocab = build_vocab(captions)
    config = ModelConfig(d_env=d_env, d_agent=d_agent, d_frame=d_frame,
                         vocab_size=len(vocab), d_emb=8, n_layers=2, n_heads=1,
                         ff_mult=1, max_pos=12, k=2, max_len=4, seed=seed)
    return record, table, vocab, config


def run_end_to_end_check(tol: float = END_TO_END_TOL, seed: int = 7) -> dict:
    """Finite-difference check of the combined loss through the whole model.

    Two events of three target tokens each, two snippets per event, width
    8, two layers, one head; the batch for the alignment term is the
    video's two events. Every parameter tensor is perturbed
    coordinate-by-coordinate. Returns {param name: max rel err}.

    Two subtleties make the naive "finite-difference the training loss"
    version wrong, and both are handled here:

    * Parameters are first jittered away from the near-zero init: freshly
      initialized stacked projections leave some embedding rows with
      norms around 1e-5, and row normalization at such a point is so
      sharply curved that a central difference with h=1e-5 is
      meaningless. The gradient code is point-independent, so the check
      runs at a generic well-conditioned point.
    * The decoder detaches its event memory on purpose, so the backward
      pass computes the partial derivative with the memory held fixed.
      Central differences on the full forward would instead see the true
      derivative, which includes the first event's influence on the
      second through memory. The check therefore freezes the memory
      contents at the evaluation point and differentiates the same
      function the backward pass does; the deliberately truncated path is
      covered by the causality tests, not this one.
    """
    record, table, vocab, config = _tiny_world(seed)
    model = CaptionModel(config)
    jitter = np.random.default_rng(seed + 1)
    for p in model.named_params().values():
        p.values = np.asarray(p.values + jitter.normal(0.0, 0.3, size=p.values.shape))
    loss_cfg = L.LossConfig()

    from .data import BOS_ID, EOS_ID
    from .decoder import EventMemory

    token_ids = [model.event_tokens(ev, vocab) for ev in record.events]

    def run_events(memories):
        logits_list, summaries = [], []
        for event, tokens, memory in zip(record.events, token_ids, memories):
            rows = model.encoder.encode_event(event.snippets, table, model.config.k)
            logits, f_event = model.decoder.forward_event(
                rows, [BOS_ID] + tokens, memory, update_memory=False)
            logits_list.append(logits)
            summaries.append(f_event)
        return logits_list, summaries

    # memory snapshot at the evaluation point: what event 2 actually reads
    snap = EventMemory(config.n_layers)
    with T.no_grad():
        rows0 = model.encoder.encode_event(record.events[0].snippets, table,
                                           model.config.k)
        model.decoder.forward_event(rows0, [BOS_ID] + token_ids[0], snap,
                                    update_memory=True)
    memories = [EventMemory(config.n_layers), snap]

    def loss_fn():
        logits_list, summaries = run_events(memories)
        cap_terms = []
        for logits, tokens in zip(logits_list, token_ids):
            targets = np.array(tokens + [EOS_ID], dtype=np.intp)
            total_ev, _, _ = L.captioning_loss(logits, targets, loss_cfg)
            cap_terms.append(total_ev)
        cap = T.tmean(T.stack(cap_terms))
        con = L.contrastive_loss(T.stack(summaries, axis=0),
                                 model.caption_embeddings(record, vocab),
                                 model.rho)
        return cap + con

    errors = {}
    for name, p in model.named_params().items():
        errors[name] = T.finite_diff_check(lambda _x: loss_fn(), p)
    failures = {k: v for k, v in errors.items() if v > tol}
    if failures:
        raise NumericalError(f"end-to-end gradient check above {tol}: {failures}")
    return errors
