"""Autoregressive caption decoder with a cross-event memory.

Each event is decoded over a joint row set [snippet vectors; token rows].
Inside an event a standard pre-norm transformer block mixes the rows under
a causality mask. Between events, every layer keeps a memory of its hidden
states from earlier events; while decoding event t, each position reads
the matching position of all stored events, hard-selects the relevant
ones, and folds the readout back into its own state. Memory entries are
detached, so gradients never cross event boundaries.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoder import select_and_fuse
from .errors import ShapeError, ValidationError
from .nn import MLP, Embedding, Linear, LayerNorm, MaskedMultiHeadAttention, SelfAttention, collect_params
from .tensor import Tensor


def causal_join_mask(n_video: int, n_text: int) -> np.ndarray:
    """Attention mask over [video rows; text rows].

    Video rows see each other but never the text; text row j sees every
    video row and text rows up to and including itself.
    """
    s = n_video + n_text
    mask = np.zeros((s, s), dtype=bool)
    mask[:n_video, :n_video] = True
    mask[n_video:, :n_video] = True
    for j in range(n_text):
        mask[n_video + j, n_video:n_video + j + 1] = True
    return mask


class EventMemory:
    """Per-layer stacks of detached hidden states from completed events."""

    def __init__(self, n_layers: int):
        if n_layers < 1:
            raise ValidationError(f"memory needs n_layers >= 1, got {n_layers}")
        self.n_layers = n_layers
        self._events = [[] for _ in range(n_layers)]

    def __len__(self) -> int:
        return len(self._events[0])

    def append(self, layer_states):
        """Store one completed event; ``layer_states`` holds one (s, d) tensor per layer."""
        if len(layer_states) != self.n_layers:
            raise ShapeError(f"expected {self.n_layers} layer states, got {len(layer_states)}")
        for layer, h in zip(self._events, layer_states):
            if h.ndim != 2:
                raise ShapeError(f"memory entries must be matrices, got shape {h.shape}")
            layer.append(np.array(h.values, copy=True))

    def rows_at(self, layer: int, position: int) -> np.ndarray:
        """Row ``position`` of every stored event at one layer, shape (n_events, d).

        Events shorter than ``position`` contribute their final row, so
        captions of different lengths still line up.
        """
        rows = [ev[min(position, ev.shape[0] - 1)] for ev in self._events[layer]]
        return np.stack(rows, axis=0)


class DecoderLayer:
    """One decoder layer: masked in-event mixing plus the cross-event readout."""

    def __init__(self, rng: np.random.Generator, d: int, n_heads: int, ff_mult: int):
        self.d = d
        self.ln1 = LayerNorm(d)
        self.attn = MaskedMultiHeadAttention(rng, d, n_heads)
        self.ln2 = LayerNorm(d)
        self.mlp = MLP(rng, d, ff_mult * d, d)
        self.mem_attn = SelfAttention(rng, d)
        self.mem_mlp = MLP(rng, d, ff_mult * d, d)

    def inner(self, h: Tensor, mask: np.ndarray) -> Tensor:
        h = self.attn(self.ln1(h), mask) + h
        return self.mlp(self.ln2(h)) + h

    def read_memory(self, h_bar: Tensor, memory: EventMemory, layer_index: int) -> Tensor:
        """Fold stored-event states into each position of ``h_bar``.

        Per position: hard-select among the stored events' rows using the
        current state as reference, fuse the survivors, then mix readout
        and state through the same attention block. Stored rows are
        constants, so only this layer's mixing weights receive gradient
        from the readout path.
        """
        s = h_bar.shape[0]
        mixed = []
        for p in range(s):
            past = Tensor(memory.rows_at(layer_index, p))
            ref = Tensor(h_bar.values[p])
            z = select_and_fuse(past, ref, self.mem_attn)
            pair = T.concat([T.take_rows(h_bar, [p]), T.reshape(z, (1, self.d))], axis=0)
            mixed.append(T.tmean(self.mem_attn(pair), axis=0))
        return self.mem_mlp(T.stack(mixed, axis=0)) + h_bar

    def params(self) -> dict:
        return collect_params([
            ("ln1", self.ln1), ("attn", self.attn), ("ln2", self.ln2),
            ("mlp", self.mlp), ("mem_attn", self.mem_attn), ("mem_mlp", self.mem_mlp),
        ])


class CaptionDecoder:
    """Stack of decoder layers with token, type and position embeddings.

    The word table is owned by the caller (it is shared with the caption
    encoder used by the alignment loss) and passed in, not created here.
    """

    def __init__(self, rng: np.random.Generator, word_embed: Embedding, d: int,
                 n_layers: int, n_heads: int, ff_mult: int, vocab_size: int,
                 max_pos: int):
        self.d = d
        self.n_layers = n_layers
        self.max_pos = max_pos
        self.word_embed = word_embed
        self.text_mlp = MLP(rng, d, ff_mult * d, d)
        self.type_embed = Embedding(rng, 2, d)
        self.pos_embed = Embedding(rng, max_pos, d)
        self.layers = [DecoderLayer(rng, d, n_heads, ff_mult) for _ in range(n_layers)]
        self.head = Linear(rng, d, vocab_size)

    def build_input(self, video_rows: Tensor, token_ids) -> Tensor:
        token_ids = np.asarray(token_ids, dtype=np.intp)
        n_video = video_rows.shape[0]
        s = n_video + token_ids.size
        if s > self.max_pos:
            raise ValidationError(f"sequence of {s} rows exceeds max positions {self.max_pos}")
        text_rows = self.text_mlp(self.word_embed(token_ids))
        h = T.concat([video_rows, text_rows], axis=0)
        types = self.type_embed([0] * n_video + [1] * token_ids.size)
        positions = self.pos_embed(np.arange(s))
        return h + types + positions

    def forward_event(self, video_rows: Tensor, token_ids, memory: EventMemory,
                      update_memory: bool = True):
        """Decode one event; returns (token logits, event summary vector).

        ``token_ids`` is the shifted input (leading BOS); logits row i
        scores the token after input i. When ``update_memory`` is set the
        per-layer states are committed to ``memory`` for later events.
        """
        if memory.n_layers != self.n_layers:
            raise ShapeError(f"memory has {memory.n_layers} layers, decoder has {self.n_layers}")
        n_video = video_rows.shape[0]
        n_text = len(token_ids)
        mask = causal_join_mask(n_video, n_text)
        h = self.build_input(video_rows, token_ids)
        snapshots = []
        for i, layer in enumerate(self.layers):
            h_bar = layer.inner(h, mask)
            snapshots.append(h_bar)
            h = h_bar if len(memory) == 0 else layer.read_memory(h_bar, memory, i)
        logits = self.head(T.take_rows(h, np.arange(n_video, n_video + n_text)))
        f_event = T.tmean(T.take_rows(h, np.arange(n_video)), axis=0)
        if update_memory:
            memory.append(snapshots)
        return logits, f_event

    def params(self) -> dict:
        named = [("text_mlp", self.text_mlp), ("type_embed", self.type_embed),
                 ("pos_embed", self.pos_embed), ("head", self.head)]
        named += [(f"layer{i}", layer) for i, layer in enumerate(self.layers)]
        return collect_params(named)


def greedy_decode(decoder: CaptionDecoder, video_rows: Tensor, memory: EventMemory,
                  max_len: int, bos_id: int, eos_id: int) -> list:
    """Argmax decoding for one event; commits the finished event to memory.

    Returns generated token ids without BOS or the trailing EOS. Ties pick
    the lowest id, so decoding is deterministic.
    """
    if max_len < 1:
        raise ValidationError(f"max_len must be >= 1, got {max_len}")
    ids = [bos_id]
    with T.no_grad():
        for _ in range(max_len):
            logits, _ = decoder.forward_event(video_rows, ids, memory, update_memory=False)
            nxt = int(np.argmax(logits.values[-1]))
            ids.append(nxt)
            if nxt == eos_id:
                break
        decoder.forward_event(video_rows, ids, memory, update_memory=True)
    out = ids[1:]
    if out and out[-1] == eos_id:
        out = out[:-1]
    return out
