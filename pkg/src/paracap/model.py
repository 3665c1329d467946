"""Full captioning model: snippet encoder, event decoder, caption encoder,
and the temperature scalar, with JSON checkpointing.

One word-embedding table serves both the decoder input and the caption
encoder used by the alignment loss, standing in for a single shared text
encoder.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import BOS_ID, EOS_ID, Vocabulary, tokenize
from .decoder import CaptionDecoder, EventMemory, greedy_decode
from .encoder import MODALITIES, SnippetEncoder, VocabEmbeddingTable
from .errors import ShapeError, ValidationError
from .losses import RHO_INIT
from .nn import MLP, Embedding
from .tensor import Tensor

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d_env: int
    d_agent: int
    d_frame: int
    vocab_size: int
    d_emb: int = 32
    n_layers: int = 2
    n_heads: int = 4
    ff_mult: int = 2
    max_pos: int = 64
    k: int = 4
    max_len: int = 16
    modalities: tuple = MODALITIES
    seed: int = 0

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        if self.d_emb % self.n_heads != 0:
            raise ValidationError(f"d_emb={self.d_emb} not divisible by "
                                  f"n_heads={self.n_heads}")
        if self.vocab_size < 5:
            raise ValidationError(f"vocab_size={self.vocab_size} leaves no room "
                                  "beyond the reserved ids")
        if self.max_len < 1 or self.k < 1:
            raise ValidationError("max_len and k must be >= 1")


@dataclass
class VideoForward:
    """Teacher-forced outputs for one video: per-event logits and targets,
    plus the stacked event summary vectors."""

    logits: list
    targets: list
    event_embeddings: Tensor


class CaptionModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.word_embed = Embedding(rng, config.vocab_size, config.d_emb)
        self.encoder = SnippetEncoder(rng, config.d_env, config.d_agent,
                                      config.d_frame, config.d_emb,
                                      config.ff_mult, config.modalities)
        self.decoder = CaptionDecoder(rng, self.word_embed, config.d_emb,
                                      config.n_layers, config.n_heads,
                                      config.ff_mult, config.vocab_size,
                                      config.max_pos)
        # The caption tower is deliberately independent of the decoder's
        # word table so the alignment loss cannot warp the token geometry
        # the captioning path reads.
        self.caption_word_embed = Embedding(rng, config.vocab_size, config.d_emb)
        self.caption_mlp = MLP(rng, config.d_emb, config.ff_mult * config.d_emb,
                               config.d_emb)
        self.rho = Tensor(np.array(RHO_INIT), requires_grad=True)

    def named_params(self) -> dict:
        out = {"word_embed.table": self.word_embed.table,
               "caption_word_embed.table": self.caption_word_embed.table}
        for prefix, mod in (("encoder", self.encoder), ("decoder", self.decoder),
                            ("caption_mlp", self.caption_mlp)):
            for k, v in mod.params().items():
                out[f"{prefix}.{k}"] = v
        out["rho"] = self.rho
        return out

    # ------------------------------------------------------------------
    # forward paths

    def event_tokens(self, event, vocab: Vocabulary) -> list:
        return vocab.encode(tokenize(event.caption))

    def caption_embedding(self, token_ids) -> Tensor:
        """Caption vector: mean of word embeddings through a projection head."""
        if len(token_ids) == 0:
            raise ValidationError("cannot embed an empty caption")
        rows = self.caption_word_embed(token_ids)
        return self.caption_mlp(T.tmean(rows, axis=0))

    def forward_video(self, record, table: VocabEmbeddingTable,
                      vocab: Vocabulary) -> VideoForward:
        """Teacher-forced pass over a video's events, in timestamp order."""
        memory = EventMemory(self.config.n_layers)
        logits_list, targets_list, summaries = [], [], []
        for event in record.events:
            tokens = self.event_tokens(event, vocab)
            video_rows = self.encoder.encode_event(event.snippets, table,
                                                   self.config.k)
            logits, f_event = self.decoder.forward_event(
                video_rows, [BOS_ID] + tokens, memory, update_memory=True)
            logits_list.append(logits)
            targets_list.append(np.array(tokens + [EOS_ID], dtype=np.intp))
            summaries.append(f_event)
        return VideoForward(logits=logits_list, targets=targets_list,
                            event_embeddings=T.stack(summaries, axis=0))

    def caption_embeddings(self, record, vocab: Vocabulary) -> Tensor:
        rows = []
        for event in record.events:
            tokens = self.event_tokens(event, vocab)
            rows.append(self.caption_embedding(tokens))
        return T.stack(rows, axis=0)

    def decode_video(self, record, table: VocabEmbeddingTable,
                     max_len: int = None) -> list:
        """Greedy captions for each event, as token-id lists without bos/eos."""
        max_len = self.config.max_len if max_len is None else max_len
        memory = EventMemory(self.config.n_layers)
        out = []
        with T.no_grad():
            for event in record.events:
                video_rows = self.encoder.encode_event(event.snippets, table,
                                                       self.config.k)
                out.append(greedy_decode(self.decoder, video_rows, memory,
                                         max_len, BOS_ID, EOS_ID))
        return out

    # ------------------------------------------------------------------
    # persistence

    def check_table(self, table: VocabEmbeddingTable, vocab: Vocabulary):
        """Reject eval-time artifacts that do not match this model's setup."""
        if table.d_feature != self.config.d_frame:
            raise ValidationError(f"embedding table width {table.d_feature} does not "
                                  f"match model d_frame {self.config.d_frame}")
        if len(vocab) != self.config.vocab_size:
            raise ValidationError(f"mismatched vocab: {len(vocab)} tokens vs model "
                                  f"vocab_size {self.config.vocab_size}")

    def save_checkpoint(self, path: str, vocab_tokens=None):
        payload = {
            "format_version": CHECKPOINT_VERSION,
            "config": dict(asdict(self.config), modalities=list(self.config.modalities)),
            "params": {
                name: {"shape": list(p.values.shape), "values": p.values.ravel().tolist()}
                for name, p in self.named_params().items()
            },
        }
        if vocab_tokens is not None:
            payload["config"]["vocab_tokens"] = list(vocab_tokens)
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load_checkpoint(cls, path: str):
        """Rebuild a model from a checkpoint; returns (model, stored vocab tokens)."""
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: not valid JSON ({exc})") from None
        for key in ("format_version", "config", "params"):
            if key not in payload:
                raise ValidationError(f"{path}: missing key {key!r}")
        if payload["format_version"] != CHECKPOINT_VERSION:
            raise ValidationError(f"{path}: format_version {payload['format_version']} "
                                  f"unsupported (expected {CHECKPOINT_VERSION})")
        cfg_dict = dict(payload["config"])
        vocab_tokens = cfg_dict.pop("vocab_tokens", None)
        try:
            config = ModelConfig(**cfg_dict)
        except TypeError as exc:
            raise ValidationError(f"{path}: bad config ({exc})") from None
        model = cls(config)
        params = model.named_params()
        stored = payload["params"]
        missing = sorted(set(params) - set(stored))
        extra = sorted(set(stored) - set(params))
        if missing or extra:
            raise ValidationError(f"{path}: parameter names do not match "
                                  f"(missing {missing[:3]}, extra {extra[:3]})")
        for name, entry in stored.items():
            target = params[name]
            shape = tuple(entry["shape"])
            if shape != target.values.shape:
                raise ShapeError(f"{path}: {name} has shape {shape}, "
                                 f"expected {target.values.shape}")
            target.values = np.array(entry["values"], dtype=np.float64).reshape(shape)
        return model, vocab_tokens
