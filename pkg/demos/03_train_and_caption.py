"""Train a captioner on a synthetic world and read its paragraphs.

Generates a small corpus of multi-event videos, trains for a couple of
minutes of CPU, then decodes paragraphs for training and held-out videos
next to their references, and prints the metric report.

Run: python3 demos/03_train_and_caption.py
"""

import time

import numpy as np

from paracap import metrics as M
from paracap.data import SyntheticWorldSpec, build_vocab, generate_synthetic
from paracap.losses import LossConfig
from paracap.model import CaptionModel, ModelConfig
from paracap.training import TrainConfig, decode_pairs, train


def banner(text):
    print(f"\n=== {text} ===")


def show_paragraphs(model, records, corpus, vocab, limit=3):
    for pair, rec in zip(decode_pairs(model, records, corpus.table, vocab),
                         records):
        print(f"  {rec.video_id}")
        for hyp, ref in zip(pair.hyps, pair.refs):
            print(f"    said : {' '.join(hyp) if hyp else '(nothing)'}")
            print(f"    truth: {' '.join(ref)}")
        limit -= 1
        if limit == 0:
            break


def main():
    banner("a synthetic world")
    spec = SyntheticWorldSpec(n_agent_kinds=3, n_action_kinds=3,
                              n_place_kinds=3, n_videos=10, n_held_out=3,
                              events_per_video=2, snippets_per_event=2,
                              max_agents=1, seed=208)
    corpus = generate_synthetic(spec)
    vocab = build_vocab(ev.caption for rec in corpus.train
                        for ev in rec.events)
    print(f"{len(corpus.train)} training videos, "
          f"{len(corpus.held_out)} held out, vocabulary {len(vocab)} tokens")
    sample = corpus.train[0]
    print(f"sample video {sample.video_id!r}:")
    for ev in sample.events:
        print(f"  [{ev.begin:4.1f}, {ev.end:4.1f}]  {ev.caption}")

    banner("training")
    first = corpus.train[0].events[0].snippets[0]
    config = ModelConfig(d_env=first.env.shape[0],
                         d_agent=first.agents.shape[1],
                         d_frame=first.frame.shape[0],
                         vocab_size=len(vocab), d_emb=24, n_layers=1,
                         n_heads=2, max_pos=24, seed=0)
    model = CaptionModel(config)
    start = time.monotonic()
    stats = train(model, corpus.train, corpus.table, vocab,
                  TrainConfig(lr=2e-3, warmup_epochs=2, epochs=120,
                              batch_size=4, seed=0),
                  LossConfig())
    for s in stats[::20] + [stats[-1]]:
        print(f"  epoch {s.epoch:>3}  caption loss {s.l_cap:.3f}  "
              f"alignment loss {s.l_con:.3f}  accuracy {s.acc:.3f}")
    print(f"({time.monotonic() - start:.0f}s)")

    banner("paragraphs for training videos (memorized)")
    show_paragraphs(model, corpus.train, corpus, vocab)

    banner("paragraphs for held-out videos (novel event combinations)")
    show_paragraphs(model, corpus.held_out, corpus, vocab)

    banner("metric report on the held-out split")
    report = M.report(decode_pairs(model, corpus.held_out, corpus.table,
                                   vocab))
    for key in ("bleu4", "rouge_l", "div2", "rep4"):
        value = report[key]
        print(f"  {key:<8} "
              f"{'n/a' if value is None else format(value, '.4f')}")
    print(f"  ({report['n_videos']} videos, {report['n_events']} events)")


if __name__ == "__main__":
    main()
