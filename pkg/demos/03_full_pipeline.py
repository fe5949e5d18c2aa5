"""End-to-end run on the bundled corpus: embed, mine, train, evaluate.

This is the same experiment the acceptance suite performs, narrated.  It
takes about a minute on a laptop.  All stages are seeded; rerunning
produces identical files.
"""

import tempfile
from pathlib import Path

import numpy as np

from cirforge.evaluator import EvalQuery, Gallery, evaluate, format_report
from cirforge.miner import build_dataset, load_triplets
from cirforge.model import ModelConfig, ToyEncoders, load_checkpoint
from cirforge.rng import HashRng
from cirforge.store import EmbeddingStore, KIND_CAPTION, load_corpus, make_embedder, write_store
from cirforge.trainer import TrainingConfig, train

corpus_path = Path(__file__).resolve().parents[1] / "src" / "cirforge" / "data" / "demo_corpus.jsonl"
workdir = Path(tempfile.mkdtemp(prefix="cirforge-demo-"))
records = load_corpus(corpus_path)
print(f"corpus: {len(records)} captions; working under {workdir}")

embed = make_embedder(dim=256, seed=0)
store = EmbeddingStore.from_entries(
    256, KIND_CAPTION, ((r.id, embed(r.caption).astype(np.float32)) for r in records))
write_store(store, workdir / "captions.bin")

stats = build_dataset(records, store, "template", threshold=0.6, seed=0,
                      out_path=workdir / "triplets.jsonl", embed=embed)
print(f"mined {stats.total_triplets} triplets; per-type: {dict(sorted(stats.emitted.items()))}")

triplets = load_triplets(workdir / "triplets.jsonl")
order = HashRng(0, "split").shuffled(range(len(triplets)))
cut = int(0.8 * len(triplets))
train_set = [triplets[i] for i in order[:cut]]
heldout = [triplets[i] for i in order[cut:]]

config = TrainingConfig(
    model=ModelConfig(dim=32, fusion_layers=2, heads=8, finetune="both"),
    batch_size=16, epochs=30, seed=0, tau=0.05, encoder_lr=2e-2, head_lr=1e-2)
encoders = ToyEncoders(records, 32, seed=0)
report = train(config, train_set, encoders, workdir / "model.ckpt")
print(f"trained {report.steps} steps in {report.wall_time:.0f}s; "
      f"epoch loss {report.epoch_losses[0]:.3f} -> {report.epoch_losses[-1]:.3f}")

model, _, _ = load_checkpoint(workdir / "model.ckpt", encoders)
for name, split in (("train", train_set), ("held-out", heldout)):
    queries = [EvalQuery(t.ref_id, t.relative_caption, t.target_id) for t in split]
    gallery = Gallery.from_model(model, sorted({t.target_id for t in split}))
    metrics = evaluate(model, queries, gallery, ks=(1, 5, 10))
    print(f"\n{name} split ({len(split)} queries, gallery {len(gallery)}):")
    print(format_report(metrics))
