import sys
import time

import numpy as np

from motioncap.data import synth_generate, class_of_motion_id
from motioncap.metrics import EvalPair, bleu
from motioncap.training import TrainConfig, Trainer, infer


def run(tag, epochs=10, **kw):
    t0 = time.time()
    ds = synth_generate(8, 25, 64, 32, seed=7)
    cfg = TrainConfig(k=2, c=0.7, epochs=epochs, seed=7, **kw)
    trainer = Trainer(ds, cfg)
    result = trainer.train()
    logs = result.logs
    bundle = result.checkpoint.build_models()
    test = ds.split("test")
    hits = 0
    pairs = []
    distinct = set()
    exact_z = 0
    for s in test:
        r = infer(s.motion, bundle, result.db, splits={"train"}, normalized=True)
        top_entry = result.db.entries[r.retrieved.items[0][2]]
        hits += (class_of_motion_id(top_entry.motion_id) == class_of_motion_id(s.motion_id))
        pairs.append(EvalPair(r.final_caption, s.high_captions))
        distinct.add(r.low_caption)
        exact_z += (r.low_caption == s.low_caption)
    print(f"[{tag}] ratio={logs[-1].total/logs[0].total:.2f} best_ep={result.checkpoint.epoch} "
          f"acc={hits}/{len(test)} exact_z={exact_z} bleu1={bleu(pairs,1):.1f} "
          f"distinct_z={len(distinct)} t={time.time()-t0:.0f}s", flush=True)
    print("  val avg:", [round(r.avg_metric, 1) for r in logs], flush=True)
    print("  l1:", [round(r.l1, 1) for r in logs], flush=True)


for i, kw in enumerate([
    dict(d_model=128, n_heads=8),
    dict(d_model=128, n_heads=8, enc_layers=1),
    dict(),
]):
    if len(sys.argv) < 2 or int(sys.argv[1]) == i:
        run(f"exp2-{i} {kw}", **kw)
