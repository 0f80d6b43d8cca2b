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
    for s in test:
        r = infer(s.motion, bundle, result.db, splits={"train"}, normalized=True)
        top_entry = result.db.entries[r.retrieved.items[0][2]]
        hits += (class_of_motion_id(top_entry.motion_id) == class_of_motion_id(s.motion_id))
        pairs.append(EvalPair(r.final_caption, s.high_captions))
        distinct.add(r.low_caption)
    print(f"[{tag}] ratio={logs[-1].total/logs[0].total:.2f} best_ep={result.checkpoint.epoch} "
          f"acc={hits}/{len(test)} bleu1={bleu(pairs,1):.1f} distinct_z={len(distinct)} "
          f"t={time.time()-t0:.0f}s", flush=True)
    print("  val avg:", [round(r.avg_metric, 1) for r in logs], flush=True)
    print("  l1:", [round(r.l1, 1) for r in logs], flush=True)


run("TEfix d128 patch16x32", d_model=128, n_heads=8)
run("TEfix d128 patch16x8", d_model=128, n_heads=8, patch_t=16, patch_j=8)
run("TEfix d64 patch16x8", patch_t=16, patch_j=8)
