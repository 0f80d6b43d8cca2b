import numpy as np
import pytest

from motioncap.data import Dataset, Sample, synth_generate
from motioncap.nn import NonFiniteError, Tensor
from motioncap.training import (
    Checkpoint,
    EpochLog,
    TrainConfig,
    Trainer,
    TrainingError,
    infer,
    total_loss,
)

TINY = dict(d_model=16, n_layers=1, n_heads=2, patch_t=8, patch_j=8,
            d_embed=16, te_layers=1, te_heads=2, epochs=2, k=1, seed=0)


def tiny_dataset(classes=3, per_class=6, seed=0):
    return synth_generate(classes, per_class, 16, 16, seed=seed)


def run_tiny(variant="complete", epochs=2, seed=0, dataset=None, **kw):
    cfg = TrainConfig(**{**TINY, **kw, "variant": variant, "epochs": epochs,
                         "seed": seed})
    ds = dataset or tiny_dataset(seed=seed)
    trainer = Trainer(ds, cfg)
    result = trainer.train()
    return trainer, result, ds


# -- total_loss -----------------------------------------------------------------


def test_total_loss_weighted_sum():
    out = total_loss(Tensor(2.0), Tensor(3.0), Tensor(5.0), 1.0, 1.0, 1.0)
    assert out.item() == pytest.approx(10.0)


def test_total_loss_all_zero_weights():
    out = total_loss(Tensor(2.0), Tensor(3.0), Tensor(5.0), 0.0, 0.0, 0.0)
    assert out.item() == 0.0


def test_total_loss_no_l2_objective():
    out = total_loss(Tensor(2.0), Tensor(3.0), Tensor(5.0), 1.0, 0.0, 1.0)
    assert out.item() == pytest.approx(7.0)


def test_total_loss_names_non_finite_term():
    with pytest.raises(NonFiniteError, match="L2"):
        total_loss(Tensor(1.0), Tensor(float("nan")), Tensor(1.0), 1.0, 1.0, 1.0)


# -- config validation ------------------------------------------------------------


def test_config_rejects_unknown_variant():
    with pytest.raises(TrainingError):
        TrainConfig(variant="nope").validate()


def test_config_rejects_bad_k():
    with pytest.raises(TrainingError):
        TrainConfig(k=0).validate()
    TrainConfig(k=0, variant="base").validate()  # base ignores k


def test_trainer_rejects_empty_splits():
    ds = Dataset([Sample("m", np.zeros((8, 8)), ["c"], "l", "train")])
    with pytest.raises(Exception, match="val split is empty"):
        Trainer(ds, TrainConfig(**TINY))


def test_trainer_rejects_missing_low_captions():
    ds = tiny_dataset()
    for s in ds.samples:
        s.low_caption = ""
    with pytest.raises(Exception, match="low-level captions"):
        Trainer(ds, TrainConfig(**TINY))
    cfg = TrainConfig(**{**TINY, "variant": "base"})
    Trainer(tiny_dataset_without_low(), cfg)  # base variant does not need them


def tiny_dataset_without_low():
    ds = tiny_dataset()
    for s in ds.samples:
        s.low_caption = ""
    return ds


# -- training behavior ---------------------------------------------------------


def test_smoke_run_produces_logs_and_checkpoint():
    trainer, result, _ = run_tiny(epochs=2)
    assert len(result.logs) == 2
    assert isinstance(result.logs[0], EpochLog)
    assert result.checkpoint.epoch in (1, 2)
    assert len(result.db) == len(trainer.train_samples)


def test_determinism_identical_epoch_logs():
    _, a, _ = run_tiny(seed=5)
    _, b, _ = run_tiny(seed=5)
    assert [r.comparable() for r in a.logs] == [r.comparable() for r in b.logs]


def test_different_seeds_differ():
    _, a, _ = run_tiny(seed=1)
    _, b, _ = run_tiny(seed=2)
    assert [r.comparable() for r in a.logs] != [r.comparable() for r in b.logs]


def test_frozen_variant_keeps_decoder_bitwise_identical():
    cfg = TrainConfig(**{**TINY, "variant": "frozen_td_no_l2"})
    ds = tiny_dataset()
    trainer = Trainer(ds, cfg)
    before = trainer.bundle.decoder.params.copy_values()
    trainer.train()
    after = trainer.bundle.decoder.params.copy_values()
    for path in before:
        assert np.array_equal(before[path], after[path]), path


def test_no_l2_variant_gives_zero_psi_gradients():
    cfg = TrainConfig(**{**TINY, "variant": "no_l2"})
    ds = tiny_dataset()
    trainer = Trainer(ds, cfg)
    trainer.seed_db()
    batch = trainer.train_samples[: cfg.batch_size]
    captured = {}
    original_step = trainer.optimizer.step

    def spy_step():
        captured.update({
            p: t.grad.copy() for p, t in trainer.bundle.embedder.params.items()
        })
        original_step()

    trainer.optimizer.step = spy_step
    trainer.train_step(batch)
    assert captured
    for path, grad in captured.items():
        assert np.array_equal(grad, np.zeros_like(grad)), path


def test_complete_variant_gives_nonzero_psi_gradients():
    cfg = TrainConfig(**TINY)
    ds = tiny_dataset()
    trainer = Trainer(ds, cfg)
    trainer.seed_db()
    batch = trainer.train_samples[: cfg.batch_size]
    captured = {}
    original_step = trainer.optimizer.step

    def spy_step():
        captured.update({
            p: t.grad.copy() for p, t in trainer.bundle.embedder.params.items()
        })
        original_step()

    trainer.optimizer.step = spy_step
    trainer.train_step(batch)
    assert any(np.abs(g).sum() > 0 for g in captured.values())


def test_epoch_stability_of_db_embeddings():
    cfg = TrainConfig(**TINY)
    ds = tiny_dataset()
    trainer = Trainer(ds, cfg)
    trainer.seed_db()
    snapshot = [e.embedding.copy() for e in trainer.db.entries]
    trainer.run_epoch()
    for before, entry in zip(snapshot, trainer.db.entries):
        assert np.array_equal(before, entry.embedding)
    trainer.reencode()
    for entry in trainer.db.entries:
        fresh = trainer.bundle.embed_text(entry.low_caption)
        assert np.array_equal(fresh, entry.embedding)


def test_db_size_constant_during_training():
    trainer, result, _ = run_tiny()
    assert len(result.db) == len(trainer.train_samples)


def test_degenerate_single_train_sample_completes():
    base = tiny_dataset(classes=1, per_class=4)
    samples = base.samples[:2]
    samples[0].split = "train"
    samples[1].split = "val"
    ds = Dataset(samples)
    cfg = TrainConfig(**{**TINY, "k": 1, "epochs": 1})
    with pytest.warns(UserWarning, match="negative"):
        trainer = Trainer(ds, cfg)
        result = trainer.train()
    assert len(result.logs) == 1
    # k=1 retrieval returns the sample's own caption: no self-exclusion
    sample = ds.split("train")[0]
    out = infer(sample.motion, result.checkpoint.build_models(), result.db,
                normalized=True)
    assert out.retrieved.items[0][0] == result.db.entries[0].high_caption


def test_checkpoint_round_trip_reproduces_outputs(tmp_path):
    _, result, ds = run_tiny(epochs=1)
    path = tmp_path / "model.hckp"
    result.checkpoint.save(path)
    loaded = Checkpoint.load(path)
    assert loaded.vocab_hash == result.checkpoint.vocab_hash
    assert loaded.epoch == result.checkpoint.epoch
    probe = ds.split("val")[0]
    a = infer(probe.motion, result.checkpoint.build_models(), result.db,
              normalized=True)
    b = infer(probe.motion, loaded.build_models(), result.db, normalized=True)
    assert a.final_caption == b.final_caption
    assert a.low_caption == b.low_caption
    assert [i for _, _, i in a.retrieved.items] == [i for _, _, i in b.retrieved.items]


def test_checkpoint_corrupt_magic_rejected(tmp_path):
    path = tmp_path / "bad.hckp"
    path.write_bytes(b"XXXX" + b"\x00" * 30)
    with pytest.raises(TrainingError, match="magic"):
        Checkpoint.load(path)


# -- inference variants -----------------------------------------------------------


def test_top1_direct_outputs_database_caption():
    _, result, ds = run_tiny(variant="top1_direct")
    bundle = result.checkpoint.build_models()
    captions = {e.high_caption for e in result.db.entries}
    for s in ds.split("val"):
        out = infer(s.motion, bundle, result.db, normalized=True)
        assert out.final_caption in captions


def test_base_variant_needs_no_database():
    _, result, ds = run_tiny(variant="base", dataset=tiny_dataset_without_low())
    bundle = result.checkpoint.build_models()
    out = infer(ds.split("val")[0].motion, bundle, None, normalized=True)
    assert out.low_caption is None
    assert len(out.retrieved) == 0
    assert len(result.db) == 0


def test_retrieval_variant_rejects_empty_db():
    _, result, ds = run_tiny(epochs=1)
    from motioncap.db import Database
    with pytest.raises(TrainingError, match="database"):
        infer(ds.samples[0].motion, result.checkpoint.build_models(),
              Database(width=16), normalized=True)


def test_infer_k_must_be_positive():
    _, result, ds = run_tiny(epochs=1)
    with pytest.raises(TrainingError, match="k"):
        infer(ds.samples[0].motion, result.checkpoint.build_models(), result.db,
              k=0, normalized=True)


def test_infer_deterministic():
    _, result, ds = run_tiny(epochs=1)
    bundle = result.checkpoint.build_models()
    s = ds.split("test")[0]
    a = infer(s.motion, bundle, result.db, normalized=True)
    b = infer(s.motion, bundle, result.db, normalized=True)
    assert a.to_dict() == b.to_dict()


def test_changing_k_only_affects_retrieval_prefix():
    cfg = TrainConfig(**TINY)
    ds = tiny_dataset()
    t1 = Trainer(ds, cfg)
    t1.seed_db()
    sample = t1.train_samples[0]
    l1a, l2a, _ = t1._sample_losses(sample)
    cfg2 = TrainConfig(**{**TINY, "k": 2})
    ds2 = tiny_dataset()
    t2 = Trainer(ds2, cfg2)
    t2.seed_db()
    l1b, l2b, _ = t2._sample_losses(t2.train_samples[0])
    assert l1a.item() == pytest.approx(l1b.item(), abs=1e-12)
    assert l2a.item() == pytest.approx(l2b.item(), abs=1e-12)


def test_selection_prefers_earlier_epoch_on_tie():
    logs = [10.0, 30.0, 30.0, 20.0]
    best_epoch = None
    best = -1.0
    for epoch, avg in enumerate(logs, start=1):
        if avg > best:
            best = avg
            best_epoch = epoch
    assert best_epoch == 2
