"""End-to-end training: joint losses, epoch-boundary re-encoding, ablation
variants, validation-based model selection, and checkpoint persistence."""

from __future__ import annotations

import json
import struct
import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .data import DataError, Dataset, NormalizationStats, normalize
from .db import Database, RetrievalResult
from .decoder import MODE_FINAL, MODE_LOW, DecoderConfig, TextDecoder
from .embedder import EmbedderConfig, TextEncoder, contrastive_loss
from .encoder import EncoderConfig, MotionEncoder
from .metrics import DegenerateCorpusError, EvalPair, bleu, cider, rouge_l
from .nn import Adam, ParameterSet, Tensor, clip_global_norm
from .text import BOS, EOS, Vocabulary, lemmatize

CKPT_MAGIC = b"HCKP"
CKPT_VERSION = 1

VARIANT_COMPLETE = "complete"
VARIANT_TOP1 = "top1_direct"
VARIANT_NO_L2 = "no_l2"
VARIANT_FROZEN = "frozen_td_no_l2"
VARIANT_BASE = "base"
VARIANTS = (VARIANT_COMPLETE, VARIANT_TOP1, VARIANT_NO_L2, VARIANT_FROZEN, VARIANT_BASE)

PRESETS = {
    "kit-like": {"k": 2, "c": 0.7, "patch_t": 16, "patch_j": 32},
    "hml3d-like": {"k": 3, "c": 0.5, "patch_t": 32, "patch_j": 32},
    "both-like": {"k": 1, "c": 0.7, "patch_t": 32, "patch_j": 32},
}


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    k: int = 2
    c: float = 0.7
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lr: float = 1e-4
    epochs: int = 10
    batch_size: int = 8
    variant: str = VARIANT_COMPLETE
    seed: int = 0
    l2_form: str = "paper"
    exclude_self: bool = False
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    enc_layers: int = 0  # 0 means "same as n_layers"
    patch_t: int = 16
    patch_j: int = 8
    max_patches: int = 256
    d_embed: int = 64
    te_layers: int = 2
    te_heads: int = 4
    max_seq_len: int = 160
    te_max_seq_len: int = 64
    low_max_tokens: int = 48
    final_max_tokens: int = 24
    grad_clip: float = 1.0
    min_freq: int = 1
    lemmatize_validation: bool = False

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise TrainingError(f"unknown variant {self.variant!r}; one of {VARIANTS}")
        if self.variant != VARIANT_BASE and self.k < 1:
            raise TrainingError("k must be >= 1 for retrieval variants")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise TrainingError("loss weights must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainingError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.c <= 1.0:
            raise TrainingError("c must lie in [0, 1]")

    def effective_lambda2(self) -> float:
        if self.variant in (VARIANT_NO_L2, VARIANT_FROZEN, VARIANT_BASE):
            return 0.0
        return self.lambda2


@dataclass
class EpochLog:
    epoch: int
    l1: float
    l2: float
    l3: float
    total: float
    bleu1: float
    bleu4: float
    rougeL: float
    cider: float
    avg_metric: float
    wall_time: float

    def to_dict(self) -> dict:
        return asdict(self)

    def comparable(self) -> dict:
        """All fields except wall time, which is never reproducible."""
        row = asdict(self)
        row.pop("wall_time")
        return row


def total_loss(l1, l2, l3, lambda1: float, lambda2: float, lambda3: float):
    """Weighted sum of the three loss terms; zero-weight terms are dropped
    from the graph. Inputs may be Tensors or floats."""
    terms = []
    for name, value, weight in (("L1", l1, lambda1), ("L2", l2, lambda2),
                                ("L3", l3, lambda3)):
        if weight == 0.0 or value is None:
            continue
        raw = value.data if isinstance(value, Tensor) else value
        if not np.all(np.isfinite(raw)):
            raise nn.NonFiniteError(f"non-finite loss term {name}")
        terms.append(weight * value)
    if not terms:
        return Tensor(0.0)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out if isinstance(out, Tensor) else Tensor(out)


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocabulary
    epoch: int
    metrics: dict
    norm: NormalizationStats
    encoder_values: dict[str, np.ndarray]
    decoder_values: dict[str, np.ndarray]
    embedder_values: dict[str, np.ndarray]

    @property
    def vocab_hash(self) -> str:
        return self.vocab.content_hash()

    def save(self, path) -> None:
        groups = {
            "encoder": self.encoder_values,
            "decoder": self.decoder_values,
            "embedder": self.embedder_values,
        }
        manifest = {
            name: [[p, list(values[p].shape)] for p in sorted(values)]
            for name, values in groups.items()
        }
        header = {
            "config": asdict(self.config),
            "vocab_hash": self.vocab_hash,
            "vocab": self.vocab.to_json_dict(),
            "epoch": self.epoch,
            "metrics": self.metrics,
            "norm": self.norm.to_dict(),
            "params": manifest,
        }
        blob = json.dumps(header).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(struct.pack("<I", CKPT_VERSION))
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for name in ("encoder", "decoder", "embedder"):
                for p, _ in manifest[name]:
                    fh.write(groups[name][p].astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != CKPT_MAGIC:
            raise TrainingError(f"bad checkpoint magic {data[:4]!r}")
        (version,) = struct.unpack_from("<I", data, 4)
        if version != CKPT_VERSION:
            raise TrainingError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack_from("<Q", data, 8)
        offset = 16
        header = json.loads(data[offset:offset + header_len].decode("utf-8"))
        offset += header_len
        groups = {}
        for name in ("encoder", "decoder", "embedder"):
            values = {}
            for p, shape in header["params"][name]:
                count = int(np.prod(shape)) if shape else 1
                end = offset + 8 * count
                if end > len(data):
                    raise TrainingError(f"truncated checkpoint at block {name}.{p}")
                values[p] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).copy()
                offset = end
            groups[name] = values
        vocab = Vocabulary.from_json_dict(header["vocab"])
        if vocab.content_hash() != header["vocab_hash"]:
            raise TrainingError("vocabulary hash mismatch in checkpoint header")
        return cls(
            config=TrainConfig(**header["config"]),
            vocab=vocab,
            epoch=header["epoch"],
            metrics=header["metrics"],
            norm=NormalizationStats.from_dict(header["norm"]),
            encoder_values=groups["encoder"],
            decoder_values=groups["decoder"],
            embedder_values=groups["embedder"],
        )

    def build_models(self) -> "ModelBundle":
        bundle = ModelBundle.fresh(self.config, self.vocab, self.norm)
        bundle.encoder.params.load_values(self.encoder_values)
        bundle.decoder.params.load_values(self.decoder_values)
        bundle.embedder.params.load_values(self.embedder_values)
        return bundle


@dataclass
class ModelBundle:
    config: TrainConfig
    vocab: Vocabulary
    norm: NormalizationStats
    encoder: MotionEncoder
    decoder: TextDecoder
    embedder: TextEncoder

    @classmethod
    def fresh(cls, cfg: TrainConfig, vocab: Vocabulary,
              norm: NormalizationStats, seed: int | None = None) -> "ModelBundle":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        encoder = MotionEncoder(EncoderConfig(
            patch_t=cfg.patch_t, patch_j=cfg.patch_j, d_model=cfg.d_model,
            n_layers=cfg.enc_layers or cfg.n_layers, n_heads=cfg.n_heads,
            max_patches=cfg.max_patches,
        ), rng)
        decoder = TextDecoder(DecoderConfig(
            d_model=cfg.d_model, n_layers=cfg.n_layers, n_heads=cfg.n_heads,
            vocab_size=len(vocab), max_seq_len=cfg.max_seq_len,
        ), rng)
        embedder = TextEncoder(EmbedderConfig(
            d_embed=cfg.d_embed, n_layers=cfg.te_layers, n_heads=cfg.te_heads,
            vocab_size=len(vocab), max_seq_len=cfg.te_max_seq_len,
        ), rng)
        return cls(cfg, vocab, norm, encoder, decoder, embedder)

    def embed_text(self, text: str) -> np.ndarray:
        return self.embedder.embed_text(text, self.vocab)

    def snapshot(self, epoch: int, metrics: dict) -> Checkpoint:
        return Checkpoint(
            config=self.config,
            vocab=self.vocab,
            epoch=epoch,
            metrics=dict(metrics),
            norm=self.norm,
            encoder_values=self.encoder.params.copy_values(),
            decoder_values=self.decoder.params.copy_values(),
            embedder_values=self.embedder.params.copy_values(),
        )


@dataclass
class InferResult:
    low_caption: str | None
    retrieved: RetrievalResult
    final_caption: str
    truncated: bool

    def to_dict(self) -> dict:
        return {
            "low_caption": self.low_caption,
            "retrieved": [
                {"caption": c, "score": s, "entry_id": i} for c, s, i in self.retrieved
            ],
            "final_caption": self.final_caption,
            "truncated": self.truncated,
        }


def infer(motion: np.ndarray, bundle: ModelBundle, database: Database | None,
          variant: str | None = None, k: int | None = None,
          splits: set[str] | None = None,
          normalized: bool = False) -> InferResult:
    """Run the variant's inference path on a raw (or pre-normalized) motion."""
    cfg = bundle.config
    variant = variant or cfg.variant
    k = k or cfg.k
    if variant not in VARIANTS:
        raise TrainingError(f"unknown variant {variant!r}")
    if variant != VARIANT_BASE:
        if database is None or len(database) == 0:
            raise TrainingError(f"variant {variant!r} needs a non-empty database")
        if k < 1:
            raise TrainingError("k must be >= 1 for retrieval variants")
    motion = np.asarray(motion, dtype=np.float64)
    if not normalized:
        motion = bundle.norm.apply(motion)
    with nn.no_grad():
        features = bundle.encoder.encode(motion)
        if variant == VARIANT_BASE:
            gen = bundle.decoder.generate(features, cfg.final_max_tokens, MODE_FINAL)
            return InferResult(None, RetrievalResult([], False),
                               bundle.vocab.decode(gen.token_ids), gen.truncated)
        gen_low = bundle.decoder.generate(features, cfg.low_max_tokens, MODE_LOW)
        low_text = bundle.vocab.decode(gen_low.token_ids)
        u_hat = bundle.embedder.embed_ids([BOS] + gen_low.token_ids + [EOS]).data
        retrieval = database.topk(u_hat, k, splits=splits)
        if variant == VARIANT_TOP1:
            return InferResult(low_text, retrieval, retrieval.items[0][0], gen_low.truncated)
        retrieved_ids = [bundle.vocab.encode(c, frame=False) for c in retrieval.captions()]
        prefix = bundle.decoder.build_prefix(retrieved_ids, features)
        gen = bundle.decoder.generate(prefix, cfg.final_max_tokens, MODE_FINAL)
        return InferResult(low_text, retrieval, bundle.vocab.decode(gen.token_ids),
                           gen.truncated or gen_low.truncated)


class Trainer:
    """Owns the three networks, the optimizer, and the dynamic database."""

    def __init__(self, dataset: Dataset, cfg: TrainConfig):
        cfg.validate()
        self.cfg = cfg
        self.dataset = dataset
        self.train_samples = dataset.split("train")
        self.val_samples = dataset.split("val")
        if not self.train_samples:
            raise DataError("train split is empty")
        if not self.val_samples:
            raise DataError("val split is empty")
        if cfg.variant != VARIANT_BASE:
            missing = [s.motion_id for s in self.train_samples if s.needs_expansion]
            if missing:
                raise DataError(
                    f"{len(missing)} train samples lack low-level captions "
                    f"(first: {missing[:3]}); run caption expansion first"
                )
        self.norm = normalize(dataset)
        corpus = [c for s in self.train_samples for c in s.high_captions]
        corpus += [s.low_caption for s in self.train_samples if s.low_caption]
        self.vocab = Vocabulary.build(corpus, cfg.min_freq)
        self.bundle = ModelBundle.fresh(cfg, self.vocab, self.norm)
        self.params = ParameterSet.merged({
            "encoder": self.bundle.encoder.params,
            "decoder": self.bundle.decoder.params,
            "embedder": self.bundle.embedder.params,
        })
        if cfg.variant == VARIANT_FROZEN:
            self.params.frozen.update(
                f"decoder.{p}" for p in self.bundle.decoder.params.paths()
            )
        self.optimizer = Adam(self.params, lr=cfg.lr)
        self.rng = np.random.default_rng(cfg.seed + 1)
        self.db = Database(width=cfg.d_embed)
        self._entry_for_motion: dict[str, int] = {}
        self._l2_warned = False

    # -- database ----------------------------------------------------------

    def seed_db(self) -> None:
        if self.cfg.variant == VARIANT_BASE:
            return
        for s in self.train_samples:
            entry_id = self.db.insert(
                s.motion_id, s.primary_caption, s.low_caption,
                self.bundle.embed_text(s.low_caption), split="train",
            )
            self._entry_for_motion[s.motion_id] = entry_id

    def reencode(self) -> int:
        return self.db.reencode_all(self.bundle.embed_text)

    # -- losses --------------------------------------------------------------

    def _sample_losses(self, sample):
        cfg = self.cfg
        features = self.bundle.encoder.encode(sample.motion)
        if cfg.variant == VARIANT_BASE:
            y_ids = self.vocab.encode(sample.primary_caption)
            l1 = self.bundle.decoder.nll_loss(features, y_ids, MODE_FINAL)
            return l1, None, None

        z_ids = self.vocab.encode(sample.low_caption)
        l1 = self.bundle.decoder.nll_loss(features, z_ids, MODE_LOW)

        gen = self.bundle.decoder.generate(features, cfg.low_max_tokens, MODE_LOW)
        z_hat_framed = [BOS] + gen.token_ids + [EOS]
        lam2 = cfg.effective_lambda2()
        if lam2 > 0.0:
            u_hat = self.bundle.embedder.embed_ids(z_hat_framed)
        else:
            with nn.no_grad():
                u_hat = self.bundle.embedder.embed_ids(z_hat_framed)

        l2 = None
        if lam2 > 0.0:
            negatives = [e for e in self.db.entries if e.motion_id != sample.motion_id]
            if negatives:
                own = self.db.entries[self._entry_for_motion[sample.motion_id]]
                negative = negatives[int(self.rng.integers(len(negatives)))]
                l2 = contrastive_loss(
                    u_hat, Tensor(own.embedding), Tensor(negative.embedding),
                    cfg.c, cfg.l2_form,
                )
            elif not self._l2_warned:
                warnings.warn(
                    "contrastive loss skipped: database has no other motion to "
                    "draw a negative from",
                    stacklevel=2,
                )
                self._l2_warned = True

        retrieval = self.db.topk(
            u_hat.data, cfg.k,
            exclude_motion_id=sample.motion_id if cfg.exclude_self else None,
            splits={"train"},
        )
        retrieved_ids = [self.vocab.encode(c, frame=False) for c in retrieval.captions()]
        prefix = self.bundle.decoder.build_prefix(retrieved_ids, features)
        y_ids = self.vocab.encode(sample.primary_caption)
        l3 = self.bundle.decoder.nll_loss(prefix, y_ids, MODE_FINAL)
        return l1, l2, l3

    def train_step(self, batch) -> dict:
        cfg = self.cfg
        lam2 = cfg.effective_lambda2()
        sums = {"l1": 0.0, "l2": 0.0, "l3": 0.0, "total": 0.0}
        batch_terms = []
        for sample in batch:
            l1, l2, l3 = self._sample_losses(sample)
            term = total_loss(l1, l2, l3, cfg.lambda1, lam2 if l2 is not None else 0.0,
                              cfg.lambda3 if l3 is not None else 0.0)
            batch_terms.append(term)
            sums["l1"] += l1.item()
            sums["l2"] += l2.item() if l2 is not None else 0.0
            sums["l3"] += l3.item() if l3 is not None else 0.0
            sums["total"] += term.item()
        batch_loss = batch_terms[0]
        for term in batch_terms[1:]:
            batch_loss = batch_loss + term
        batch_loss = batch_loss * (1.0 / len(batch))
        nn.backward(batch_loss, params=self.params)
        if cfg.grad_clip:
            clip_global_norm(self.params, cfg.grad_clip)
        self.optimizer.step()
        return {k: v / len(batch) for k, v in sums.items()}

    def run_epoch(self) -> dict:
        order = self.rng.permutation(len(self.train_samples))
        sums = {"l1": 0.0, "l2": 0.0, "l3": 0.0, "total": 0.0}
        n_batches = 0
        for start in range(0, len(order), self.cfg.batch_size):
            batch = [self.train_samples[i] for i in order[start:start + self.cfg.batch_size]]
            step_means = self.train_step(batch)
            for key in sums:
                sums[key] += step_means[key]
            n_batches += 1
        return {k: v / n_batches for k, v in sums.items()}

    # -- validation ----------------------------------------------------------

    def validate_metrics(self) -> dict:
        pairs = []
        for sample in self.val_samples:
            result = infer(sample.motion, self.bundle, self.db,
                           splits={"train"}, normalized=True)
            pairs.append(EvalPair(result.final_caption, list(sample.high_captions)))
        if self.cfg.lemmatize_validation:
            pairs = [EvalPair(lemmatize(p.candidate), [lemmatize(r) for r in p.references])
                     for p in pairs]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            scores = {"bleu1": bleu(pairs, 1), "bleu4": bleu(pairs, 4),
                      "rougeL": rouge_l(pairs)}
            try:
                scores["cider"] = cider(pairs)
            except DegenerateCorpusError:
                scores["cider"] = 0.0  # too few validation pairs for IDF
        scores["avg"] = (scores["bleu1"] + scores["bleu4"]
                         + scores["rougeL"] + scores["cider"]) / 4.0
        return scores

    # -- full loop -------------------------------------------------------------

    def train(self, log_path=None, epoch_hook=None) -> "TrainResult":
        self.seed_db()
        logs: list[EpochLog] = []
        best: Checkpoint | None = None
        best_avg = -1.0
        log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
        try:
            for epoch in range(1, self.cfg.epochs + 1):
                t0 = time.perf_counter()
                losses = self.run_epoch()
                if self.cfg.variant != VARIANT_BASE:
                    self.reencode()
                scores = self.validate_metrics()
                row = EpochLog(
                    epoch=epoch, l1=losses["l1"], l2=losses["l2"], l3=losses["l3"],
                    total=losses["total"], bleu1=scores["bleu1"], bleu4=scores["bleu4"],
                    rougeL=scores["rougeL"], cider=scores["cider"],
                    avg_metric=scores["avg"], wall_time=time.perf_counter() - t0,
                )
                logs.append(row)
                if log_fh:
                    log_fh.write(json.dumps(row.to_dict()) + "\n")
                    log_fh.flush()
                if scores["avg"] > best_avg:
                    best_avg = scores["avg"]
                    best = self.bundle.snapshot(epoch, scores)
                if epoch_hook:
                    epoch_hook(self, epoch, row)
        finally:
            if log_fh:
                log_fh.close()
        assert best is not None
        if best.epoch != self.cfg.epochs:
            # roll the live models back to the selected epoch and realign the
            # database embeddings with that text encoder
            self.bundle.encoder.params.load_values(best.encoder_values)
            self.bundle.decoder.params.load_values(best.decoder_values)
            self.bundle.embedder.params.load_values(best.embedder_values)
            if self.cfg.variant != VARIANT_BASE:
                self.reencode()
        return TrainResult(best, logs, self.db)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    logs: list[EpochLog]
    db: Database


def train(dataset: Dataset, cfg: TrainConfig, log_path=None,
          epoch_hook=None) -> TrainResult:
    return Trainer(dataset, cfg).train(log_path=log_path, epoch_hook=epoch_hook)
