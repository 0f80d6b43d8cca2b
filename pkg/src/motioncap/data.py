"""Dataset ingestion, normalization, statistics, and the synthetic generator.

The synthetic generator replaces real motion-capture corpora at desk scale:
each class is a fixed program of 1-2 sinusoidal channel-group moves, every
sample carries paraphrased high-level captions and a compositional low-level
caption describing the active groups, and a per-sample pace scales the
movement amplitude. All constants below are deliberately fixed so the
acceptance numbers are stable.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .text import lemmatize_word, tokenize

STD_EPS = 1e-8
NOISE_STD = 0.05
VAL_FRACTION = 0.05
TEST_FRACTION = 0.15
TOKEN_ENV_VAR = "MOTIONCAP_API_TOKEN"


class DataError(ValueError):
    pass


@dataclass
class Sample:
    motion_id: str
    motion: np.ndarray
    high_captions: list[str]
    low_caption: str
    split: str

    @property
    def needs_expansion(self) -> bool:
        return not self.low_caption

    @property
    def primary_caption(self) -> str:
        return self.high_captions[0]


@dataclass
class Dataset:
    samples: list[Sample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]

    def by_id(self, motion_id: str) -> Sample:
        for s in self.samples:
            if s.motion_id == motion_id:
                return s
        raise DataError(f"no sample with motion_id {motion_id!r}")

    def channels(self) -> int:
        if not self.samples:
            raise DataError("empty dataset has no channel count")
        widths = {s.motion.shape[1] for s in self.samples}
        if len(widths) != 1:
            raise DataError(f"inconsistent channel counts across samples: {sorted(widths)}")
        return widths.pop()


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, motion: np.ndarray) -> np.ndarray:
        return (motion - self.mean) / np.maximum(self.std, STD_EPS)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "NormalizationStats":
        return cls(np.asarray(payload["mean"], dtype=np.float64),
                   np.asarray(payload["std"], dtype=np.float64))


def normalize(dataset: Dataset) -> NormalizationStats:
    """Zero-mean unit-std normalization; statistics come from the train
    split only and are applied in place to every split."""
    train = dataset.split("train")
    if not train:
        raise DataError("normalization needs a non-empty train split")
    dataset.channels()
    stacked = np.concatenate([s.motion for s in train], axis=0)
    stats = NormalizationStats(stacked.mean(axis=0), stacked.std(axis=0))
    for s in dataset.samples:
        s.motion = stats.apply(s.motion)
    return stats


@dataclass
class DatasetStats:
    n_words: int
    n_motions: int
    n_captions: int
    n_lemmas: int
    words_per_motion: float
    lemmas_per_motion: float

    @classmethod
    def from_counts(cls, n_words: int, n_motions: int, n_captions: int,
                    n_lemmas: int) -> "DatasetStats":
        if n_motions < 1:
            raise DataError("motion count must be positive")
        return cls(n_words, n_motions, n_captions, n_lemmas,
                   n_words / n_motions, n_lemmas / n_motions)

    def to_dict(self) -> dict:
        return {
            "n_words": self.n_words,
            "n_motions": self.n_motions,
            "n_captions": self.n_captions,
            "n_lemmas": self.n_lemmas,
            "words_per_motion": self.words_per_motion,
            "lemmas_per_motion": self.lemmas_per_motion,
        }


def stats(dataset: Dataset) -> DatasetStats:
    """Distinct word forms and lemmas over the high-level captions."""
    words: set[str] = set()
    n_captions = 0
    for s in dataset.samples:
        for caption in s.high_captions:
            n_captions += 1
            words.update(tokenize(caption))
    lemmas = {lemmatize_word(w) for w in words}
    return DatasetStats.from_counts(len(words), len(dataset.samples), n_captions, len(lemmas))


# -- synthetic generator ---------------------------------------------------

N_GROUPS = 4  # arms, legs, torso, head


@dataclass(frozen=True)
class Move:
    group: int
    kind: str  # inphase | alternating | gradient
    wave: str  # sin | cos
    clause: str


MOVES: dict[str, Move] = {
    "arms_raise": Move(0, "inphase", "sin",
                       "the arms raise overhead and lower back down"),
    "arms_side": Move(0, "gradient", "cos",
                      "the arms extend out to the sides"),
    "arms_swing": Move(0, "alternating", "sin",
                       "the arms swing back and forth at the sides"),
    "legs_jump": Move(1, "inphase", "cos",
                      "the legs jump out and back in"),
    "legs_step": Move(1, "alternating", "sin",
                      "the legs step in place one after the other"),
    "legs_bend": Move(1, "gradient", "sin",
                      "the knees bend and straighten"),
    "torso_twist": Move(2, "alternating", "sin",
                        "the torso twists from side to side"),
    "torso_bend": Move(2, "inphase", "sin",
                       "the torso bends forward and straightens"),
    "head_nod": Move(3, "inphase", "sin",
                     "the head nods up and down"),
    "head_turn": Move(3, "alternating", "cos",
                      "the head turns from side to side"),
}


@dataclass(frozen=True)
class ClassSpec:
    name: str
    phrases: tuple[str, ...]  # >= 2 paraphrase templates
    moves: tuple[tuple[str, float, float], ...]  # (move, cycles, amplitude)


CLASS_TABLE: tuple[ClassSpec, ...] = (
    ClassSpec("jumping jacks", (
        "a person does jumping jacks",
        "someone performs jumping jacks",
        "a person is doing jumping jacks",
    ), (("arms_side", 2.0, 1.0), ("legs_jump", 2.0, 1.0))),
    ClassSpec("marching in place", (
        "a person marches in place",
        "someone is marching in place",
        "a person performs a marching motion",
    ), (("arms_swing", 3.0, 0.9), ("legs_step", 3.0, 1.0))),
    ClassSpec("arm raises with steps", (
        "a person raises both arms while stepping in place",
        "someone lifts the arms and steps in place",
        "a person is raising the arms while stepping",
    ), (("arms_raise", 1.5, 1.0), ("legs_step", 1.5, 0.8))),
    ClassSpec("jumping arm raises", (
        "a person raises both arms while jumping",
        "someone lifts the arms and jumps",
        "a person is raising the arms while jumping",
    ), (("arms_raise", 2.5, 1.1), ("legs_jump", 2.5, 0.9))),
    ClassSpec("squats", (
        "a person performs squats",
        "someone is doing squats",
        "a person squats up and down",
    ), (("legs_bend", 1.0, 1.2), ("torso_bend", 1.0, 0.7))),
    ClassSpec("torso twists", (
        "a person twists the torso",
        "someone is twisting from side to side",
        "a person performs torso twists",
    ), (("torso_twist", 2.0, 1.2),)),
    ClassSpec("head nods", (
        "a person nods the head",
        "someone is nodding",
        "a person performs head nods",
    ), (("head_nod", 2.5, 1.0),)),
    ClassSpec("forward bends", (
        "a person bends forward repeatedly",
        "someone is bowing forward",
        "a person performs forward bends",
    ), (("arms_raise", 0.8, 0.6), ("torso_bend", 0.8, 1.2))),
    ClassSpec("side steps", (
        "a person steps from side to side",
        "someone is stepping sideways",
        "a person performs side steps",
    ), (("legs_step", 2.2, 1.1), ("torso_twist", 1.1, 0.6))),
    ClassSpec("arm swings", (
        "a person swings the arms",
        "someone is swinging both arms",
        "a person performs arm swings",
    ), (("arms_swing", 1.8, 1.3),)),
    ClassSpec("knee bends", (
        "a person bends the knees",
        "someone is bending the knees",
        "a person performs knee bends",
    ), (("legs_bend", 2.8, 0.9),)),
    ClassSpec("head turns", (
        "a person turns the head from side to side",
        "someone is turning the head",
        "a person performs head turns",
    ), (("head_turn", 1.6, 1.1),)),
)

PACES = ("slow", "steady", "quick")
PACE_AMP = {"slow": 0.6, "steady": 1.0, "quick": 1.5}
PACE_ADVERB = {"slow": " slowly", "steady": "", "quick": " quickly"}


def class_of_motion_id(motion_id: str) -> int:
    """Class index encoded in generated motion ids (``c03-s0017``)."""
    if not motion_id.startswith("c") or "-" not in motion_id:
        raise DataError(f"not a generated motion id: {motion_id!r}")
    return int(motion_id.split("-")[0][1:])


def _group_slice(group: int, channels: int) -> slice:
    base = channels // N_GROUPS
    lo = group * base
    hi = channels if group == N_GROUPS - 1 else (group + 1) * base
    return slice(lo, hi)


def _move_signal(move: Move, cycles: float, amp: float, frames: int,
                 width: int) -> np.ndarray:
    t = np.arange(frames)[:, None] / frames
    ch = np.arange(width)[None, :]
    phase = np.zeros((1, width))
    if move.kind == "alternating":
        phase = math.pi * (ch % 2)
    elif move.kind == "gradient":
        phase = (ch / max(width, 1)) * (math.pi / 2)
    angle = 2 * math.pi * cycles * t + phase
    wave = np.sin(angle) if move.wave == "sin" else np.cos(angle)
    return amp * wave


def _build_motion(spec: ClassSpec, pace: str, frames: int, channels: int,
                  rng: np.random.Generator) -> np.ndarray:
    motion = np.zeros((frames, channels))
    for move_name, cycles, amp in spec.moves:
        move = MOVES[move_name]
        sl = _group_slice(move.group, channels)
        width = sl.stop - sl.start
        motion[:, sl] += _move_signal(move, cycles, amp * PACE_AMP[pace], frames, width)
    motion += rng.normal(0.0, NOISE_STD, size=motion.shape)
    return motion


def _build_low_caption(spec: ClassSpec, pace: str) -> str:
    ordered = sorted(spec.moves, key=lambda m: MOVES[m[0]].group)
    body = " while ".join(MOVES[name].clause for name, _, _ in ordered)
    return f"{body} at a {pace} pace"


def split_sizes(n: int) -> tuple[int, int, int]:
    """(train, val, test) counts for the 80/5/15 proportions."""
    n_val = max(1, round(VAL_FRACTION * n)) if n >= 3 else (1 if n >= 2 else 0)
    n_test = max(1, round(TEST_FRACTION * n)) if n >= 3 else 0
    n_train = n - n_val - n_test
    return n_train, n_val, n_test


def synth_generate(n_classes: int, per_class: int, frames: int, channels: int,
                   seed: int) -> Dataset:
    """Deterministic synthetic motion-caption dataset with 80/5/15 splits."""
    if min(n_classes, per_class, frames, channels) < 1:
        raise DataError("all generator arguments must be >= 1")
    if n_classes > len(CLASS_TABLE):
        raise DataError(
            f"at most {len(CLASS_TABLE)} classes are defined, got {n_classes}"
        )
    rng = np.random.default_rng(seed)
    samples: list[Sample] = []
    index = 0
    for class_idx in range(n_classes):
        spec = CLASS_TABLE[class_idx]
        for _ in range(per_class):
            pace = PACES[rng.integers(len(PACES))]
            adverb = PACE_ADVERB[pace]
            captions = [p + adverb for p in spec.phrases]
            primary = int(rng.integers(len(captions)))
            captions[0], captions[primary] = captions[primary], captions[0]
            samples.append(Sample(
                motion_id=f"c{class_idx:02d}-s{index:04d}",
                motion=_build_motion(spec, pace, frames, channels, rng),
                high_captions=captions,
                low_caption=_build_low_caption(spec, pace),
                split="train",
            ))
            index += 1
    n_train, n_val, n_test = split_sizes(len(samples))
    order = rng.permutation(len(samples))
    for pos, sample_idx in enumerate(order):
        if pos < n_val:
            samples[sample_idx].split = "val"
        elif pos < n_val + n_test:
            samples[sample_idx].split = "test"
        else:
            samples[sample_idx].split = "train"
    return Dataset(samples)


# -- persistence ------------------------------------------------------------


def save(dataset: Dataset, path) -> None:
    """One JSON object per line per sample; floats survive round trips."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset.samples:
            frames, channels = s.motion.shape
            fh.write(json.dumps({
                "motion_id": s.motion_id,
                "split": s.split,
                "high_captions": s.high_captions,
                "low_caption": s.low_caption,
                "motion": {
                    "frames": frames,
                    "channels": channels,
                    "values": s.motion.reshape(-1).tolist(),
                },
            }) + "\n")


def load(path) -> Dataset:
    samples: list[Sample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                motion_id = row["motion_id"]
                split = row["split"]
                high_captions = list(row["high_captions"])
                low_caption = row.get("low_caption", "") or ""
                frames = int(row["motion"]["frames"])
                channels = int(row["motion"]["channels"])
                values = np.asarray(row["motion"]["values"], dtype=np.float64)
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise DataError(f"malformed dataset line {lineno}: {exc}") from exc
            if not high_captions:
                raise DataError(f"malformed dataset line {lineno}: empty high_captions")
            if values.size != frames * channels:
                raise DataError(
                    f"motion {motion_id!r}: {values.size} values for "
                    f"{frames}x{channels} motion"
                )
            samples.append(Sample(
                motion_id, values.reshape(frames, channels), high_captions,
                low_caption, split,
            ))
    return Dataset(samples)


# -- caption expansion client ------------------------------------------------


@dataclass
class ExpansionReport:
    filled: int
    failed: list[tuple[str, str]]
    network_calls: int


def _caption_key(caption: str) -> str:
    return hashlib.sha256(caption.encode("utf-8")).hexdigest()


def expand_captions(dataset: Dataset, endpoint: str, prompt_template: str,
                    timeout: float = 10.0, max_retries: int = 2,
                    cache_path=None, backoff_base: float = 1.0,
                    max_workers: int = 4) -> ExpansionReport:
    """Fill empty low-level captions by POSTing the rendered prompt template.

    Each unique high-level caption is fetched once; results are cached on
    disk keyed by caption hash, failures flag the affected samples and never
    abort the batch.
    """
    import time

    import requests

    if "{caption}" not in prompt_template:
        raise DataError("prompt template must contain a {caption} placeholder")

    cache: dict[str, str] = {}
    if cache_path and os.path.exists(cache_path):
        with open(cache_path, encoding="utf-8") as fh:
            cache = json.load(fh)

    pending = [s for s in dataset.samples if s.needs_expansion]
    by_caption: dict[str, list[Sample]] = {}
    for s in pending:
        by_caption.setdefault(s.primary_caption, []).append(s)

    headers = {"Content-Type": "application/json"}
    token = os.environ.get(TOKEN_ENV_VAR)
    if token:
        headers["Authorization"] = f"Bearer {token}"

    calls = 0
    calls_lock = threading.Lock()
    errors: dict[str, str] = {}

    def fetch(caption: str) -> None:
        nonlocal calls
        prompt = prompt_template.format(caption=caption)
        last_error = "no attempt made"
        for attempt in range(max_retries + 1):
            if attempt:
                time.sleep(backoff_base * 2 ** (attempt - 1))
            try:
                with calls_lock:
                    calls += 1
                resp = requests.post(
                    endpoint, json={"prompt": prompt}, headers=headers, timeout=timeout
                )
                if resp.status_code != 200:
                    last_error = f"HTTP {resp.status_code}"
                    continue
                body = resp.json()
                text_out = body.get("text")
                if not isinstance(text_out, str) or not text_out:
                    last_error = "malformed response: missing 'text'"
                    continue
                cache[_caption_key(caption)] = text_out
                return
            except (requests.RequestException, ValueError) as exc:
                last_error = str(exc) or type(exc).__name__
        errors[caption] = last_error

    to_fetch = [c for c in by_caption if _caption_key(c) not in cache]
    if to_fetch:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            list(pool.map(fetch, to_fetch))

    filled = 0
    failed: list[tuple[str, str]] = []
    for caption, group in by_caption.items():
        key = _caption_key(caption)
        if key in cache:
            for s in group:
                s.low_caption = cache[key]
                filled += 1
        else:
            reason = errors.get(caption, "not fetched")
            failed.extend((s.motion_id, reason) for s in group)

    if cache_path:
        with open(cache_path, "w", encoding="utf-8") as fh:
            json.dump(cache, fh, indent=1)

    return ExpansionReport(filled=filled, failed=failed, network_calls=calls)
