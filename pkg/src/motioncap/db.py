"""Dynamic caption database with linear-scan top-k cosine retrieval.

Entries pair a low-level caption's embedding with its high-level caption;
embeddings are refreshed from the stored captions whenever the text encoder
moves (end of each training epoch, or at enrichment time).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"HCDB"
FORMAT_VERSION = 1

SPLIT_TRAIN = "train"
SPLIT_VAL = "val"
SPLIT_EXTERNAL = "external"
VALID_SPLITS = {SPLIT_TRAIN, SPLIT_VAL, SPLIT_EXTERNAL}


class DatabaseError(ValueError):
    pass


class DatabaseFormatError(DatabaseError):
    pass


@dataclass
class DbEntry:
    id: int
    motion_id: str
    high_caption: str
    low_caption: str
    embedding: np.ndarray
    split: str


@dataclass
class RetrievalResult:
    """Ranked (high_caption, score, entry_id) triples, descending score."""

    items: list[tuple[str, float, int]]
    clamped: bool = False

    def captions(self) -> list[str]:
        return [c for c, _, _ in self.items]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


@dataclass
class Database:
    width: int
    entries: list[DbEntry] = field(default_factory=list)
    zero_norm_hits: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def insert(self, motion_id: str, high_caption: str, low_caption: str,
               embedding: np.ndarray, split: str = SPLIT_TRAIN) -> int:
        if not low_caption:
            raise DatabaseError("low_caption must be non-empty")
        if split not in VALID_SPLITS:
            raise DatabaseError(f"unknown split tag: {split!r}")
        embedding = np.asarray(embedding, dtype=np.float64)
        if embedding.shape != (self.width,):
            raise DatabaseError(
                f"embedding width {embedding.shape} does not match database width {self.width}"
            )
        entry_id = len(self.entries)
        self.entries.append(
            DbEntry(entry_id, motion_id, high_caption, low_caption, embedding.copy(), split)
        )
        return entry_id

    def topk(self, query: np.ndarray, k: int, exclude_motion_id: str | None = None,
             splits: set[str] | None = None) -> RetrievalResult:
        """Linear cosine scan; ties broken by smaller entry id; zero-norm
        vectors score -inf and are tallied in ``zero_norm_hits``."""
        if k < 1:
            raise DatabaseError("k must be >= 1")
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.width,):
            raise DatabaseError(
                f"query width {query.shape} does not match database width {self.width}"
            )
        qnorm = float(np.linalg.norm(query))
        scored: list[tuple[float, int]] = []
        for entry in self.entries:
            if splits is not None and entry.split not in splits:
                continue
            if exclude_motion_id is not None and entry.motion_id == exclude_motion_id:
                continue
            enorm = float(np.linalg.norm(entry.embedding))
            if qnorm == 0.0 or enorm == 0.0:
                self.zero_norm_hits += 1
                scored.append((float("-inf"), entry.id))
                continue
            scored.append((float(np.dot(entry.embedding, query)) / (enorm * qnorm), entry.id))
        scored.sort(key=lambda pair: (-pair[0], pair[1]))
        top = scored[:k]
        return RetrievalResult(
            items=[(self.entries[i].high_caption, s, i) for s, i in top],
            clamped=len(scored) < k,
        )

    def reencode_all(self, embed_fn) -> int:
        """Recompute every embedding from its stored low-level caption."""
        for entry in self.entries:
            fresh = np.asarray(embed_fn(entry.low_caption), dtype=np.float64)
            if fresh.shape != (self.width,):
                raise DatabaseError(
                    f"re-encoded width {fresh.shape} does not match database width {self.width}"
                )
            entry.embedding = fresh
        return len(self.entries)

    def enrich(self, rows) -> int:
        """Append (motion_id, high, low, embedding, split) rows; returns new size."""
        for motion_id, high, low, embedding, split in rows:
            self.insert(motion_id, high, low, embedding, split)
        return len(self.entries)

    def distinct_motion_ids(self) -> set[str]:
        return {e.motion_id for e in self.entries}

    def splits_present(self) -> set[str]:
        return {e.split for e in self.entries}

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", FORMAT_VERSION))
            fh.write(struct.pack("<Q", len(self.entries)))
            fh.write(struct.pack("<Q", self.width))
            for e in self.entries:
                fh.write(struct.pack("<Q", e.id))
                for text_field in (e.motion_id, e.high_caption, e.low_caption, e.split):
                    blob = text_field.encode("utf-8")
                    fh.write(struct.pack("<I", len(blob)))
                    fh.write(blob)
                fh.write(e.embedding.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Database":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != MAGIC:
            raise DatabaseFormatError(f"bad magic {data[:4]!r}; expected {MAGIC!r}")
        offset = 4
        try:
            (version,) = struct.unpack_from("<I", data, offset)
            offset += 4
            if version != FORMAT_VERSION:
                raise DatabaseFormatError(
                    f"unsupported format version {version}; expected {FORMAT_VERSION}"
                )
            count, width = struct.unpack_from("<QQ", data, offset)
            offset += 16
            entries: list[DbEntry] = []
            for _ in range(count):
                (entry_id,) = struct.unpack_from("<Q", data, offset)
                offset += 8
                texts = []
                for _ in range(4):
                    (n,) = struct.unpack_from("<I", data, offset)
                    offset += 4
                    if offset + n > len(data):
                        raise DatabaseFormatError("truncated string block")
                    texts.append(data[offset:offset + n].decode("utf-8"))
                    offset += n
                end = offset + 8 * width
                if end > len(data):
                    raise DatabaseFormatError("truncated embedding block")
                emb = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64)
                offset = end
                entries.append(DbEntry(entry_id, *texts[:3], emb, texts[3]))
        except struct.error as exc:
            raise DatabaseFormatError(f"truncated database file: {exc}") from exc
        return cls(width=int(width), entries=entries)

    def export_json(self, path) -> None:
        rows = [
            {
                "id": e.id,
                "motion_id": e.motion_id,
                "high_caption": e.high_caption,
                "low_caption": e.low_caption,
                "split": e.split,
                "embedding": e.embedding.tolist(),
            }
            for e in self.entries
        ]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"width": self.width, "entries": rows}, fh, indent=1)
