"""Token embeddings for grading instances.

Two providers sit behind one config: a deterministic built-in toy encoder
(hashed embedding table plus sinusoidal positions, trainable in Stage I) and a
read-only binary file of precomputed per-instance embeddings standing in for a
frozen language-model backbone.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass

import numpy as np

EMBEDDING_FILE_MAGIC = b"RECEMB1\x00"

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class TokenSequence:
    """Ordered tokens for one instance; id is carried for file-mode lookup."""

    tokens: tuple[str, ...]
    instance_id: str | None = None

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class EmbeddingProviderConfig:
    mode: str = "toy"  # "toy" | "file"
    d: int = 64
    max_len: int = 512
    vocab_size: int = 4096
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.mode not in ("toy", "file"):
            raise ValueError(f"unknown embedding mode {self.mode!r}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.mode == "toy" and self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.mode == "file" and not self.path:
            raise ValueError("file mode requires a path")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "d": self.d,
            "max_len": self.max_len,
            "vocab_size": self.vocab_size,
            "seed": self.seed,
            "path": self.path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingProviderConfig":
        return cls(**d)


def _norm_tokens(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def tokenize(
    question: str, response: str, context: str | None, max_len: int
) -> TokenSequence:
    """Lowercase, split on non-alphanumeric runs, join segments with "[sep]".

    Order is question, "[sep]", response, then "[sep]" plus context when the
    context yields at least one token. The result keeps the first max_len
    tokens.
    """
    r_tokens = _norm_tokens(response)
    if not r_tokens:
        raise ValueError("response is empty after normalization")
    tokens = _norm_tokens(question) + ["[sep]"] + r_tokens
    if context is not None:
        c_tokens = _norm_tokens(context)
        if c_tokens:
            tokens += ["[sep]"] + c_tokens
    return TokenSequence(tokens=tuple(tokens[:max_len]))


def token_indices(tokens, vocab_size: int) -> np.ndarray:
    """Hash each token into the embedding table with 64-bit FNV-1a."""
    return np.array(
        [fnv1a_64(t.encode("utf-8")) % vocab_size for t in tokens], dtype=np.int64
    )


def build_toy_table(vocab_size: int, d: int, seed: int) -> np.ndarray:
    """Embedding table of i.i.d. N(0, 1/d) entries, drawn once from the seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return rng.normal(0.0, 1.0 / np.sqrt(d), size=(vocab_size, d))


def positional_encoding(length: int, d: int) -> np.ndarray:
    """Fixed sinusoidal positions: sin/cos pairs with 10000^(2i/d) wavelengths."""
    t = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(0, d, 2, dtype=np.float64)
    ang = t / np.power(10000.0, i / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang[:, : d // 2])
    return pe


def write_embedding_file(path, d: int, items) -> None:
    """Write precomputed embeddings: magic, u32 header length, JSON header, f64 payload.

    items is an iterable of (instance_id, matrix) with matrix shaped (T, d);
    offsets in the header are byte offsets into the payload.
    """
    entries = []
    blobs = []
    offset = 0
    for instance_id, mat in items:
        mat = np.ascontiguousarray(mat, dtype="<f8")
        if mat.ndim != 2 or mat.shape[1] != d:
            raise ValueError(f"matrix for {instance_id!r} must be (T, {d})")
        entries.append(
            {"id": instance_id, "num_tokens": int(mat.shape[0]), "offset": offset}
        )
        blobs.append(mat.tobytes())
        offset += mat.nbytes
    header = json.dumps({"d": d, "entries": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(EMBEDDING_FILE_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


class EmbeddingFile:
    """Loaded precomputed-embedding container keyed by instance id."""

    def __init__(self, path):
        with open(path, "rb") as f:
            magic = f.read(len(EMBEDDING_FILE_MAGIC))
            if magic != EMBEDDING_FILE_MAGIC:
                raise ValueError(f"{path}: bad magic {magic!r}")
            (header_len,) = struct.unpack("<I", f.read(4))
            header = json.loads(f.read(header_len).decode("utf-8"))
            payload = f.read()
        self.d = int(header["d"])
        self._entries = {}
        for e in header["entries"]:
            num, off = int(e["num_tokens"]), int(e["offset"])
            end = off + num * self.d * 8
            if end > len(payload):
                raise ValueError(f"{path}: truncated payload for id {e['id']!r}")
            self._entries[e["id"]] = (num, off)
        self._payload = payload

    @property
    def ids(self):
        return tuple(self._entries)

    def get(self, instance_id: str) -> np.ndarray:
        if instance_id not in self._entries:
            raise KeyError(f"id {instance_id!r} not in embedding file")
        num, off = self._entries[instance_id]
        flat = np.frombuffer(self._payload, dtype="<f8", count=num * self.d, offset=off)
        return flat.reshape(num, self.d).astype(np.float64)


class EmbeddingProvider:
    """Maps token sequences to T x d float64 matrices, per the configured mode."""

    def __init__(self, cfg: EmbeddingProviderConfig):
        self.cfg = cfg
        if cfg.mode == "toy":
            self.table = build_toy_table(cfg.vocab_size, cfg.d, cfg.seed)
            self._file = None
        else:
            self.table = None
            self._file = EmbeddingFile(cfg.path)
            if self._file.d != cfg.d:
                raise ValueError(
                    f"embedding file has d={self._file.d}, config expects d={cfg.d}"
                )
        self._pos = positional_encoding(cfg.max_len, cfg.d)

    @property
    def trainable(self) -> bool:
        return self.cfg.mode == "toy"

    def sequence(self, instance) -> TokenSequence:
        seq = tokenize(instance.question, instance.response, instance.context, self.cfg.max_len)
        return TokenSequence(tokens=seq.tokens, instance_id=instance.id)

    def embed(self, seq: TokenSequence, table: np.ndarray | None = None) -> np.ndarray:
        """Embedding rows for one sequence; pass a table to override the toy weights."""
        if self.cfg.mode == "file":
            if seq.instance_id is None:
                raise ValueError("file mode requires a sequence with an instance id")
            H = self._file.get(seq.instance_id)
        else:
            if table is None:
                table = self.table
            idx = token_indices(seq.tokens, self.cfg.vocab_size)
            H = table[idx] + self._pos[: len(idx)]
        if not np.all(np.isfinite(H)):
            raise ValueError("non-finite embedding values")
        return H
