"""Binary checkpoint persistence for trained models.

Layout: 8 magic bytes, a little-endian u32 header length, a UTF-8 JSON header
(format version, rubric spec, configs, training log, tensor directory), then
a payload of little-endian float64 values, row-major. Tensor offsets are byte
offsets into the payload. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from reccbm.concept import ConceptClassifiers, ConceptQueryBank
from reccbm.data import RubricSpec
from reccbm.embedding import EmbeddingProviderConfig
from reccbm.latent import LatentHeadParams
from reccbm.trainer import Stage1Params, TrainConfig, TrainedModel

CHECKPOINT_MAGIC = b"RECCBM1\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _tensor_items(model: TrainedModel) -> list[tuple[str, np.ndarray]]:
    items = [
        ("queries", model.stage1.bank.queries),
        ("clf_weights", model.stage1.classifiers.weights),
        ("clf_biases", model.stage1.classifiers.biases),
        ("latent_chol", model.latent.chol),
        ("latent_log_var", model.latent.log_var),
        ("task_weights", model.latent.task_w),
        ("task_bias", model.latent.task_b),
    ]
    if model.stage1.table is not None:
        items.append(("embedding_table", model.stage1.table))
    return items


def save_checkpoint(model: TrainedModel, path) -> None:
    tensors = []
    blobs = []
    offset = 0
    for name, arr in _tensor_items(model):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "embedding": model.embed_cfg.to_dict(),
        "train": model.train_cfg.to_dict(),
        "head_mode": model.head_mode,
        "log": model.log,
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def _expected_shapes(spec: RubricSpec, embed_cfg: EmbeddingProviderConfig) -> dict:
    K, M, S, d = (
        spec.num_concepts,
        spec.max_concept_level,
        spec.max_grade,
        embed_cfg.d,
    )
    shapes = {
        "queries": (K, d),
        "clf_weights": (K, M + 1, d),
        "clf_biases": (K, M + 1),
        "latent_chol": (K, K),
        "latent_log_var": (K,),
        "task_weights": (S + 1, K),
        "task_bias": (S + 1,),
    }
    if embed_cfg.mode == "toy":
        shapes["embedding_table"] = (embed_cfg.vocab_size, d)
    return shapes


def load_checkpoint(path) -> TrainedModel:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        raw_len = f.read(4)
        if len(raw_len) < 4:
            raise CheckpointError(f"{path}: truncated before header length")
        (header_len,) = struct.unpack("<I", raw_len)
        header_bytes = f.read(header_len)
        if len(header_bytes) < header_len:
            raise CheckpointError(f"{path}: truncated header")
        header = json.loads(header_bytes.decode("utf-8"))
        payload = f.read()

    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {header.get('format_version')}")
    spec = RubricSpec.from_dict(header["spec"])
    embed_cfg = EmbeddingProviderConfig.from_dict(header["embedding"])
    train_cfg = TrainConfig.from_dict(header["train"])

    expected = _expected_shapes(spec, embed_cfg)
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        name, shape, off = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        if name not in expected:
            raise CheckpointError(f"unexpected tensor {name!r}")
        if shape != expected[name]:
            raise CheckpointError(
                f"tensor {name!r} shape mismatch: header {shape}, expected {expected[name]}"
            )
        count = int(np.prod(shape)) if shape else 1
        end = off + count * 8
        if end > len(payload):
            raise CheckpointError(f"truncated payload for tensor {name!r}")
        arrays[name] = (
            np.frombuffer(payload, dtype="<f8", count=count, offset=off)
            .reshape(shape)
            .astype(np.float64)
        )
    missing = set(expected) - set(arrays)
    if missing:
        raise CheckpointError(f"missing tensors: {sorted(missing)}")

    stage1 = Stage1Params(
        bank=ConceptQueryBank(arrays["queries"], tau=train_cfg.tau),
        classifiers=ConceptClassifiers(arrays["clf_weights"], arrays["clf_biases"]),
        table=arrays.get("embedding_table"),
    )
    latent = LatentHeadParams(
        chol=arrays["latent_chol"],
        log_var=arrays["latent_log_var"],
        task_w=arrays["task_weights"],
        task_b=arrays["task_bias"],
        eps=train_cfg.precision_eps,
    )
    return TrainedModel(
        spec=spec,
        embed_cfg=embed_cfg,
        stage1=stage1,
        latent=latent,
        train_cfg=train_cfg,
        head_mode=header.get("head_mode", "latent"),
        log=header.get("log", []),
    )
