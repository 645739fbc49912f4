"""Grading data model: rubric shapes, labeled instances, splits, synthetic corpora.

A grading task is described by a rubric with K named concepts, each scored on
an ordinal scale 0..M, and an overall grade on 0..S. Datasets are stored as
line-delimited JSON; rubric files as a single JSON object.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

logger = logging.getLogger("reccbm.data")

SPLIT_NAMES = ("train", "dev", "test")

# Filler vocabulary for synthetic responses; draws are seeded, the pool is fixed.
FILLER_POOL = (
    "the a an of to in on for with and or but so as at by from into over "
    "under about after before between during through against along among "
    "around behind below beside beyond down inside near off outside past "
    "since toward until upon within while yet nor per via"
).split()
assert len(FILLER_POOL) == 50, len(FILLER_POOL)


class DataFormatError(ValueError):
    """Raised on malformed dataset or rubric files; carries the line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class RubricSpec:
    """Shape of a grading task: K concepts on levels 0..M, grades 0..S."""

    num_concepts: int
    max_concept_level: int
    max_grade: int
    concept_names: tuple[str, ...]

    def __post_init__(self):
        if self.num_concepts < 1:
            raise ValueError("num_concepts must be >= 1")
        if self.max_concept_level < 1:
            raise ValueError("max_concept_level must be >= 1")
        if self.max_grade < 1:
            raise ValueError("max_grade must be >= 1")
        names = tuple(self.concept_names)
        object.__setattr__(self, "concept_names", names)
        if len(names) != self.num_concepts:
            raise ValueError(
                f"expected {self.num_concepts} concept names, got {len(names)}"
            )
        if any(not n for n in names):
            raise ValueError("concept names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError("concept names must be distinct")

    def to_dict(self) -> dict:
        return {
            "num_concepts": self.num_concepts,
            "max_concept_level": self.max_concept_level,
            "max_grade": self.max_grade,
            "concept_names": list(self.concept_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RubricSpec":
        try:
            return cls(
                num_concepts=int(d["num_concepts"]),
                max_concept_level=int(d["max_concept_level"]),
                max_grade=int(d["max_grade"]),
                concept_names=tuple(d["concept_names"]),
            )
        except KeyError as e:
            raise DataFormatError(f"rubric spec missing key {e}") from e


@dataclass(frozen=True)
class GradingInstance:
    """One labeled example: text fields plus per-concept levels and a grade."""

    id: str
    question: str
    response: str
    context: str | None
    concept_labels: tuple[int, ...]
    grade: int

    def __post_init__(self):
        object.__setattr__(self, "concept_labels", tuple(int(c) for c in self.concept_labels))

    def validate(self, spec: RubricSpec, line: int | None = None) -> None:
        if not self.id:
            raise DataFormatError("empty id", line)
        if len(self.concept_labels) != spec.num_concepts:
            raise DataFormatError(
                f"instance {self.id!r}: expected {spec.num_concepts} concept labels, "
                f"got {len(self.concept_labels)}",
                line,
            )
        for k, c in enumerate(self.concept_labels):
            if not 0 <= c <= spec.max_concept_level:
                raise DataFormatError(
                    f"instance {self.id!r}: concept {k} label {c} outside "
                    f"[0, {spec.max_concept_level}]",
                    line,
                )
        if not 0 <= self.grade <= spec.max_grade:
            raise DataFormatError(
                f"instance {self.id!r}: grade {self.grade} outside [0, {spec.max_grade}]",
                line,
            )


@dataclass(frozen=True)
class Dataset:
    """Ordered instances plus (once assigned) a partition into train/dev/test."""

    spec: RubricSpec
    instances: tuple[GradingInstance, ...]
    splits: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise DataFormatError(f"duplicate id {dup!r}")
        for sid, name in self.splits.items():
            if name not in SPLIT_NAMES:
                raise DataFormatError(f"unknown split {name!r} for id {sid!r}")

    def __len__(self) -> int:
        return len(self.instances)

    def split(self, name: str) -> tuple[GradingInstance, ...]:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}")
        return tuple(inst for inst in self.instances if self.splits.get(inst.id) == name)

    def by_id(self, instance_id: str) -> GradingInstance:
        for inst in self.instances:
            if inst.id == instance_id:
                return inst
        raise KeyError(instance_id)


def load_spec(path) -> RubricSpec:
    with open(path, encoding="utf-8") as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"invalid rubric spec JSON: {e}") from e
    return RubricSpec.from_dict(d)


def save_spec(spec: RubricSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(spec.to_dict(), f, indent=2)
        f.write("\n")


def load_dataset(path, spec_path=None, spec: RubricSpec | None = None) -> Dataset:
    """Read a line-delimited JSON dataset, validating every record against the rubric.

    Each line holds one object with keys id, question, response, context
    (nullable), concepts, grade, and optionally split. Raises DataFormatError
    naming the offending line on any malformed record.
    """
    if spec is None:
        if spec_path is None:
            raise ValueError("either spec or spec_path is required")
        spec = load_spec(spec_path)
    instances: list[GradingInstance] = []
    splits: dict[str, str] = {}
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"invalid JSON: {e.msg}", lineno) from e
            if not isinstance(rec, dict):
                raise DataFormatError("record is not a JSON object", lineno)
            try:
                inst = GradingInstance(
                    id=str(rec["id"]),
                    question=str(rec["question"]),
                    response=str(rec["response"]),
                    context=None if rec.get("context") is None else str(rec["context"]),
                    concept_labels=tuple(rec["concepts"]),
                    grade=int(rec["grade"]),
                )
            except KeyError as e:
                raise DataFormatError(f"missing key {e}", lineno) from e
            except (TypeError, ValueError) as e:
                raise DataFormatError(str(e), lineno) from e
            inst.validate(spec, line=lineno)
            if inst.id in seen:
                raise DataFormatError(f"duplicate id {inst.id!r}", lineno)
            seen.add(inst.id)
            if "split" in rec and rec["split"] is not None:
                if rec["split"] not in SPLIT_NAMES:
                    raise DataFormatError(f"unknown split {rec['split']!r}", lineno)
                splits[inst.id] = rec["split"]
            instances.append(inst)
    if not instances:
        logger.warning("dataset %s contains no instances", path)
    return Dataset(spec=spec, instances=tuple(instances), splits=splits)


def save_dataset(dataset: Dataset, path) -> None:
    """Write the dataset as line-delimited JSON; split keys included if assigned."""
    with open(path, "w", encoding="utf-8") as f:
        for inst in dataset.instances:
            rec = {
                "id": inst.id,
                "question": inst.question,
                "response": inst.response,
                "context": inst.context,
                "concepts": list(inst.concept_labels),
                "grade": inst.grade,
            }
            if inst.id in dataset.splits:
                rec["split"] = dataset.splits[inst.id]
            f.write(json.dumps(rec, ensure_ascii=False))
            f.write("\n")


def split_sizes(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Floor each split size, then hand leftover instances to train, then dev."""
    if any(r < 0 for r in ratios):
        raise ValueError("split ratios must be non-negative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
    sizes = [int(np.floor(n * r)) for r in ratios]
    leftover = n - sum(sizes)
    for i in range(leftover):
        sizes[i % 2] += 1  # train first, then dev
    return tuple(sizes)


def assign_splits(
    dataset: Dataset, ratios: tuple[float, float, float], seed: int
) -> Dataset:
    """Shuffle instances with a seeded generator and cut by cumulative ratio."""
    n = len(dataset.instances)
    n_train, n_dev, n_test = split_sizes(n, ratios)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = rng.permutation(n)
    splits: dict[str, str] = {}
    for pos, idx in enumerate(order):
        if pos < n_train:
            name = "train"
        elif pos < n_train + n_dev:
            name = "dev"
        else:
            name = "test"
        splits[dataset.instances[idx].id] = name
    return Dataset(spec=dataset.spec, instances=dataset.instances, splits=splits)


def generate_synthetic(
    spec: RubricSpec,
    n: int,
    latent_correlation: np.ndarray,
    noise_sd: float,
    seed: int,
) -> Dataset:
    """Sample a desk-scale corpus whose responses carry recoverable concept evidence.

    Latent vectors are drawn from N(0, latent_correlation); each coordinate is
    binned into M+1 equal-probability levels via standard-normal quantiles. The
    grade is a noisy rounding of the mean normalized level. The response text
    plants, per concept k at level c, the token "c{k}lvl{c}" repeated c+1
    times, with 4 filler tokens after each concept block.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    K, M, S = spec.num_concepts, spec.max_concept_level, spec.max_grade
    corr = np.asarray(latent_correlation, dtype=np.float64)
    if corr.shape != (K, K):
        raise ValueError(f"latent_correlation must be {K}x{K}, got {corr.shape}")
    if not np.allclose(corr, corr.T, atol=1e-10):
        raise ValueError("latent_correlation must be symmetric")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-10):
        raise ValueError("latent_correlation must have unit diagonal")
    try:
        chol = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError as e:
        raise ValueError("latent_correlation is not positive definite") from e

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    z = rng.standard_normal((n, K)) @ chol.T
    eps = rng.normal(0.0, noise_sd, size=n) if noise_sd > 0 else np.zeros(n)

    # Equal-probability level cuts: Phi^{-1}(i/(M+1)), i = 1..M.
    cuts = norm.ppf(np.arange(1, M + 1) / (M + 1))
    labels = np.digitize(z, cuts)  # (n, K) ints in 0..M

    instances = []
    for i in range(n):
        c = labels[i]
        tokens: list[str] = []
        for k in range(K):
            tokens.extend([f"c{k}lvl{c[k]}"] * (int(c[k]) + 1))
            tokens.extend(FILLER_POOL[j] for j in rng.integers(0, len(FILLER_POOL), 4))
        raw = S * float(np.mean(c / M)) + float(eps[i])
        grade = int(np.clip(np.floor(raw + 0.5), 0, S))
        instances.append(
            GradingInstance(
                id=f"syn-{i:05d}",
                question="rate each concept",
                response=" ".join(tokens),
                context=None,
                concept_labels=tuple(int(v) for v in c),
                grade=grade,
            )
        )
    return Dataset(spec=spec, instances=tuple(instances))
