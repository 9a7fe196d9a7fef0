"""Disjoint, class-covering training blocks plus per-learner replication sets.

The training set is dealt class by class, round-robin across blocks with
one continuing cursor, which keeps block sizes within one sample of each
other and per-class block counts within one.  Overlap between blocks is
exactly zero; shared samples enter only through the replication sets,
each drawn without replacement from the complement of its block.
"""

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import PartitionError
from .rng import derive_seed


@dataclass
class PartitionPlan:
    """Block and replication id lists with the parameters that built them."""

    blocks: list[list[str]]
    replication: list[list[str]]
    x: int
    per_class_min: int
    replication_fraction: float
    seed: int

    def to_json(self) -> str:
        doc = {
            "x": self.x,
            "per_class_min": self.per_class_min,
            "replication_fraction": self.replication_fraction,
            "seed": self.seed,
            "blocks": self.blocks,
            "replication": self.replication,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "PartitionPlan":
        doc = json.loads(text)
        known = {"x", "per_class_min", "replication_fraction", "seed", "blocks", "replication"}
        unknown = set(doc) - known
        if unknown:
            raise PartitionError(f"unknown plan keys: {sorted(unknown)}")
        try:
            return cls(
                blocks=[list(b) for b in doc["blocks"]],
                replication=[list(r) for r in doc["replication"]],
                x=int(doc["x"]),
                per_class_min=int(doc["per_class_min"]),
                replication_fraction=float(doc["replication_fraction"]),
                seed=int(doc["seed"]),
            )
        except KeyError as exc:
            raise PartitionError(f"plan document missing key {exc}") from exc


@dataclass
class PlanValidation:
    """Outcome of the four structural checks; reports, never raises."""

    disjoint_blocks: bool
    full_coverage: bool
    per_class_minimum: bool
    replication_disjoint: bool
    block_sizes: list[int]
    replication_sizes: list[int]
    per_class_counts: list[list[int]]

    @property
    def ok(self) -> bool:
        return (
            self.disjoint_blocks
            and self.full_coverage
            and self.per_class_minimum
            and self.replication_disjoint
        )


def make_partition(
    train: Dataset, x: int, m: int, rho: float, seed: int = 0
) -> PartitionPlan:
    """Split training ids into ``x`` disjoint blocks plus replication sets.

    Every block receives at least ``m`` samples of every class (requires
    ``count(class) >= m * x``); replication set ``i`` holds
    ``floor(rho * n)`` ids drawn without replacement from outside block
    ``i`` using the stream ``seed + 1 + i``.
    """
    n = len(train)
    if x < 1:
        raise PartitionError(f"x must be >= 1, got {x}")
    if x > n:
        raise PartitionError(f"x={x} exceeds training-set size {n}")
    if m < 0:
        raise PartitionError(f"m must be >= 0, got {m}")
    if not 0.0 <= rho < 1.0:
        raise PartitionError(f"replication fraction must be in [0, 1), got {rho}")

    num_classes = len(train.class_names)
    ids_by_class: list[list[str]] = [[] for _ in range(num_classes)]
    for sample in train:
        ids_by_class[sample.label].append(sample.id)
    for cls, members in enumerate(ids_by_class):
        if len(members) < m * x:
            raise PartitionError(
                f"class {train.class_names[cls]!r} has {len(members)} samples, "
                f"fewer than m*x = {m * x}"
            )

    rng = np.random.default_rng(seed)
    blocks: list[list[str]] = [[] for _ in range(x)]
    cursor = 0
    for members in ids_by_class:
        order = rng.permutation(len(members))
        for pos in order:
            blocks[cursor].append(members[pos])
            cursor = (cursor + 1) % x

    all_ids = [s.id for s in train]
    r_size = int(np.floor(rho * n))
    replication: list[list[str]] = []
    for i in range(x):
        inside = set(blocks[i])
        pool = [sid for sid in all_ids if sid not in inside]
        if r_size > len(pool):
            raise PartitionError(
                f"replication size {r_size} exceeds the {len(pool)} ids outside block {i}"
            )
        stream = np.random.default_rng(derive_seed(seed, 1 + i))
        picks = stream.choice(len(pool), size=r_size, replace=False)
        replication.append([pool[j] for j in picks])

    return PartitionPlan(
        blocks=blocks,
        replication=replication,
        x=x,
        per_class_min=m,
        replication_fraction=rho,
        seed=seed,
    )


def learner_training_set(plan: PartitionPlan, i: int, dataset: Dataset) -> Dataset:
    """Samples of block ``i`` plus its replication set, deduplicated.

    Order is block order followed by replication order.
    """
    if not 0 <= i < plan.x:
        raise IndexError(f"learner index {i} out of range for x={plan.x}")
    lookup = dataset.by_id()
    picked = []
    seen = set()
    for sid in list(plan.blocks[i]) + list(plan.replication[i]):
        if sid in seen:
            continue
        seen.add(sid)
        try:
            picked.append(lookup[sid])
        except KeyError:
            raise PartitionError(f"plan references unknown sample id {sid!r}") from None
    return Dataset(picked, dataset.class_names)


def validate_plan(plan: PartitionPlan, train: Dataset) -> PlanValidation:
    """Check disjointness, coverage, per-class minima, and R_i disjointness."""
    num_classes = len(train.class_names)
    label_of = {s.id: s.label for s in train}

    block_sets = [set(b) for b in plan.blocks]
    disjoint = all(len(b) == len(plan.blocks[i]) for i, b in enumerate(block_sets))
    union: set[str] = set()
    total = 0
    for b in block_sets:
        union |= b
        total += len(b)
    disjoint = disjoint and total == len(union)
    coverage = union == set(label_of)

    per_class_counts = []
    for b in plan.blocks:
        counts = [0] * num_classes
        for sid in b:
            label = label_of.get(sid)
            if label is not None:
                counts[label] += 1
        per_class_counts.append(counts)
    per_class_min = all(
        all(c >= plan.per_class_min for c in counts) for counts in per_class_counts
    )

    replication_disjoint = all(
        not (set(r) & block_sets[i]) and len(set(r)) == len(r)
        for i, r in enumerate(plan.replication)
    )

    return PlanValidation(
        disjoint_blocks=disjoint,
        full_coverage=coverage,
        per_class_minimum=per_class_min,
        replication_disjoint=replication_disjoint,
        block_sizes=[len(b) for b in plan.blocks],
        replication_sizes=[len(r) for r in plan.replication],
        per_class_counts=per_class_counts,
    )


def default_per_class_min(train: Dataset, x: int) -> int:
    """Default block minimum: floor(smallest class count / x)."""
    counts = train.class_counts()
    present = counts[counts > 0]
    if present.size == 0:
        return 0
    return int(np.min(present) // x)
