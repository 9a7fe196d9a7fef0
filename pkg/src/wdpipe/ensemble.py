"""Ensemble of architecturally distinct small networks with mean aggregation.

Base models train independently (their seeds and data blocks are fixed
up front), so running the jobs serially or on a thread pool produces
byte-identical ensembles.  Prediction averages the per-model softmax
outputs; the decision is the argmax of that mean with ties broken toward
the lowest class index.
"""

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .data import CLASS_NAMES, Dataset, Sample
from .errors import ShapeError, TrainingError, ModelFormatError
from .nn.network import (
    LayerSpec,
    Network,
    TrainConfig,
    conv,
    dense,
    flatten,
    max_pool,
    relu_spec,
    softmax_output,
    train_network,
)
from .partition import PartitionPlan, default_per_class_min, learner_training_set, make_partition
from .preprocess import preprocess_frame
from .rng import derive_seed
from .validation import as_frame_batch

MAGIC = b"WDPM"
FORMAT_VERSION = 1
MAX_HIDDEN_LAYERS = 7


@dataclass(frozen=True)
class ArchitectureDescriptor:
    """Named layer stack ending in Dense(num_classes) + softmax output."""

    name: str
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) < 2:
            raise ShapeError(f"{self.name}: architecture needs at least dense + softmax")
        if self.layers[-1].kind != "softmax_output":
            raise ShapeError(f"{self.name}: architecture must end with a softmax output")
        if self.layers[-2].kind != "dense":
            raise ShapeError(f"{self.name}: softmax output must follow a dense layer")
        hidden = len(self.layers) - 1
        if hidden > MAX_HIDDEN_LAYERS:
            raise ShapeError(
                f"{self.name}: {hidden} hidden layers exceeds the cap of {MAX_HIDDEN_LAYERS}"
            )

    @property
    def hidden_layer_count(self) -> int:
        return len(self.layers) - 1

    @property
    def num_classes(self) -> int:
        return self.layers[-2].units

    def to_dict(self) -> dict:
        return {"name": self.name, "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureDescriptor":
        unknown = set(d) - {"name", "layers"}
        if unknown:
            raise ShapeError(f"unknown architecture keys: {sorted(unknown)}")
        return cls(name=d["name"], layers=tuple(LayerSpec.from_dict(l) for l in d["layers"]))


def _catalog(num_classes: int) -> list[ArchitectureDescriptor]:
    mk = ArchitectureDescriptor
    out = dense(num_classes)
    return [
        mk("conv8k3-pool4-fc32", (
            conv(8, 3, 1, 1), relu_spec(), max_pool(4, 4), flatten(),
            dense(32), relu_spec(), out, softmax_output())),
        mk("conv16k3-pool4-fc32", (
            conv(16, 3, 1, 1), relu_spec(), max_pool(4, 4), flatten(),
            dense(32), relu_spec(), out, softmax_output())),
        mk("conv4k5-pool4-fc64", (
            conv(4, 5, 1, 2), relu_spec(), max_pool(4, 4), flatten(),
            dense(64), relu_spec(), out, softmax_output())),
        mk("conv8k5s2-pool2-fc32", (
            conv(8, 5, 2, 2), relu_spec(), max_pool(2, 2), flatten(),
            dense(32), relu_spec(), out, softmax_output())),
        mk("conv4k3-pool4-fc64", (
            conv(4, 3, 1, 1), relu_spec(), max_pool(4, 4), flatten(),
            dense(64), relu_spec(), out, softmax_output())),
        mk("conv16k5s2-pool2-fc32", (
            conv(16, 5, 2, 2), relu_spec(), max_pool(2, 2), flatten(),
            dense(32), relu_spec(), out, softmax_output())),
        mk("conv8k3s2-pool2-fc64", (
            conv(8, 3, 2, 1), relu_spec(), max_pool(2, 2), flatten(),
            dense(64), relu_spec(), out, softmax_output())),
        mk("pool2-conv8k5-fc32", (
            max_pool(2, 2), conv(8, 5, 1, 2), relu_spec(), flatten(),
            dense(32), relu_spec(), out, softmax_output())),
    ]


def default_architectures(
    n: int = 5, num_classes: int = len(CLASS_NAMES), input_size: int = 32
) -> list[ArchitectureDescriptor]:
    """First ``n`` descriptors of the fixed catalog, all pairwise distinct.

    Each entry is verified to build at the requested input size.
    """
    catalog = _catalog(num_classes)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if n > len(catalog):
        raise ValueError(f"n={n} exceeds the catalog size of {len(catalog)}")
    chosen = catalog[:n]
    for descriptor in chosen:
        Network(descriptor.layers, (1, input_size, input_size), seed=0)
    return chosen


@dataclass(frozen=True)
class TrainMeta:
    block_index: int
    final_loss: float
    config: Optional[TrainConfig] = None


@dataclass
class BaseModel:
    """One trained (or freshly initialized) member of the ensemble."""

    descriptor: ArchitectureDescriptor
    network: Network
    train_meta: Optional[TrainMeta] = None

    @property
    def seed(self) -> int:
        return self.network.seed


@dataclass
class Ensemble:
    models: list[BaseModel]
    class_names: tuple[str, ...]
    input_size: int

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        if not self.models:
            raise ValueError("ensemble needs at least one model")
        names = [m.descriptor.name for m in self.models]
        if len(set(names)) != len(names):
            raise ValueError(f"descriptor names must be pairwise distinct, got {names}")
        layer_lists = [m.descriptor.layers for m in self.models]
        if len(set(layer_lists)) != len(layer_lists):
            raise ValueError("two descriptors share an identical layer list")
        expected = (1, self.input_size, self.input_size)
        for m in self.models:
            if m.network.input_shape != expected:
                raise ShapeError(
                    f"model {m.descriptor.name!r} expects input {m.network.input_shape}, "
                    f"ensemble is configured for {expected}"
                )
            if m.network.num_classes != len(self.class_names):
                raise ShapeError(
                    f"model {m.descriptor.name!r} produces {m.network.num_classes} classes, "
                    f"expected {len(self.class_names)}"
                )

    @property
    def n(self) -> int:
        return len(self.models)


@dataclass(frozen=True)
class Detection:
    """Outcome of running one frame through the full pipeline."""

    weapon_present: bool
    predicted_class: str
    confidence: float
    class_index: int

    def to_dict(self) -> dict:
        return {
            "weapon_present": self.weapon_present,
            "predicted_class": self.predicted_class,
            "confidence": self.confidence,
            "class_index": self.class_index,
        }


def init_ensemble(
    descriptors, class_names=CLASS_NAMES, input_size: int = 32, seed: int = 0
) -> Ensemble:
    """Fresh-initialized ensemble (no training); model i uses seed + i."""
    models = [
        BaseModel(
            descriptor=d,
            network=Network(d.layers, (1, input_size, input_size), seed=derive_seed(seed, i)),
        )
        for i, d in enumerate(descriptors)
    ]
    return Ensemble(models=models, class_names=class_names, input_size=input_size)


def _stack_samples(samples: Dataset) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.image for s in samples])
    y = samples.labels()
    return x, y


def train_base_model(
    descriptor: ArchitectureDescriptor,
    samples: Dataset,
    config: TrainConfig,
    block_index: int = 0,
) -> BaseModel:
    """Train one base model on already-preprocessed samples."""
    if len(samples) == 0:
        raise ValueError("cannot train on an empty sample set")
    x, y = _stack_samples(samples)
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != x.shape[3]:
        raise ShapeError(f"expected model-ready (1, s, s) images, got batch shape {x.shape}")
    input_size = x.shape[2]
    network = Network(descriptor.layers, (1, input_size, input_size), seed=config.seed)
    final_loss = train_network(network, x, y, config)
    return BaseModel(
        descriptor=descriptor,
        network=network,
        train_meta=TrainMeta(block_index=block_index, final_loss=final_loss, config=config),
    )


def train_ensemble(
    plan: PartitionPlan,
    descriptors,
    dataset: Dataset,
    config: TrainConfig,
    max_workers: Optional[int] = None,
) -> Ensemble:
    """Train model i on block i (plus replication) with seed ``config.seed + i``.

    Jobs share nothing, so ``max_workers`` only changes wall-clock time:
    the returned ensemble is identical whether training runs serially
    (``None``/1) or on a thread pool.
    """
    descriptors = list(descriptors)
    if len(descriptors) != plan.x:
        raise ValueError(f"{len(descriptors)} descriptors for a plan with x={plan.x}")
    subsets = [learner_training_set(plan, i, dataset) for i in range(plan.x)]
    input_size = subsets[0].samples[0].image.shape[-1] if subsets[0].samples else 0

    def job(i: int) -> BaseModel:
        cfg = replace(config, seed=derive_seed(config.seed, i))
        try:
            return train_base_model(descriptors[i], subsets[i], cfg, block_index=i)
        except TrainingError as exc:
            raise TrainingError(f"model {i} ({descriptors[i].name}): {exc}") from exc

    if max_workers is None or max_workers <= 1:
        models = [job(i) for i in range(plan.x)]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            models = list(pool.map(job, range(plan.x)))
    return Ensemble(models=models, class_names=dataset.class_names, input_size=input_size)


def mean_aggregate(prob_vectors) -> np.ndarray:
    """Mean of per-model probability vectors: the ensemble output rule."""
    stack = np.asarray(prob_vectors, dtype=np.float64)
    if stack.ndim != 2:
        raise ShapeError(f"expected a stack of probability vectors, got shape {stack.shape}")
    return stack.mean(axis=0)


def predict_proba(ensemble: Ensemble, model_ready_input: np.ndarray) -> np.ndarray:
    """Ensemble class probabilities for one model-ready (1, s, s) frame."""
    expected = (1, ensemble.input_size, ensemble.input_size)
    if model_ready_input.shape != expected:
        raise ShapeError(f"expected input of shape {expected}, got {model_ready_input.shape}")
    return mean_aggregate([m.network.predict_proba(model_ready_input) for m in ensemble.models])


def decide(probs: np.ndarray, class_names) -> Detection:
    """Argmax of the mean vector; ties break toward the lowest class index."""
    idx = int(np.argmax(probs))
    name = class_names[idx]
    return Detection(
        weapon_present=name != "none",
        predicted_class=name,
        confidence=float(probs[idx]),
        class_index=idx,
    )


def detect(ensemble: Ensemble, raw_frame) -> Detection:
    """Preprocess a raw frame, aggregate model outputs, and decide."""
    prepared = preprocess_frame(raw_frame, ensemble.input_size)
    probs = predict_proba(ensemble, prepared.image)
    return decide(probs, ensemble.class_names)


# --------------------------------------------------------------------------
# Persistence: magic 'WDPM', u32 LE version, u64 LE header length, UTF-8
# JSON header, then float64 LE parameter blobs (models in index order,
# layers in order, row-major).
# --------------------------------------------------------------------------


def serialize_ensemble(ensemble: Ensemble) -> bytes:
    header = {
        "class_names": list(ensemble.class_names),
        "input_size": ensemble.input_size,
        "n": ensemble.n,
        "models": [
            {
                "architecture": m.descriptor.to_dict(),
                "seed": m.seed,
                "block_index": m.train_meta.block_index if m.train_meta else None,
                "final_loss": m.train_meta.final_loss if m.train_meta else None,
                "layer_parameter_counts": m.network.layer_parameter_counts(),
            }
            for m in ensemble.models
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blobs = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for m in ensemble.models
        for arr in m.network.parameter_arrays()
    )
    return MAGIC + struct.pack("<I", FORMAT_VERSION) + struct.pack("<Q", len(header_bytes)) + header_bytes + blobs


def deserialize_ensemble(blob: bytes) -> Ensemble:
    if len(blob) < 16:
        raise ModelFormatError("truncated model: shorter than the fixed preamble")
    if blob[:4] != MAGIC:
        raise ModelFormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + header_len:
        raise ModelFormatError("truncated model: header extends past end of data")
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt header: {exc}") from exc

    try:
        class_names = tuple(header["class_names"])
        input_size = int(header["input_size"])
        model_entries = header["models"]
        declared_n = int(header["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed header: {exc}") from exc
    if declared_n != len(model_entries):
        raise ModelFormatError(
            f"header declares n={declared_n} but lists {len(model_entries)} models"
        )

    offset = 16 + header_len
    models = []
    for entry in model_entries:
        try:
            descriptor = ArchitectureDescriptor.from_dict(entry["architecture"])
            seed = int(entry["seed"])
            declared_counts = list(entry["layer_parameter_counts"])
        except (KeyError, TypeError, ValueError, ShapeError) as exc:
            raise ModelFormatError(f"malformed model entry: {exc}") from exc
        network = Network(descriptor.layers, (1, input_size, input_size), seed=seed)
        if network.layer_parameter_counts() != declared_counts:
            raise ModelFormatError(
                f"model {descriptor.name!r}: parameter counts {declared_counts} do not "
                f"match the architecture ({network.layer_parameter_counts()})"
            )
        arrays = []
        for template in network.parameter_arrays():
            nbytes = template.size * 8
            chunk = blob[offset : offset + nbytes]
            if len(chunk) != nbytes:
                raise ModelFormatError("truncated model: parameter blob ends early")
            arrays.append(np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(template.shape))
            offset += nbytes
        network.set_parameter_arrays(arrays)
        meta = None
        if entry.get("block_index") is not None and entry.get("final_loss") is not None:
            meta = TrainMeta(
                block_index=int(entry["block_index"]),
                final_loss=float(entry["final_loss"]),
            )
        models.append(BaseModel(descriptor=descriptor, network=network, train_meta=meta))
    if offset != len(blob):
        raise ModelFormatError(f"{len(blob) - offset} trailing bytes after parameter blobs")
    return Ensemble(models=models, class_names=class_names, input_size=input_size)


def save_ensemble(ensemble: Ensemble, path) -> None:
    Path(path).write_bytes(serialize_ensemble(ensemble))


def load_ensemble(path) -> Ensemble:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ModelFormatError(f"{path}: cannot read model file ({exc})") from exc
    return deserialize_ensemble(blob)


class EnsembleWeaponDetector(ClassifierMixin, BaseEstimator):
    """sklearn-style facade: fit partitions the data and trains the ensemble.

    ``X`` is a sequence (or 4-d array) of raw channels-first frames with
    values in [0, 255]; ``y`` holds integer class labels.  ``predict``
    returns class indices, ``predict_proba`` the mean probability rows.
    """

    def __init__(
        self,
        n_models: int = 5,
        input_size: int = 32,
        epochs: int = 10,
        batch_size: int = 32,
        learning_rate: float = 0.05,
        replication_fraction: float = 0.10,
        per_class_min: Optional[int] = None,
        seed: int = 0,
        n_jobs: Optional[int] = None,
        class_names: tuple[str, ...] = CLASS_NAMES,
    ):
        self.n_models = n_models
        self.input_size = input_size
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.replication_fraction = replication_fraction
        self.per_class_min = per_class_min
        self.seed = seed
        self.n_jobs = n_jobs
        self.class_names = class_names

    def fit(self, X, y):
        frames = as_frame_batch(X)
        labels = np.asarray(y, dtype=np.int64)
        if labels.ndim != 1 or len(frames) != labels.shape[0]:
            raise ValueError(f"X has {len(frames)} frames but y has shape {labels.shape}")
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= len(self.class_names):
            raise ValueError(f"labels must lie in [0, {len(self.class_names)})")
        samples = [
            Sample(
                id=f"fit-{i:06d}",
                image=preprocess_frame(frame, self.input_size).image,
                label=int(label),
            )
            for i, (frame, label) in enumerate(zip(frames, labels))
        ]
        dataset = Dataset(samples, tuple(self.class_names))
        m = (
            self.per_class_min
            if self.per_class_min is not None
            else default_per_class_min(dataset, self.n_models)
        )
        plan = make_partition(
            dataset, x=self.n_models, m=m, rho=self.replication_fraction, seed=self.seed
        )
        descriptors = default_architectures(
            self.n_models, num_classes=len(self.class_names), input_size=self.input_size
        )
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
        )
        self.ensemble_ = train_ensemble(
            plan, descriptors, dataset, config, max_workers=self.n_jobs
        )
        self.plan_ = plan
        self.classes_ = np.arange(len(self.class_names))
        return self

    def _check_fitted(self):
        if not hasattr(self, "ensemble_"):
            raise ValueError("this detector is not fitted yet; call fit first")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        frames = as_frame_batch(X)
        rows = []
        for frame in frames:
            prepared = preprocess_frame(frame, self.input_size)
            rows.append(predict_proba(self.ensemble_, prepared.image))
        return np.stack(rows)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)
