"""Local multinomial classifier: softmax regression over hist-pool features.

Training minimizes L2-regularized softmax cross-entropy

    L(W, b) = -(1/n) sum_i log p(y_i | x_i) + (l2/2) * ||W||_F^2

by mini-batch gradient descent from a zero initialization. All randomness
(the per-epoch shuffle) flows from the explicit seed, features are extracted
in sample-id order, and accumulations use numpy's fixed row-major reductions,
so a (snapshot, seed, hyper) triple reproduces bit-identical weights.

Models are a local-only artifact: they are written to disk by their owning
device and never travel through the sync server.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import ReplicatedProject, Sample, Split
from .errors import InsufficientData, MalformedOp
from .features import EXTRACTOR_ID, FEATURE_DIM, extract_features
from .ids import DeviceId, LabelId
from .image import ImageBlob

MODEL_FORMAT = "coml-model-v1"


@dataclass(frozen=True)
class Hyperparams:
    lr: float = 0.1
    epochs: int = 50
    batch: int | None = 32  # None = full-batch gradient descent
    l2: float = 1e-4


DEFAULT_HYPER = Hyperparams()


@dataclass
class TrainedModel:
    version: int
    device: DeviceId
    label_order: list[LabelId]  # live labels with >=1 live training sample, sorted
    W: np.ndarray  # (num_labels, FEATURE_DIM)
    b: np.ndarray  # (num_labels,)
    extractor_id: str = EXTRACTOR_ID
    trained_at: int = 0
    train_sample_count: int = 0
    hyper: Hyperparams = field(default_factory=Hyperparams)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, max-shifted for stability; 1-D input allowed."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grads(
    W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy + ridge penalty on W (biases unregularized)."""
    n = X.shape[0]
    probs = softmax(X @ W.T + b)
    ce = -np.log(probs[np.arange(n), y]).mean()
    loss = ce + 0.5 * l2 * float((W * W).sum())
    dlogits = probs
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    dW = dlogits.T @ X + l2 * W
    db = dlogits.sum(axis=0)
    return float(loss), dW, db


def trainable_labels(project: ReplicatedProject) -> list[LabelId]:
    """Live labels with at least one live training sample, in id order."""
    with_data = {s.label for s in project.live_samples() if s.split is Split.TRAINING}
    return sorted(with_data)


def training_samples(project: ReplicatedProject) -> list[Sample]:
    return sorted(
        (s for s in project.live_samples() if s.split is Split.TRAINING),
        key=lambda s: s.id,
    )


def train(
    project: ReplicatedProject,
    blobs,
    seed: int,
    hyper: Hyperparams = DEFAULT_HYPER,
    device: DeviceId = "",
    version: int = 1,
    trained_at: int = 0,
) -> TrainedModel:
    """Fit a model on the snapshot's live training data.

    ``blobs`` maps digest -> ImageBlob for every live training sample.
    """
    label_order = trainable_labels(project)
    if len(label_order) < 2:
        raise InsufficientData(f"need >=2 labels with live training samples, have {len(label_order)}")
    label_index = {label: i for i, label in enumerate(label_order)}

    samples = training_samples(project)
    X = np.stack([extract_features(blobs[s.blob]) for s in samples])
    y = np.array([label_index[s.label] for s in samples], dtype=np.int64)

    k, n = len(label_order), len(samples)
    W = np.zeros((k, FEATURE_DIM), dtype=np.float64)
    b = np.zeros(k, dtype=np.float64)
    rng = np.random.default_rng(seed)

    for _ in range(hyper.epochs):
        if hyper.batch is None:
            _, dW, db = loss_and_grads(W, b, X, y, hyper.l2)
            W -= hyper.lr * dW
            b -= hyper.lr * db
            continue
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch):
            idx = order[start : start + hyper.batch]
            _, dW, db = loss_and_grads(W, b, X[idx], y[idx], hyper.l2)
            W -= hyper.lr * dW
            b -= hyper.lr * db

    return TrainedModel(
        version=version,
        device=device,
        label_order=label_order,
        W=W,
        b=b,
        trained_at=trained_at,
        train_sample_count=n,
        hyper=hyper,
    )


def classify(model: TrainedModel, blob: ImageBlob) -> np.ndarray:
    """Confidence vector aligned with model.label_order (sums to 1).

    Top-1 is argmax; numpy breaks ties by the first (lowest label_order
    position) maximum.
    """
    if model.extractor_id != EXTRACTOR_ID:
        raise MalformedOp(f"model wants extractor {model.extractor_id!r}, engine is {EXTRACTOR_ID!r}")
    return softmax(model.W @ extract_features(blob) + model.b)


def predicted_label(model: TrainedModel, confidences: np.ndarray) -> LabelId:
    return model.label_order[int(np.argmax(confidences))]


def training_accuracy(model: TrainedModel, project: ReplicatedProject, blobs) -> float:
    samples = [s for s in training_samples(project) if s.label in set(model.label_order)]
    if not samples:
        return 0.0
    hits = sum(1 for s in samples if predicted_label(model, classify(model, blobs[s.blob])) == s.label)
    return hits / len(samples)


# --- model file format: JSON header line, then base64 W, then base64 b ------


def serialize_model(model: TrainedModel) -> str:
    header = {
        "format": MODEL_FORMAT,
        "version": model.version,
        "device": model.device,
        "label_order": list(model.label_order),
        "extractor_id": model.extractor_id,
        "shape": [int(model.W.shape[0]), int(model.W.shape[1])],
        "trained_at": model.trained_at,
        "train_sample_count": model.train_sample_count,
    }
    return "\n".join(
        [
            json.dumps(header, separators=(",", ":"), ensure_ascii=False),
            base64.b64encode(np.ascontiguousarray(model.W, dtype="<f8").tobytes()).decode("ascii"),
            base64.b64encode(np.ascontiguousarray(model.b, dtype="<f8").tobytes()).decode("ascii"),
        ]
    ) + "\n"


def save_model(model: TrainedModel, path: str | Path):
    Path(path).write_text(serialize_model(model), "utf-8")


def deserialize_model(text: str) -> TrainedModel:
    lines = text.strip("\n").split("\n")
    if len(lines) != 3:
        raise MalformedOp(f"model file has {len(lines)} lines, expected 3")
    header = json.loads(lines[0])
    if header.get("format") != MODEL_FORMAT:
        raise MalformedOp(f"unknown model format {header.get('format')!r}")
    k, d = header["shape"]
    W = np.frombuffer(base64.b64decode(lines[1]), dtype="<f8").reshape(k, d).copy()
    b = np.frombuffer(base64.b64decode(lines[2]), dtype="<f8").copy()
    if b.shape != (k,):
        raise MalformedOp("bias shape mismatch")
    return TrainedModel(
        version=header["version"],
        device=header["device"],
        label_order=list(header["label_order"]),
        W=W,
        b=b,
        extractor_id=header["extractor_id"],
        trained_at=header.get("trained_at", 0),
        train_sample_count=header.get("train_sample_count", 0),
    )


def load_model(path: str | Path) -> TrainedModel:
    return deserialize_model(Path(path).read_text("utf-8"))
