import numpy as np
import pytest

from coml.domain import Split
from coml.errors import InsufficientData
from coml.features import FEATURE_DIM, extract_features
from coml.image import solid_color
from coml.training import (
    Hyperparams,
    deserialize_model,
    loss_and_grads,
    predicted_label,
    serialize_model,
    softmax,
    train,
    training_accuracy,
)

from conftest import SimClient, SimSequencer, make_image

PROJECT = "11111111-2222-4333-8444-555555555555"


def build_dataset(label_colors: dict[str, tuple[int, int, int]], per_label: int, seed: int = 7, test_per_label: int = 0):
    """A converged project: per-label color-swatch images with jitter."""
    import random

    rng = random.Random(seed)
    sequencer = SimSequencer()
    client = SimClient(PROJECT, sequencer, seed=seed)
    blobs = {}
    for name, color in label_colors.items():
        label_id = client.replica.submit_add_label(name).kind.label_id
        for i in range(per_label + test_per_label):
            blob = make_image(rng, 16, 16, base=color)
            blobs[blob.digest] = blob
            sequencer.put_blob(blob.digest)
            split = Split.TRAINING if i < per_label else Split.TESTING
            client.replica.submit_add_sample(label_id, blob.digest, split)
    client.sync()
    return client.replica.project, blobs


def test_separable_two_labels_reach_full_training_accuracy():
    project, blobs = build_dataset({"red": (230, 20, 20), "blue": (20, 20, 230)}, per_label=12)
    model = train(project, blobs, seed=1)
    assert training_accuracy(model, project, blobs) == 1.0


def test_same_seed_bit_identical():
    project, blobs = build_dataset({"red": (230, 20, 20), "blue": (20, 20, 230), "green": (20, 230, 20)}, per_label=8)
    a = train(project, blobs, seed=42)
    b = train(project, blobs, seed=42)
    assert a.W.tobytes() == b.W.tobytes()
    assert a.b.tobytes() == b.b.tobytes()
    c = train(project, blobs, seed=43)
    assert c.W.tobytes() != a.W.tobytes()


def numerical_gradients(W, b, X, y, l2, h=1e-5):
    """Central finite differences of the loss in every coordinate."""
    dW = np.zeros_like(W)
    db = np.zeros_like(b)
    for idx in np.ndindex(*W.shape):
        W[idx] += h
        up, _, _ = loss_and_grads(W, b, X, y, l2)
        W[idx] -= 2 * h
        down, _, _ = loss_and_grads(W, b, X, y, l2)
        W[idx] += h
        dW[idx] = (up - down) / (2 * h)
    for i in range(b.shape[0]):
        b[i] += h
        up, _, _ = loss_and_grads(W, b, X, y, l2)
        b[i] -= 2 * h
        down, _, _ = loss_and_grads(W, b, X, y, l2)
        b[i] += h
        db[i] = (up - down) / (2 * h)
    return dW, db


def relative_error(a, b):
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def test_analytic_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(5):
        n, k, d = 6, 3, 10  # small d keeps the FD sweep quick
        X = rng.normal(size=(n, d))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        y = rng.integers(0, k, size=n)
        W = rng.normal(scale=0.5, size=(k, d))
        b = rng.normal(scale=0.5, size=k)
        _, dW, db = loss_and_grads(W, b, X, y, l2=1e-4)
        num_dW, num_db = numerical_gradients(W.copy(), b.copy(), X, y, l2=1e-4)
        assert relative_error(dW, num_dW).max() < 1e-4
        assert relative_error(db, num_db).max() < 1e-4


def test_zero_weights_classify_uniform():
    project, blobs = build_dataset({"a": (200, 0, 0), "b": (0, 200, 0), "c": (0, 0, 200)}, per_label=2)
    model = train(project, blobs, seed=0, hyper=Hyperparams(epochs=0))
    assert np.allclose(model.W, 0) and np.allclose(model.b, 0)
    from coml.training import classify

    conf = classify(model, solid_color(10, 10, (5, 5, 5)))
    assert np.allclose(conf, 1 / 3)


def test_classify_memorized_fixture():
    project, blobs = build_dataset({"red": (230, 20, 20), "blue": (20, 20, 230)}, per_label=10)
    model = train(project, blobs, seed=2)
    from coml.training import classify, training_samples

    for sample in training_samples(project):
        conf = classify(model, blobs[sample.blob])
        assert predicted_label(model, conf) == sample.label


def test_probabilities_sum_to_one_batch(rng):
    project, blobs = build_dataset({"red": (200, 30, 30), "blue": (30, 30, 200), "green": (30, 200, 30)}, per_label=6)
    model = train(project, blobs, seed=5)
    from coml.training import classify

    for _ in range(500):
        conf = classify(model, make_image(rng, 12, 12))
        assert abs(float(conf.sum()) - 1.0) <= 1e-9
        assert (conf >= 0).all()


def test_full_batch_loss_monotone():
    project, blobs = build_dataset(
        {"red": (220, 30, 30), "blue": (30, 30, 220), "green": (30, 220, 30)}, per_label=10
    )
    from coml.training import trainable_labels, training_samples

    label_order = trainable_labels(project)
    index = {label: i for i, label in enumerate(label_order)}
    samples = training_samples(project)
    X = np.stack([extract_features(blobs[s.blob]) for s in samples])
    y = np.array([index[s.label] for s in samples])
    W = np.zeros((len(label_order), FEATURE_DIM))
    b = np.zeros(len(label_order))
    losses = []
    for _ in range(50):
        loss, dW, db = loss_and_grads(W, b, X, y, l2=1e-4)
        losses.append(loss)
        W -= 0.1 * dW
        b -= 0.1 * db
    assert all(losses[i + 1] <= losses[i] + 1e-12 for i in range(len(losses) - 1))


def test_argmax_scale_free(rng):
    for _ in range(100):
        z = np.array([rng.uniform(-5, 5) for _ in range(6)])
        assert int(np.argmax(softmax(z))) == int(np.argmax(z))


def test_insufficient_data():
    project, blobs = build_dataset({"only": (100, 100, 100)}, per_label=5)
    with pytest.raises(InsufficientData):
        train(project, blobs, seed=0)


def test_label_order_is_live_trainable_labels_sorted():
    project, blobs = build_dataset({"b": (0, 0, 200), "a": (200, 0, 0), "c": (0, 200, 0)}, per_label=3)
    model = train(project, blobs, seed=0)
    assert model.label_order == sorted(model.label_order)
    assert len(model.label_order) == 3


def test_model_serialization_roundtrip():
    project, blobs = build_dataset({"red": (230, 20, 20), "blue": (20, 20, 230)}, per_label=4)
    model = train(project, blobs, seed=9, device="aaaaaaaa-0000-4000-8000-000000000001", version=3)
    text = serialize_model(model)
    lines = text.strip().split("\n")
    assert len(lines) == 3 and lines[0].startswith('{"format":"coml-model-v1"')
    back = deserialize_model(text)
    assert back.version == 3
    assert back.label_order == model.label_order
    assert back.W.tobytes() == model.W.tobytes()
    assert back.b.tobytes() == model.b.tobytes()
