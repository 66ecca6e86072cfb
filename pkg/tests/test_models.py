import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idsxai import cart
from idsxai.errors import ArtifactMismatch
from idsxai.models import (
    BlackBoxModel,
    LinearClassifier,
    fit_linear,
    load_model,
    logistic_loss_grad,
    model_from_dict,
    predict_proba,
    save_model,
)


def finite_difference(w, b, X, y, h=1e-6):
    gw = np.empty_like(w)
    for j in range(len(w)):
        e = np.zeros_like(w)
        e[j] = h
        gw[j] = (logistic_loss_grad(w + e, b, X, y)[0] - logistic_loss_grad(w - e, b, X, y)[0]) / (2 * h)
    gb = (logistic_loss_grad(w, b + h, X, y)[0] - logistic_loss_grad(w, b - h, X, y)[0]) / (2 * h)
    return gw, gb


def rel_err(a, b):
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def test_gradient_at_initialization():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 4))
    y = rng.integers(0, 2, 10).astype(float)
    w, b = np.zeros(4), 0.0
    _, gw, gb = logistic_loss_grad(w, b, X, y)
    fw, fb = finite_difference(w, b, X, y)
    assert rel_err(np.append(gw, gb), np.append(fw, fb)) <= 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_random_points(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(12, 3))
    y = rng.integers(0, 2, 12).astype(float)
    w, b = rng.normal(size=3), float(rng.normal())
    _, gw, gb = logistic_loss_grad(w, b, X, y)
    fw, fb = finite_difference(w, b, X, y)
    assert rel_err(np.append(gw, gb), np.append(fw, fb)) <= 1e-5


def test_separable_1d():
    X = np.array([[-1.0]] * 5 + [[1.0]] * 5)
    y = np.array([0] * 5 + [1] * 5)
    m = fit_linear(X, y)
    assert m.weights[0] > 0
    assert (m.predict(X) == y).all()


def test_all_zero_labels():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 2))
    m = fit_linear(X, np.zeros(30))
    assert (m.predict_proba(X)[:, 1] < 0.5).all()


def test_zero_model_and_leaf_delegation():
    m = LinearClassifier(np.zeros(3), 0.0)
    assert predict_proba(m, np.ones(3)).tolist() == [0.5, 0.5]
    t = cart.CartTree([-1], [0.0], [-1], [-1], [[3, 1]], 0, 2, 2, 4)
    assert predict_proba(t, np.zeros(2)).tolist() == [0.75, 0.25]
    assert isinstance(m, BlackBoxModel) and isinstance(t, BlackBoxModel)


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(2)
    m = LinearClassifier(rng.normal(size=5) * 10, 3.0)
    p = m.predict_proba(rng.normal(size=(1000, 5)) * 10)
    assert np.allclose(p.sum(axis=1), 1.0) and (p >= 0).all()


def test_deterministic_fit():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 3))
    y = (X[:, 0] > 0).astype(int)
    a, b = fit_linear(X, y, seed=4), fit_linear(X, y, seed=4)
    assert a.weights.tolist() == b.weights.tolist() and a.bias == b.bias


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(60, 3))
    y = (X[:, 1] > 0).astype(int)
    for model in (fit_linear(X, y), cart.fit(X, y, 3)):
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        np.testing.assert_array_equal(model.predict_proba(X), back.predict_proba(X))


def test_model_format_mismatch(tmp_path):
    d = LinearClassifier(np.zeros(2), 0.0).to_dict()
    d["format"] = 99
    with pytest.raises(ArtifactMismatch):
        model_from_dict(d)
    (tmp_path / "m.json").write_text(json.dumps({"format": 1, "model": "mlp"}))
    with pytest.raises(ArtifactMismatch):
        load_model(tmp_path / "m.json")
