import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbcnn import elm
from lbcnn.data import one_hot
from lbcnn.errors import RefineError, ShapeError
from lbcnn.model import LBCNN
from lbcnn.refine import FeatureStore, RefineConfig, refine_output, softmax_xent_loss_grad
from lbcnn.search import fit_output_layer, generate_kernels
from lbcnn.tensor_ops import Architecture

from builders import blob_dataset
from oracles import finite_diff_grad, xent_loss


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


def test_zero_weights_give_log_k():
    Y = one_hot([0, 2, 1, 1], 3)
    loss, _ = softmax_xent_loss_grad(np.zeros((6, 3)), np.ones((6, 4)), Y)
    assert loss == pytest.approx(math.log(3), rel=1e-15)


def test_gradient_on_spec_instance(rng):
    W = rng.standard_normal((6, 3))
    H = rng.standard_normal((6, 4))
    Y = one_hot([0, 1, 2, 1], 3)
    loss, grad = softmax_xent_loss_grad(W, H, Y)
    assert loss == pytest.approx(xent_loss(W, H, Y), rel=1e-12)
    fd = finite_diff_grad(lambda V: softmax_xent_loss_grad(V, H, Y)[0], W, 1e-5)
    assert rel_err(grad, fd) <= 1e-5


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), nf=st.integers(1, 8), k=st.integers(2, 5), b=st.integers(1, 6))
def test_gradient_matches_finite_differences(seed, nf, k, b):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((nf, k))
    H = rng.standard_normal((nf, b))
    Y = one_hot(rng.integers(0, k, b), k)
    _, grad = softmax_xent_loss_grad(W, H, Y)
    fd = finite_diff_grad(lambda V: softmax_xent_loss_grad(V, H, Y)[0], W, 1e-5)
    assert rel_err(grad, fd) <= 1e-5


def test_duplicated_column_is_weighted_average(rng):
    W = rng.standard_normal((4, 3))
    H = rng.standard_normal((4, 2))
    Y = one_hot([1, 2], 3)
    _, g_a = softmax_xent_loss_grad(W, H[:, :1], Y[:, :1])
    _, g_b = softmax_xent_loss_grad(W, H[:, 1:], Y[:, 1:])
    _, g = softmax_xent_loss_grad(W, H[:, [0, 0, 1]], Y[:, [0, 0, 1]])
    np.testing.assert_allclose(g, (2 * g_a + g_b) / 3, rtol=1e-12, atol=1e-15)


def test_large_scores_are_stable():
    W = np.array([[1000.0, -1000.0]])
    loss, grad = softmax_xent_loss_grad(W, np.ones((1, 1)), one_hot([1], 2))
    assert loss == pytest.approx(2000.0)
    assert np.isfinite(grad).all()


def test_shape_check():
    with pytest.raises(ShapeError):
        softmax_xent_loss_grad(np.zeros((3, 2)), np.zeros((4, 1)), np.zeros((2, 1)))


@pytest.fixture(scope="module")
def blob_model():
    train = blob_dataset(30, n_classes=3, seed=1)
    arch = Architecture(train.shape, (2,), 3)
    kernels = generate_kernels(arch, 11)
    outW, _, _ = fit_output_layer(train, arch, kernels, elm.SolverConfig(C=1e-3))
    return LBCNN(arch, kernels, outW), train


def test_zero_epochs_is_identity(blob_model):
    model, train = blob_model
    res = refine_output(model, train, RefineConfig(epochs=0))
    np.testing.assert_array_equal(res.weights, model.out_weights)


def test_loss_descends_and_kernels_frozen(blob_model):
    model, train = blob_model
    before = [layer.weights.copy() for layer in model.kernels]
    W0 = model.out_weights.copy()
    res = refine_output(model, train, RefineConfig(epochs=3, batch_size=16))
    assert all(b - a >= -1e-6 for a, b in zip(res.epoch_losses[1:], res.epoch_losses))
    for layer, w in zip(model.kernels, before):
        np.testing.assert_array_equal(layer.weights, w)
    np.testing.assert_array_equal(model.out_weights, W0)


def test_deterministic(blob_model):
    model, train = blob_model
    cfg = RefineConfig(epochs=2, batch_size=8, seed=5)
    a = refine_output(model, train, cfg)
    b = refine_output(model, train, cfg)
    np.testing.assert_array_equal(a.weights, b.weights)
    c = refine_output(model, train, RefineConfig(epochs=2, batch_size=8, seed=6))
    assert not np.array_equal(a.weights, c.weights)


def test_separable_toy_reaches_full_training_accuracy():
    train = blob_dataset(20, n_classes=2, seed=3)
    arch = Architecture(train.shape, (1,), 2)
    model = LBCNN(arch, generate_kernels(arch, 0), np.zeros((arch.n_features, 2)))
    res = refine_output(model, train, RefineConfig(epochs=60, batch_size=8, learning_rate=1e-2))
    refined = LBCNN(arch, model.kernels, res.weights)
    assert refined.evaluate(train.images, train.labels) == 1.0


def test_spill_to_disk_matches_in_memory(blob_model):
    model, train = blob_model
    ram = refine_output(model, train, RefineConfig(epochs=1, batch_size=16))
    disk = refine_output(model, train, RefineConfig(epochs=1, batch_size=16, memory_budget=0))
    np.testing.assert_array_equal(ram.weights, disk.weights)


def test_feature_store_cleans_up(blob_model):
    import os
    model, train = blob_model
    with FeatureStore(model, train.images, memory_budget=0) as store:
        path = store._path
        assert os.path.exists(path)
        np.testing.assert_array_equal(store.rows, model.features(train.images).T)
    assert not os.path.exists(path)


def test_divergence_reports_last_weights(blob_model):
    model, train = blob_model
    huge = LBCNN(model.arch, model.kernels, np.full_like(model.out_weights, 1e308))
    with pytest.raises(RefineError) as info:
        refine_output(huge, train, RefineConfig(epochs=1, batch_size=16, learning_rate=1e308))
    assert info.value.last_weights is not None


def test_batch_larger_than_set(blob_model):
    model, train = blob_model
    with pytest.raises(ValueError):
        refine_output(model, train, RefineConfig(batch_size=10_000))
