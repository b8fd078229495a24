"""Acceptance criteria, one test (or a few) per criterion.

The terminal summary prints one PASS/FAIL/SKIP line per criterion with the
measured values.  The full-scale MNIST search (criterion 3, full variant)
runs only with LBCNN_FULL=1; it takes roughly an hour on one core.
"""

import numpy as np
import pytest

from lbcnn import elm
from lbcnn.data import split_stratified
from lbcnn.model_store import dumps, loads
from lbcnn.quantize import quantize
from lbcnn.refine import RefineConfig, refine_output, softmax_xent_loss_grad
from lbcnn.search import SearchConfig, random_search
from lbcnn.tensor_ops import (
    Architecture,
    KernelLayer,
    depthwise_conv3x3,
    maxpool_coverall,
    param_bits,
)

from oracles import conv_oracle, finite_diff_grad, pool_oracle, ridge_oracle

MNIST_SHAPE = (28, 28, 1)

# Criterion 3, CI variant: (8,8), first 10000 samples, C=1, 5 trials, master
# seed 0.  One-time calibration gave best 0.9743 (trials 0.9736 0.9743
# 0.9721 0.9674 0.9712); the threshold sits 0.5 pt below and is frozen.
CI_CALIBRATED_BEST = 0.9743
CI_THRESHOLD = CI_CALIBRATED_BEST - 0.005


def crit(n, title):
    return pytest.mark.criterion(n, title)


@crit(1, "MNIST (16,20) gives 15680 features, expansion factor 20")
def test_feature_dimension_anchor(note):
    arch = Architecture(MNIST_SHAPE, (16, 20), 10)
    note(f"n_features={arch.n_features}, E={arch.expansion_factor:g}")
    assert arch.n_features == 15680
    assert arch.expansion_factor == 20


PARAM_TABLE = [
    ((28, 28, 1), (40, 2, 2), 10, (2520, 204800)),
    ((28, 28, 1), (40, 4), 10, (1800, 627200)),
    ((32, 32, 3), (13,), 43, (351, 3434496)),
    ((32, 32, 3), (20, 2), 43, (1620, 2641920)),
    ((64, 64, 1), (5, 4), 40, (225, 1638400)),
    ((64, 64, 3), (10, 4, 2), 6, (3510, 737280)),
    ((32, 32, 3), (10, 6), 10, (1890, 921600)),
]


@crit(2, "param_bits reproduces the seven reference Conv+ELM bit pairs")
def test_parameter_accounting(note):
    got = [param_bits(Architecture(s, m, k)) for s, m, k, _ in PARAM_TABLE]
    note(f"{sum(g == e for g, (*_, e) in zip(got, PARAM_TABLE))}/7 exact")
    assert got == [e for *_, e in PARAM_TABLE]


@pytest.fixture(scope="module")
def ci_search(mnist):
    train, test = mnist
    cfg = SearchConfig(Architecture(MNIST_SHAPE, (8, 8), 10), train, test, trials=5,
                       master_seed=0, solver=elm.SolverConfig(C=1.0), max_train_samples=10000)
    return random_search(cfg)


@pytest.mark.slow
@crit(3, "MNIST closed-form accuracy (CI variant and full-scale run)")
def test_mnist_closed_form_ci(ci_search, note):
    _, report = ci_search
    note(f"CI (8,8)/10k best {report.best_accuracy:.4f} vs frozen threshold {CI_THRESHOLD:.4f}")
    assert report.best_accuracy >= CI_THRESHOLD


@pytest.fixture(scope="module")
def full_search(mnist):
    train, test = mnist
    cfg = SearchConfig(Architecture(MNIST_SHAPE, (16, 20), 10), train, test, trials=20,
                       master_seed=0, solver=elm.SolverConfig(C=1.0), max_train_samples=20000)
    return random_search(cfg)


@pytest.mark.slow
@pytest.mark.full
@crit(3, "MNIST closed-form accuracy (CI variant and full-scale run)")
def test_mnist_closed_form_full(full_search, note):
    _, report = full_search
    note(f"full (16,20)/20k C=1: best {report.best_accuracy:.4f} (need 0.983), "
         f"mean {report.mean_accuracy:.4f} (need 0.980)")
    assert report.best_accuracy >= 0.983
    assert report.mean_accuracy >= 0.983 - 0.003


@pytest.mark.slow
@crit(4, "refinement of a (40,4) closed-form model gains >= 0.3 pt")
def test_mnist_refinement_gain(mnist, note):
    train, test = mnist
    cfg = SearchConfig(Architecture(MNIST_SHAPE, (40, 4), 10), train, test, trials=3,
                       master_seed=0, max_train_samples=10000)
    model, report = random_search(cfg)
    before = report.best_accuracy
    kernels = [layer.weights.copy() for layer in model.kernels]
    model.out_weights = refine_output(model, train, RefineConfig()).weights
    after = model.evaluate(test.images, test.labels)
    note(f"closed-form {before:.4f} -> refined {after:.4f} (gain {100 * (after - before):+.2f} pt)")
    assert all(np.array_equal(a.weights, b) for a, b in zip(model.kernels, kernels))
    assert after - before >= 0.003


@pytest.mark.slow
@crit(5, "ORL (5,4), stratified 70/30, best of 10 >= 97.5%")
def test_orl(orl, note):
    train, test = split_stratified(orl, 0.7, seed=0)
    assert (len(train), len(test)) == (280, 120)
    cfg = SearchConfig(Architecture((64, 64, 1), (5, 4), 40), train, test, trials=10, master_seed=0)
    _, report = random_search(cfg)
    note(f"best {report.best_accuracy:.4f}, mean {report.mean_accuracy:.4f}")
    assert report.best_accuracy >= 0.975


@crit(6, "primal/dual agree within 1e-6 and match the inverse oracle within 1e-8")
def test_solver_equivalence(note):
    rng = np.random.default_rng(6)
    worst_pd = worst_or = 0.0
    branches = set()
    for _ in range(200):
        nf, ns = rng.integers(3, 41, size=2)
        H = rng.standard_normal((nf, ns))
        Y = np.eye(4)[rng.integers(0, 4, ns)].T
        Wp = elm.solve_primal(H, Y)
        Wd = elm.solve_dual(H, Y)
        ref = ridge_oracle(H, Y, 1.0)
        branches.add(elm.uses_primal(nf, ns))
        worst_pd = max(worst_pd, np.linalg.norm(Wp - Wd) / np.linalg.norm(Wd))
        worst_or = max(worst_or, *(np.linalg.norm(W - ref) / np.linalg.norm(ref) for W in (Wp, Wd)))
    note(f"max primal/dual {worst_pd:.1e}, max vs oracle {worst_or:.1e}")
    assert branches == {True, False}
    assert worst_pd <= 1e-6
    assert worst_or <= 1e-8


@crit(7, "conv and pool match loop oracles bit-exactly on 100 integer cases")
def test_conv_pool_oracle(note):
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(100):
        n, (h, w), (c, m) = rng.integers(1, 3), rng.integers(1, 9, size=2), rng.integers(1, 4, size=2)
        x = rng.integers(-50, 51, (n, h, w, c)).astype(np.float64)
        layer = KernelLayer(rng.choice([-1, 1], size=(m, c, 3, 3)))
        conv = depthwise_conv3x3(x, layer)
        mismatches += not np.array_equal(conv, conv_oracle(x, layer.weights))
        mismatches += not np.array_equal(maxpool_coverall(conv), pool_oracle(conv))
    note(f"{mismatches} mismatches")
    assert mismatches == 0


@crit(8, "analytic gradient within 1e-5 of central differences on 20 instances")
def test_gradient_check(note):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        nf, k, b = rng.integers(2, 9), rng.integers(2, 6), rng.integers(1, 9)
        W = rng.standard_normal((nf, k))
        H = rng.standard_normal((nf, b))
        Y = np.eye(k)[rng.integers(0, k, b)].T
        _, g = softmax_xent_loss_grad(W, H, Y)
        fd = finite_diff_grad(lambda V: softmax_xent_loss_grad(V, H, Y)[0], W, 1e-5)
        worst = max(worst, np.abs(g - fd).max() / np.abs(fd).max())
    note(f"max relative error {worst:.1e}")
    assert worst <= 1e-5


@crit(9, "quantization error <= scale/2; quantized MNIST within 0.5 pt of float")
def test_quantization_round_trip(note):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        w = rng.standard_normal(rng.integers(1, 60, size=2)) * 10 ** rng.uniform(-3, 3)
        for bits in range(2, 9):
            qw = quantize(w, bits)
            worst = max(worst, np.abs(w - qw.dequantize()).max() / qw.scale)
    note(f"max error {worst:.3f} scale")
    assert worst <= 0.5 + 1e-9


@pytest.mark.slow
@crit(9, "quantization error <= scale/2; quantized MNIST within 0.5 pt of float")
def test_quantized_mnist_accuracy(ci_search, mnist, note):
    _, test = mnist
    model, report = ci_search
    qmodel = loads(dumps(model))
    qmodel.out_weights = quantize(model.out_weights, 8)
    acc = qmodel.evaluate(test.images, test.labels)
    note(f"(8,8) float {report.best_accuracy:.4f} vs 8-bit {acc:.4f}")
    assert abs(acc - report.best_accuracy) <= 0.005


@pytest.mark.slow
@pytest.mark.full
@crit(9, "quantization error <= scale/2; quantized MNIST within 0.5 pt of float")
def test_quantized_mnist_accuracy_full(full_search, mnist, note):
    _, test = mnist
    model, report = full_search
    qmodel = loads(dumps(model))
    qmodel.out_weights = quantize(model.out_weights, 8)
    acc = qmodel.evaluate(test.images, test.labels)
    note(f"(16,20) float {report.best_accuracy:.4f} vs 8-bit {acc:.4f}")
    assert abs(acc - report.best_accuracy) <= 0.005


@pytest.mark.slow
@crit(10, "search reports identical for 1/2/8 workers; save/load keeps predictions")
def test_determinism(mnist, note):
    train, test = mnist
    arch = Architecture(MNIST_SHAPE, (4, 4), 10)
    reports = {}
    for w in (1, 2, 8):
        cfg = SearchConfig(arch, train.head(3000), test.head(1000), trials=4, master_seed=10,
                           solver=elm.SolverConfig(workers=w), workers=w)
        model, reports[w] = random_search(cfg)
    accs = {w: r.accuracies for w, r in reports.items()}
    note(f"accuracies {accs[1]}")
    assert accs[1] == accs[2] == accs[8]
    assert reports[1].best_trial == reports[2].best_trial == reports[8].best_trial


@pytest.mark.slow
@crit(10, "search reports identical for 1/2/8 workers; save/load keeps predictions")
def test_save_load_predictions(ci_search, mnist):
    _, test = mnist
    model, _ = ci_search
    images = test.images[:1000]
    reloaded = loads(dumps(model))
    np.testing.assert_array_equal(reloaded.predict(images), model.predict(images))
    model_q = loads(dumps(model))
    model_q.out_weights = quantize(model.out_weights, 8)
    np.testing.assert_array_equal(loads(dumps(model_q)).predict(images), model_q.predict(images))


@crit(11, "GPU timings and speed-ups are not reproduced; wall-times are reported only")
def test_timings_reported_not_asserted(note):
    from builders import blob_dataset
    train, test = blob_dataset(10, seed=0), blob_dataset(5, seed=1)
    _, report = random_search(SearchConfig(Architecture(train.shape, (2,), 3), train, test, trials=2))
    for t in report.trials:
        assert t.train_s >= 0 and t.expand_s >= 0 and t.solve_s >= 0
    note("not reproducible by design; timings present and non-negative")
