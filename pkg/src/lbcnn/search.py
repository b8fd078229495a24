"""Random search over binary kernels with closed-form output layers.

Each trial draws fresh +/-1 kernels, expands the training images, fits the
output layer by ridge regression and scores the test set.  The best trial
(highest test accuracy, lowest index on ties) is kept.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import elm
from .data import Dataset, one_hot
from .errors import LBCNNError, NumericalError, SearchError
from .model import LBCNN, as_float_images
from .tensor_ops import Architecture, KernelLayer, KernelSet, feature_expand, param_bits

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def trial_seed(master_seed: int, index: int) -> int:
    """64-bit seed of trial ``index``: ``splitmix64(master ^ splitmix64(index))``."""
    return splitmix64((master_seed & MASK64) ^ splitmix64(index))


def generate_kernels(arch: Architecture, seed: int) -> KernelSet:
    """Independent fair +/-1 draws from a Philox stream keyed by ``seed``; zero biases."""
    rng = np.random.Generator(np.random.Philox(key=seed & MASK64))
    layers = []
    for m, c in zip(arch.multipliers, arch.in_channels()):
        bits = rng.integers(0, 2, size=(m, c, 3, 3), dtype=np.int8)
        layers.append(KernelLayer(2 * bits - 1))
    return KernelSet(layers)


@dataclass
class SearchConfig:
    arch: Architecture
    train: Dataset
    test: Dataset
    trials: int = 10
    master_seed: int = 0
    solver: elm.SolverConfig = field(default_factory=elm.SolverConfig)
    max_train_samples: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= self.master_seed <= MASK64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.max_train_samples is not None and self.max_train_samples < 1:
            raise ValueError("max_train_samples must be positive")
        for name in ("train", "test"):
            ds = getattr(self, name)
            if ds.shape != self.arch.input_shape:
                raise ValueError(f"{name} images {ds.shape} do not match {self.arch.input_shape}")

    def train_set(self) -> Dataset:
        return self.train.head(self.max_train_samples)


@dataclass
class TrialResult:
    seed: int
    kernels: KernelSet
    out_weights: np.ndarray
    accuracy: float
    n_features: int
    branch: str
    param_bits: tuple[int, int]
    timings: dict

    def model(self, cfg: SearchConfig, **provenance) -> LBCNN:
        return LBCNN(
            cfg.arch,
            self.kernels,
            self.out_weights,
            class_names=cfg.train.class_names,
            provenance=provenance,
        )


def fit_output_layer(train: Dataset, arch: Architecture, kernels: KernelSet, solver: elm.SolverConfig):
    """Closed-form output weights for fixed kernels.

    Returns ``(outW, branch, timings)``.  The primal branch streams feature
    blocks straight into the Gram matrix, so the full feature matrix is never
    held in memory.
    """
    images = as_float_images(train.images)
    n = len(train)
    timings = {"expand_s": 0.0, "solve_s": 0.0}
    probe = LBCNN(arch, kernels, np.zeros((arch.n_features, arch.n_classes)))
    if elm.uses_primal(arch.n_features, n):
        acc = elm.GramAccumulator(arch.n_features, arch.n_classes)
        t = time.perf_counter()
        for start, rows in probe.iter_features(images):
            t1 = time.perf_counter()
            timings["expand_s"] += t1 - t
            acc.add(rows, train.labels[start:start + rows.shape[0]])
            t = time.perf_counter()
            timings["solve_s"] += t - t1
        t1 = time.perf_counter()
        outW = acc.solve(solver)
        timings["solve_s"] += time.perf_counter() - t1
        return outW, "primal", timings
    t = time.perf_counter()
    H = feature_expand(images, arch, kernels, batch_size=probe.batch_size())
    timings["expand_s"] = time.perf_counter() - t
    t = time.perf_counter()
    outW = elm.solve_dual(H, one_hot(train.labels, arch.n_classes), solver)
    timings["solve_s"] = time.perf_counter() - t
    return outW, "dual", timings


def run_trial(cfg: SearchConfig, seed: int, kernels: KernelSet | None = None) -> TrialResult:
    """One draw-fit-score cycle.

    Passing ``kernels`` replays a stored kernel set instead of drawing one.
    """
    if kernels is None:
        kernels = generate_kernels(cfg.arch, seed)
    train = cfg.train_set()
    t0 = time.perf_counter()
    outW, branch, timings = fit_output_layer(train, cfg.arch, kernels, cfg.solver)
    t = time.perf_counter()
    model = LBCNN(cfg.arch, kernels, outW)
    acc = model.evaluate(cfg.test.images, cfg.test.labels)
    timings["test_s"] = time.perf_counter() - t
    timings["train_s"] = t - t0
    return TrialResult(
        seed=seed,
        kernels=kernels,
        out_weights=outW,
        accuracy=acc,
        n_features=cfg.arch.n_features,
        branch=branch,
        param_bits=param_bits(cfg.arch),
        timings=timings,
    )


@dataclass
class TrialRecord:
    index: int
    seed: int
    accuracy: float | None
    train_s: float
    expand_s: float
    solve_s: float
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SearchReport:
    trials: list[TrialRecord]
    best_trial: int
    best_accuracy: float
    worst_accuracy: float
    mean_accuracy: float
    master_seed: int

    @property
    def accuracies(self) -> list[float | None]:
        return [t.accuracy for t in self.trials]

    def running_best(self) -> list[float]:
        best, out = -np.inf, []
        for t in self.trials:
            if t.ok:
                best = max(best, t.accuracy)
            out.append(best)
        return out

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "best_trial": self.best_trial,
            "best_accuracy": self.best_accuracy,
            "worst_accuracy": self.worst_accuracy,
            "mean_accuracy": self.mean_accuracy,
            "trials": [asdict(t) for t in self.trials],
        }


_RECOVERABLE = (NumericalError, LBCNNError, np.linalg.LinAlgError, MemoryError, FloatingPointError)


def random_search(cfg: SearchConfig) -> tuple[LBCNN, SearchReport]:
    """Run ``cfg.trials`` trials and return the best model with the full trace.

    Trials may run concurrently (``cfg.workers``); the trace is assembled in
    trial order, so the report does not depend on scheduling.  A failing
    trial is recorded with its error and skipped.
    """
    seeds = [trial_seed(cfg.master_seed, i) for i in range(cfg.trials)]

    def attempt(i):
        try:
            res = run_trial(cfg, seeds[i])
        except _RECOVERABLE as exc:
            log.warning("trial %d failed: %s", i, exc)
            return None, f"{type(exc).__name__}: {exc}"
        log.info("trial %d: accuracy %.4f", i, res.accuracy)
        return res, None

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(attempt, range(cfg.trials)))
    else:
        outcomes = [attempt(i) for i in range(cfg.trials)]

    records = []
    best_i, best = None, None
    for i, (res, err) in enumerate(outcomes):
        if res is None:
            records.append(TrialRecord(i, seeds[i], None, 0.0, 0.0, 0.0, err))
            continue
        t = res.timings
        records.append(TrialRecord(i, seeds[i], res.accuracy, t["train_s"], t["expand_s"], t["solve_s"]))
        if best is None or res.accuracy > best.accuracy:
            best_i, best = i, res
    if best is None:
        raise SearchError(f"all {cfg.trials} trials failed; first error: {outcomes[0][1]}")

    accs = [r.accuracy for r in records if r.ok]
    report = SearchReport(
        trials=records,
        best_trial=best_i,
        best_accuracy=best.accuracy,
        worst_accuracy=min(accs),
        mean_accuracy=float(np.mean(accs)),
        master_seed=cfg.master_seed,
    )
    model = best.model(
        cfg,
        master_seed=cfg.master_seed,
        best_trial=best_i,
        trial_seed=best.seed,
        accuracy=best.accuracy,
        C=cfg.solver.C,
        max_train_samples=cfg.max_train_samples,
    )
    return model, report
