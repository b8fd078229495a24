"""Command line front end: ``lbcnn {search,refine,quantize,eval,predict,inspect}``.

Every command prints one JSON report on stdout.  Failures print
``{"error": {...}}`` and exit with 2 (usage), 3 (data) or 4 (numerical).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from . import elm, model_store
from .data import Dataset, load_idx, load_pnm_dir, read_pnm, split_stratified
from .errors import DataError, LBCNNError, UsageError
from .model import as_float_images
from .quantize import quantize
from .refine import RefineConfig, refine_output
from .search import SearchConfig, random_search
from .tensor_ops import Architecture

REPORT_KEYS = (
    "command",
    "config",
    "dataset",
    "architecture",
    "n_features",
    "expansion_factor",
    "param_bits",
    "timings",
    "accuracies",
    "search",
    "seeds",
    "confusion_matrix",
    "prediction",
    "model_path",
)


def new_report(command: str, args: argparse.Namespace) -> dict:
    report = {key: None for key in REPORT_KEYS}
    report["command"] = command
    report["config"] = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    report["timings"] = {"expand_s": None, "solve_s": None, "refine_s": None}
    report["accuracies"] = {"elm_test": None, "refined_test": None, "quantized_test": None}
    return report


def describe_model(report: dict, model) -> None:
    conv_bits, elm_bits = model.param_bits()
    report["architecture"] = model.arch.to_dict()
    report["n_features"] = model.arch.n_features
    report["expansion_factor"] = model.arch.expansion_factor
    report["param_bits"] = {"conv_bits": conv_bits, "elm_bits": elm_bits}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_spec(fmt: str, spec: str) -> Dataset:
    if fmt == "idx":
        parts = spec.split(",")
        if len(parts) != 2:
            raise UsageError(f"idx data needs 'IMAGES,LABELS', got {spec!r}")
        return load_idx(parts[0], parts[1])
    return load_pnm_dir(spec)


def load_data(args, need_train: bool = True) -> tuple[Dataset | None, Dataset | None]:
    """Resolve --train/--test or --data/--split into (train, test).

    Flag combinations are checked before any file is read.
    """
    if args.data:
        if args.train or args.test:
            raise UsageError("--data cannot be combined with --train/--test")
        if need_train and args.split is None:
            raise UsageError("--data needs --split when a training set is required")
        ds = _load_spec(args.data_format, args.data)
        if args.split is not None:
            return split_stratified(ds, args.split, args.split_seed)
        return None, ds
    if args.split is not None:
        raise UsageError("--split needs --data")
    if need_train and not args.train:
        raise UsageError("a training set is required (--train or --data with --split)")
    train = _load_spec(args.data_format, args.train) if args.train else None
    test = _load_spec(args.data_format, args.test) if args.test else None
    return train, test


def _align_classes(train, test):
    """Give both splits the larger class count (IDX class counts come from labels)."""
    if train is not None and test is not None and train.n_classes != test.n_classes:
        k = max(train.n_classes, test.n_classes)
        train = Dataset(train.images, train.labels, k, train.class_names)
        test = Dataset(test.images, test.labels, k, test.class_names)
    return train, test


def _summaries(train, test):
    return {
        "train": train.summary() if train is not None else None,
        "test": test.summary() if test is not None else None,
    }


def _parse_filters(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip() not in ("", "-"))
    except ValueError:
        raise UsageError(f"--filters must be comma-separated integers, got {text!r}") from None
    if not vals:
        raise UsageError("--filters needs at least one layer")
    return vals


def _require_test(test):
    if test is None:
        raise UsageError("a test set is required (--test or --data)")
    return test


def cmd_search(args) -> dict:
    report = new_report("search", args)
    filters = _parse_filters(args.filters)
    train, test = _align_classes(*load_data(args))
    test = _require_test(test)
    arch = Architecture(train.shape, filters, train.n_classes)
    cfg = SearchConfig(
        arch,
        train,
        test,
        trials=args.trials,
        master_seed=args.seed,
        solver=elm.SolverConfig(C=args.reg),
        max_train_samples=args.max_train,
        workers=args.workers,
    )
    model, search = random_search(cfg)
    model_store.save_model(model, args.out)
    report["dataset"] = _summaries(cfg.train_set(), test)
    describe_model(report, model)
    best = search.trials[search.best_trial]
    report["timings"].update(expand_s=best.expand_s, solve_s=best.solve_s)
    report["accuracies"]["elm_test"] = search.best_accuracy
    report["search"] = search.to_dict()
    report["seeds"] = {"master_seed": args.seed, "best_trial_seed": best.seed}
    report["model_path"] = args.out
    return report


def _provenance_seeds(model):
    prov = model.provenance or {}
    return {"master_seed": prov.get("master_seed"), "best_trial_seed": prov.get("trial_seed")}


def cmd_refine(args) -> dict:
    report = new_report("refine", args)
    model = model_store.load_model(args.model)
    train, test = _align_classes(*load_data(args))
    report["dataset"] = _summaries(train, test)
    describe_model(report, model)
    if test is not None:
        report["accuracies"]["elm_test"] = model.evaluate(test.images, test.labels)
    cfg = RefineConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.shuffle_seed,
        memory_budget=int(args.memory_budget * 2**20),
    )
    t = time.perf_counter()
    result = refine_output(model, train, cfg)
    report["timings"]["refine_s"] = time.perf_counter() - t
    bits = model.out_weights.bits if model.is_quantized else None
    model.out_weights = result.weights
    model.provenance = dict(model.provenance, refined_epochs=args.epochs)
    if test is not None:
        report["accuracies"]["refined_test"] = model.evaluate(test.images, test.labels)
    if bits is not None:
        model.out_weights = quantize(result.weights, bits)
        if test is not None:
            report["accuracies"]["quantized_test"] = model.evaluate(test.images, test.labels)
    model_store.save_model(model, args.out or args.model)
    report["seeds"] = dict(_provenance_seeds(model), shuffle_seed=args.shuffle_seed)
    report["model_path"] = args.out or args.model
    return report


def cmd_quantize(args) -> dict:
    report = new_report("quantize", args)
    model = model_store.load_model(args.model)
    describe_model(report, model)
    _, test = load_data(args, need_train=False) if (args.test or args.data) else (None, None)
    if test is not None:
        report["dataset"] = _summaries(None, test)
        report["accuracies"]["elm_test"] = model.evaluate(test.images, test.labels)
    model.out_weights = quantize(model.float_weights(), args.bits)
    if test is not None:
        report["accuracies"]["quantized_test"] = model.evaluate(test.images, test.labels)
    model_store.save_model(model, args.out or args.model)
    report["seeds"] = _provenance_seeds(model)
    report["model_path"] = args.out or args.model
    return report


def cmd_eval(args) -> dict:
    report = new_report("eval", args)
    model = model_store.load_model(args.model)
    describe_model(report, model)
    _, test = load_data(args, need_train=False)
    test = _require_test(test)
    report["dataset"] = _summaries(None, test)
    t = time.perf_counter()
    pred = model.predict(test.images)
    report["timings"]["expand_s"] = time.perf_counter() - t
    acc = elm.accuracy(pred, test.labels)
    key = "quantized_test" if model.is_quantized else "elm_test"
    report["accuracies"][key] = acc
    k = model.arch.n_classes
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (test.labels, pred), 1)
    report["confusion_matrix"] = cm.tolist()
    report["seeds"] = _provenance_seeds(model)
    return report


def cmd_predict(args) -> dict:
    report = new_report("predict", args)
    model = model_store.load_model(args.model)
    describe_model(report, model)
    image = read_pnm(args.image)
    if image.shape != model.arch.input_shape:
        raise DataError(f"image shape {image.shape} does not match model input {model.arch.input_shape}")
    cls = int(model.predict(as_float_images(image[None]))[0])
    names = model.class_names
    report["prediction"] = {"class_index": cls, "class_name": names[cls] if names else None}
    report["seeds"] = _provenance_seeds(model)
    return report


def cmd_inspect(args) -> dict:
    report = new_report("inspect", args)
    info = model_store.inspect(args.model)
    report["architecture"] = info["header"]["architecture"]
    report["n_features"] = info["n_features"]
    report["expansion_factor"] = info["expansion_factor"]
    report["param_bits"] = info["param_bits"]
    report["inspect"] = info
    prov = info["header"].get("provenance") or {}
    report["seeds"] = {"master_seed": prov.get("master_seed"), "best_trial_seed": prov.get("trial_seed")}
    return report


def _add_data_flags(p, train=True):
    p.add_argument("--data-format", choices=("idx", "pnm"), default="idx")
    if train:
        p.add_argument("--train", help="IMAGES,LABELS for idx; a class-per-subdirectory tree for pnm")
    p.add_argument("--test", help="same form as --train")
    p.add_argument("--data", help="single dataset, split with --split or evaluated whole")
    p.add_argument("--split", type=float, help="train fraction of a stratified split of --data")
    p.add_argument("--split-seed", type=int, default=0)
    if not train:
        p.set_defaults(train=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lbcnn", description="Light binary CNN training and inference")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("search", help="random search over binary kernels")
    _add_data_flags(p)
    p.add_argument("--filters", required=True, help="channel multipliers, e.g. 16,20")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reg", type=float, default=1.0, help="ridge constant C")
    p.add_argument("--max-train", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("refine", help="gradient refinement of the output layer")
    p.add_argument("--model", required=True)
    _add_data_flags(p)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--shuffle-seed", type=int, default=0)
    p.add_argument("--memory-budget", type=float, default=1024, help="MiB of in-RAM features")
    p.add_argument("--out", help="output model (default: overwrite --model)")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("quantize", help="fixed-point quantization of the output layer")
    p.add_argument("--model", required=True)
    p.add_argument("--bits", type=int, default=8)
    _add_data_flags(p, train=False)
    p.add_argument("--out")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="test accuracy and confusion matrix")
    p.add_argument("--model", required=True)
    _add_data_flags(p, train=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one PGM/PPM image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect", help="describe a model file")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")
    sys.stdout.flush()


def _fail(exc: Exception, code: int) -> int:
    _emit({"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}})
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        _emit(args.func(args))
        return 0
    except LBCNNError as exc:
        return _fail(exc, exc.exit_code)
    except (OSError, ValueError) as exc:
        return _fail(exc, 3 if isinstance(exc, OSError) else 2)
    except (np.linalg.LinAlgError, FloatingPointError, MemoryError) as exc:
        return _fail(exc, 4)


if __name__ == "__main__":
    sys.exit(main())
