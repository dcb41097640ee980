"""Operator command line: corpus synthesis, training, evaluation, serving.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Every training or evaluation run writes a run manifest (resolved settings,
seeds, model hashes) next to its outputs so runs can be reproduced.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import analysis, corpus as corpus_mod, evaluation, mediator, svm as svm_mod
from .audio import AudioError
from .classifiers import (
    DetectorPipeline,
    SvmPipeline,
    TransferPipeline,
    build_detector,
    train_classifier,
)
from .config import ServiceConfig
from .corpus import CorpusError, SynthSpec, load_corpus, synth_corpus
from .engine import (
    CML_MC_FILE,
    DETECTOR_FILE,
    DTL_BC_FILE,
    DTL_MC_FILE,
    Engine,
)
from .mediator import AppResult, multi_sample_vote
from .neuralnet import NetError, TrainConfig, load_network, save_network
from .svm import SvmError

USAGE_ERROR, DATA_ERROR, INTERNAL_ERROR = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we own the exit codes
        raise UsageError(message)


def _write_manifest(out_dir: Path, command: str, settings: dict, artifacts: dict):
    manifest = {
        "command": command,
        "settings": settings,
        "artifacts": artifacts,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _write_loss_csv(path: Path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for i, stats in enumerate(history, start=1):
            writer.writerow([i, f"{stats.train_loss:.9g}",
                             "" if stats.val_loss is None else f"{stats.val_loss:.9g}"])


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )


# ---------------------------------------------------------------------------
# subcommand implementations


def _cmd_synth_corpus(args) -> int:
    kinds = {
        "detection": corpus_mod.DETECTION_LABELS,
        "diagnosis": corpus_mod.DIAGNOSIS_LABELS,
    }
    classes = args.classes.split(",") if args.classes else kinds[args.kind]
    spec = SynthSpec(classes=tuple(classes), per_class=args.per_class, seed=args.seed)
    made = synth_corpus(spec, args.out)
    print(f"wrote {len(made)} clips under {args.out}")
    return 0


def _load_images_and_labels(corp, label_order):
    from .classifiers import _image_batch

    cache: dict = {}
    return _image_batch(corp.samples, label_order, cache)


def _cmd_train_detector(args) -> int:
    corp = load_corpus(args.corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, labels = _load_images_and_labels(corp, ("cough", "not_cough"))
    net = build_detector(seed=args.seed)
    history = train_classifier(net, images, labels, _train_config(args))
    model_path = out_dir / DETECTOR_FILE
    save_network(net, model_path)
    _write_loss_csv(out_dir / "detector_loss.csv", history)
    _write_manifest(
        out_dir,
        "train-detector",
        {"corpus": str(args.corpus), "seed": args.seed, "epochs": args.epochs,
         "batch_size": args.batch_size, "learning_rate": args.lr},
        {"model": str(model_path), "parameter_hash": net.parameter_hash(),
         "architecture_hash": net.architecture_hash()},
    )
    print(f"trained detector -> {model_path}")
    return 0


def _cmd_train_transfer(args, binary: bool) -> int:
    corp = load_corpus(args.corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    detector = load_network(args.detector)
    pipeline = TransferPipeline(
        detector,
        n_classes=2 if binary else 4,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        label_map=(
            {"covid19": "covid", "pertussis": "not_covid",
             "bronchitis": "not_covid", "normal": "not_covid"}
            if binary
            else None
        ),
    )
    pipeline.fit(corp.samples, args.seed)
    name = DTL_BC_FILE if binary else DTL_MC_FILE
    model_path = out_dir / name
    save_network(pipeline.net, model_path)
    _write_loss_csv(out_dir / f"{name.split('.')[0]}_loss.csv",
                    [type("S", (), {"train_loss": l, "val_loss": None})() for l in pipeline.loss_history])
    _write_manifest(
        out_dir,
        "train-dtl-bc" if binary else "train-dtl-mc",
        {"corpus": str(args.corpus), "detector": str(args.detector), "seed": args.seed,
         "epochs": args.epochs, "batch_size": args.batch_size, "learning_rate": args.lr},
        {"model": str(model_path), "parameter_hash": pipeline.net.parameter_hash()},
    )
    print(f"trained {'DTL-BC' if binary else 'DTL-MC'} -> {model_path}")
    return 0


def _cmd_train_cml_mc(args) -> int:
    corp = load_corpus(args.corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = svm_mod.SvmConfig(
        kernel=args.kernel,
        c_grid=tuple(float(c) for c in args.c_grid.split(",")),
        k_folds=args.k,
        max_iter=args.max_iter,
        seed=args.seed,
    )
    pipeline = SvmPipeline(svm_config=config)
    pipeline.fit(corp.samples, args.seed)
    model_path = out_dir / CML_MC_FILE
    svm_mod.save_svm(pipeline.model, model_path)
    report = pipeline.report
    with open(out_dir / "cml_mc_tuning.json", "w") as fh:
        json.dump(
            {
                "c_grid": report.c_grid,
                "mean_accuracy": {str(k): v for k, v in report.mean_accuracy.items()},
                "chosen_c": report.chosen_c,
                "gamma": report.gamma,
                "solver_iterations": report.solver_iterations,
                "kkt_gaps": report.kkt_gaps,
                "any_hit_cap": report.any_hit_cap,
                "balanced_counts": report.balanced_counts,
            },
            fh,
            indent=2,
        )
    _write_manifest(
        out_dir,
        "train-cml-mc",
        {"corpus": str(args.corpus), "seed": args.seed, "kernel": args.kernel,
         "c_grid": args.c_grid, "k": args.k, "max_iter": args.max_iter},
        {"model": str(model_path), "chosen_c": report.chosen_c},
    )
    print(f"trained CML-MC -> {model_path} (C={report.chosen_c}, gamma={report.gamma:.6g})")
    return 0


def _cmd_evaluate(args) -> int:
    corp = load_corpus(args.corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_cache: dict = {}
    if args.target == "detector":
        factory = lambda fold: DetectorPipeline(
            epochs=args.epochs, batch_size=args.batch_size,
            learning_rate=args.lr, image_cache=image_cache)
        classes = ("cough", "not_cough")
    elif args.target in ("dtl-mc", "dtl-bc"):
        detector = load_network(args.detector)
        binary = args.target == "dtl-bc"
        label_map = (
            {"covid19": "covid", "pertussis": "not_covid",
             "bronchitis": "not_covid", "normal": "not_covid"}
            if binary else None
        )
        factory = lambda fold: TransferPipeline(
            detector, n_classes=2 if binary else 4, epochs=args.epochs,
            batch_size=args.batch_size, learning_rate=args.lr,
            image_cache=image_cache, label_map=label_map)
        classes = ("covid", "not_covid") if binary else tuple(corpus_mod.DIAGNOSIS_LABELS)
        if binary:
            from .corpus import Corpus, Sample

            corp = Corpus(
                samples=tuple(
                    Sample(s.id, s.path, label_map[s.label], s.split) for s in corp.samples
                ),
                provenance=corp.provenance + "|binary",
            )
    else:  # cml-mc
        feature_cache: dict = {}
        factory = lambda fold: SvmPipeline(feature_cache=feature_cache)
        classes = tuple(corpus_mod.DIAGNOSIS_LABELS)

    result = evaluation.cross_validate(factory, corp, args.k, args.seed, classes=classes)

    with open(out_dir / "metrics.json", "w") as fh:
        json.dump(
            {
                "classes": list(result.classes),
                "mean_accuracy": result.mean_accuracy,
                "fold_accuracies": result.accuracies,
                "per_class": {
                    c: {
                        "f1": float(np.mean([f.per_class[c].f1 for f in result.folds])),
                        "sensitivity": float(np.mean([f.per_class[c].sensitivity for f in result.folds])),
                        "specificity": float(np.mean([f.per_class[c].specificity for f in result.folds])),
                        "precision": float(np.mean([f.per_class[c].precision for f in result.folds])),
                    }
                    for c in result.classes
                },
            },
            fh,
            indent=2,
        )
    np.savetxt(
        out_dir / "mean_confusion_matrix.csv",
        result.mean_normalized_matrix,
        delimiter=",",
        header=",".join(result.classes),
        fmt="%.4f",
    )
    with open(out_dir / "accuracy_cdf.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["accuracy", "cumulative_fraction"])
        writer.writerows(result.accuracy_cdf())
    for fold in result.folds:
        if fold.loss_history:
            with open(out_dir / f"fold{fold.fold}_loss.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["epoch", "train_loss", "val_loss"])
                for i, loss in enumerate(fold.loss_history, start=1):
                    writer.writerow([i, f"{loss:.9g}", ""])
    _write_manifest(
        out_dir,
        "evaluate",
        {"corpus": str(args.corpus), "target": args.target, "k": args.k, "seed": args.seed},
        {"mean_accuracy": result.mean_accuracy},
    )
    print(f"{args.target}: mean {args.k}-fold accuracy {result.mean_accuracy:.4f}")
    return 0


def _cmd_predict(args) -> int:
    engine = Engine.load(args.models, store_path=Path(args.models) / "cli_records.jsonl")
    outputs = []
    for clip_path in args.clips:
        payload = Path(clip_path).read_bytes()
        response = engine.screen_clip(payload, persist=False)
        entry = {"clip": str(clip_path), **response.to_dict()}
        outputs.append(entry)
    result: dict = {"clips": outputs}
    verdicts = [o for o in outputs if o["result"] != AppResult.NOT_A_COUGH.value]
    if len(args.clips) >= 3 and len(verdicts) >= 3:
        vote = multi_sample_vote([AppResult(o["result"]) for o in verdicts])
        result["session_result"] = vote.value
    print(json.dumps(result if len(outputs) > 1 else outputs[0], indent=2))
    return 0


def _cmd_extract_features(args) -> int:
    corp = load_corpus(args.corpus)
    analysis.export_features(corp, args.out)
    print(f"wrote features for {len(corp)} samples -> {args.out}")
    return 0


def _cmd_tsne(args) -> int:
    if args.features:
        ids, labels, matrix = analysis.load_features_csv(args.features)
    else:
        corp = load_corpus(args.corpus)
        ids, labels, matrix = analysis.corpus_features(corp)
    embedding = analysis.tsne(
        matrix,
        labels=labels,
        perplexity=args.perplexity,
        iterations=args.iterations,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )
    out = Path(args.out)
    analysis.write_embedding_csv(embedding, ids, out.with_suffix(".csv"))
    analysis.write_embedding_svg(embedding, out.with_suffix(".svg"))
    print(
        f"embedded {len(ids)} samples; final KL {embedding.kl_history[-1]:.4f}; "
        f"wrote {out.with_suffix('.csv')} and {out.with_suffix('.svg')}"
    )
    return 0


def _cmd_mediator_analyze(args) -> int:
    report = mediator.independence_analysis(args.sens, args.spec, args.d)
    payload = {
        "p_covid_given_covid": report.p_covid_given_covid,
        "p_covid_given_not": report.p_covid_given_not,
        "p_not_given_not": report.p_not_given_not,
        "p_not_given_covid": report.p_not_given_covid,
        "p_inconclusive_given_covid": report.p_inconclusive_given_covid,
        "p_inconclusive_given_not": report.p_inconclusive_given_not,
        "d": list(report.d),
        "conditional_sum": report.conditional_sum,
    }
    if args.json:
        print(json.dumps(payload, indent=2))
        return 0
    width = max(len(desc) for desc, _ in mediator.report_rows(report))
    print(f"{'Event':<{width}}  Probability")
    for desc, prob in mediator.report_rows(report):
        print(f"{desc:<{width}}  {prob:.6g}")
    print(f"{'inconclusive conditional sum':<{width}}  {report.conditional_sum:.6g}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    config = ServiceConfig.load(args.config)
    if args.host:
        config.host = args.host
    if args.port:
        config.port = args.port
    if args.models:
        config.model_dir = args.models
    if args.store:
        config.store_path = args.store
    serve(config)
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_train_flags(p, default_epochs=5):
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=default_epochs)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)


def build_parser() -> _Parser:
    parser = _Parser(prog="coughscreen", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth-corpus", help="generate a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["detection", "diagnosis"], default="diagnosis")
    p.add_argument("--classes", help="comma-separated class list overriding --kind")
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-detector", help="train the cough detector CNN")
    _add_train_flags(p)

    p = sub.add_parser("train-dtl-mc", help="train the 4-class transfer CNN")
    _add_train_flags(p)
    p.add_argument("--detector", required=True, help="trained detector model file")

    p = sub.add_parser("train-dtl-bc", help="train the binary transfer CNN")
    _add_train_flags(p)
    p.add_argument("--detector", required=True, help="trained detector model file")

    p = sub.add_parser("train-cml-mc", help="train the feature-vector SVM")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel", choices=["rbf", "linear"], default="rbf")
    p.add_argument("--c-grid", default="0.1,1,10,100")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--max-iter", type=int, default=100_000)

    p = sub.add_parser("evaluate", help="k-fold cross-validation of one classifier")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", choices=["detector", "dtl-mc", "dtl-bc", "cml-mc"], required=True)
    p.add_argument("--detector", help="trained detector (for transfer targets)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)

    p = sub.add_parser("predict", help="screen WAV clip(s) with trained models")
    p.add_argument("--models", required=True, help="directory holding the four model files")
    p.add_argument("clips", nargs="+")

    p = sub.add_parser("extract-features", help="export per-sample feature vectors as CSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("tsne", help="2-D embedding of feature vectors (CSV + SVG)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--features", help="feature CSV from extract-features")
    src.add_argument("--corpus")
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--learning-rate", type=float, default=200.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("mediator-analyze", help="closed-form outcome probability table")
    p.add_argument("--sens", type=float, nargs=3, required=True,
                   metavar=("S1", "S2", "S3"))
    p.add_argument("--spec", type=float, nargs=3, required=True,
                   metavar=("T1", "T2", "T3"))
    p.add_argument("--d", type=float, nargs=6, default=[1.0] * 6)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("serve", help="run the HTTP screening service")
    p.add_argument("--config")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--models")
    p.add_argument("--store")

    return parser


_COMMANDS = {
    "synth-corpus": _cmd_synth_corpus,
    "train-detector": _cmd_train_detector,
    "train-dtl-mc": lambda a: _cmd_train_transfer(a, binary=False),
    "train-dtl-bc": lambda a: _cmd_train_transfer(a, binary=True),
    "train-cml-mc": _cmd_train_cml_mc,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
    "extract-features": _cmd_extract_features,
    "tsne": _cmd_tsne,
    "mediator-analyze": _cmd_mediator_analyze,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage()
            return USAGE_ERROR
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    except (AudioError, CorpusError, SvmError, NetError, FileNotFoundError,
            mediator.MediatorError, analysis.AnalysisError,
            evaluation.EvaluationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except KeyboardInterrupt:
        return INTERNAL_ERROR
    except Exception as exc:  # pragma: no cover - guarded catch-all
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
