"""Command-line front end wiring data, training, evaluation, and analysis.

Exit codes: 0 success, 1 internal error, 2 configuration error, 3 data error.
Diagnostics go to stderr; data goes to files or stdout. Every command that
creates output files writes a RunManifest before doing the work, so a run can
be reproduced from the manifest alone after its outputs are deleted.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import traceback

import numpy as np

from . import __version__
from .data import (
    LabeledDataset,
    generate_synthetic,
    load_dataset,
    load_embeddings,
    save_dataset,
    write_embeddings,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetFormatError,
    EmbeddingFormatError,
    PrototexError,
)
from .explain import (
    association_matrix,
    explain_prediction,
    faithful_label,
    knn_classify,
    nearest_examples_per_prototype,
    segregation_metric,
    soft_cluster_build,
    soft_cluster_infer,
)
from .metrics import bootstrap_significance, f1_scores, subclass_f1
from .model import load_checkpoint, predict_batch, save_checkpoint
from .train import TrainConfig, TrainData, resolve_config, run_training

SEED_ENV = "PTEX_SEED"


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def resolve_seed(flag_value: int | None, fallback: int = 0) -> int:
    """Explicit flag wins, then the PTEX_SEED environment variable."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get(SEED_ENV)
    if env is None:
        return fallback
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}")


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@dataclasses.dataclass
class RunManifest:
    """Everything needed to replay a run: resolved parameters, input digests,
    seed, tool version, and where the outputs go."""

    command: str
    version: str
    seed: int
    params: dict
    inputs: dict  # name -> {"path": ..., "sha256": ...}
    outputs: dict  # name -> path

    def write(self, path: str) -> None:
        write_json(path, dataclasses.asdict(self))

    @classmethod
    def load(cls, path: str) -> "RunManifest":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
            return cls(**raw)
        except (json.JSONDecodeError, TypeError) as exc:
            raise DatasetFormatError(f"bad manifest {path}: {exc}")

    def check_inputs(self) -> None:
        for name, entry in self.inputs.items():
            actual = sha256_file(entry["path"])
            if actual != entry["sha256"]:
                raise DatasetFormatError(
                    f"{name} file {entry['path']} changed since the manifest "
                    f"was written (sha256 {actual[:12]} != {entry['sha256'][:12]})"
                )


def input_entry(path: str) -> dict:
    return {"path": path, "sha256": sha256_file(path)}


def _load_pair(data_path: str, emb_path: str):
    dataset = load_dataset(data_path)
    embeddings = load_embeddings(emb_path, dataset)
    return dataset, embeddings


def _split_view(dataset: LabeledDataset, embeddings, name: str):
    idx = dataset.split_indices()
    if name not in idx:
        raise DatasetFormatError(f"dataset has no examples tagged split={name!r}")
    return dataset.subset(idx[name]), embeddings.subset(idx[name])


# ---------------------------------------------------------------------------
# train


def report_to_dict(report) -> dict:
    return {
        "loss_trace": [dataclasses.asdict(e) for e in report.loss_trace],
        "val_f1": list(report.val_f1),
        "best_metric": report.best_metric,
        "best_eval": report.best_eval,
        "stopped_early": report.stopped_early,
        "epochs_run": report.epochs_run,
    }


def cmd_train(args) -> int:
    if args.from_manifest:
        for flag in ("data", "emb", "out"):
            if getattr(args, flag) is not None:
                raise ConfigError(f"--{flag} conflicts with --from-manifest")
        manifest = RunManifest.load(args.from_manifest)
        if manifest.command != "train":
            raise ConfigError(f"manifest describes a {manifest.command!r} run")
        manifest.check_inputs()
        config = TrainConfig(**manifest.params)
        data_path = manifest.inputs["dataset"]["path"]
        emb_path = manifest.inputs["embeddings"]["path"]
        out_ckpt = manifest.outputs["checkpoint"]
        out_report = manifest.outputs["report"]
        manifest_path = args.from_manifest
    else:
        if args.data is None or args.emb is None or args.out is None:
            raise ConfigError("train needs --data, --emb and --out")
        config = TrainConfig(
            algorithm=args.algo,
            m=args.num_prototypes,
            neg_count=args.neg_count,
            k=args.epochs,
            delta=args.delta,
            gamma=args.gamma,
            lambda1=args.lambda1,
            lambda2=args.lambda2,
            lambda_interleaved=args.lambda_interleaved,
            lr=args.lr,
            projection_lr_scale=args.projection_lr_scale,
            batch_size=args.batch_size,
            seed=resolve_seed(args.seed),
            normalize=not args.no_normalize,
            patience=args.patience,
            proto_dim=args.proto_dim,
            n_classes=args.classes,
        )
        data_path, emb_path, out_ckpt = args.data, args.emb, args.out
        out_report = args.report or out_ckpt + ".report.json"
        manifest_path = args.manifest or out_ckpt + ".manifest.json"

    dataset, embeddings = _load_pair(data_path, emb_path)
    data = TrainData.from_dataset(dataset, embeddings)
    config = resolve_config(config, data)

    manifest = RunManifest(
        command="train",
        version=__version__,
        seed=config.seed,
        params=dataclasses.asdict(config),
        inputs={"dataset": input_entry(data_path), "embeddings": input_entry(emb_path)},
        outputs={"checkpoint": out_ckpt, "report": out_report},
    )
    manifest.write(manifest_path)

    head, report = run_training(data, config)
    save_checkpoint(head, config, out_ckpt)
    write_json(out_report, report_to_dict(report))
    _say(
        f"wrote {out_ckpt} (best dev macro-F1 {report.best_metric:.4f} "
        f"after {report.epochs_run} epochs) and {out_report}"
    )
    return 0


# ---------------------------------------------------------------------------
# eval


def eval_to_dict(result) -> dict:
    out = {
        "f1_negative": result.f1_negative,
        "f1_positive": result.f1_positive,
        "f1_macro": result.f1_macro,
        "confusion": result.confusion,
    }
    if result.per_subcategory:
        out["per_subcategory"] = result.per_subcategory
    return out


def write_predictions(path: str, ids: list[str], preds: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex_id, pred in zip(ids, preds):
            fh.write(json.dumps({"id": ex_id, "label": int(pred)}) + "\n")


def read_predictions(path: str, ids: list[str]) -> np.ndarray:
    """Load a predictions file and align it to the given id order."""
    by_id: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                by_id[row["id"]] = int(row["label"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"bad prediction row: {exc}", line=lineno)
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DatasetFormatError(
            f"{path} lacks predictions for {len(missing)} ids (first: {missing[0]!r})"
        )
    return np.array([by_id[i] for i in ids], dtype=np.int64)


def cmd_eval(args) -> int:
    if (args.ckpt is None) == (args.baseline is None):
        raise ConfigError("choose exactly one of --ckpt or --baseline")
    dataset, embeddings = _load_pair(args.data, args.emb)
    split_ds, split_emb = _split_view(dataset, embeddings, args.split)
    gold = split_ds.labels()

    if args.ckpt is not None:
        head, _ = load_checkpoint(args.ckpt)
        preds, _ = predict_batch(head, split_emb.vectors)
        source = args.ckpt
    elif args.baseline == "knn":
        train_ds, train_emb = _split_view(dataset, embeddings, "train")
        preds = knn_classify(
            train_emb.vectors, train_ds.labels(), split_emb.vectors, k=args.k
        )
        source = f"knn(k={args.k})"
    else:
        rng = np.random.default_rng(resolve_seed(args.seed))
        n_classes = max(2, int(gold.max()) + 1)
        preds = rng.integers(0, n_classes, size=gold.size)
        source = "random"

    result = f1_scores(preds, gold)
    report = {"source": source, "split": args.split, "n": int(gold.size)}
    report.update(eval_to_dict(result))
    subcats = [ex.subcategory for ex in split_ds.examples]
    if any(s is not None for s in subcats):
        report["per_subcategory"] = subclass_f1(preds, gold, subcats)

    if args.compare is not None:
        other = read_predictions(args.compare, split_ds.ids())
        p_value = bootstrap_significance(
            preds, other, gold, n_resamples=args.resamples,
            seed=resolve_seed(args.seed),
        )
        report["compare"] = {"path": args.compare, "p_value": p_value}
        print(f"p={p_value:.4f} (one-sided, {source} vs {args.compare})")

    outputs = {}
    if args.out is not None:
        outputs["report"] = args.out
    if args.preds_out is not None:
        outputs["predictions"] = args.preds_out
    if outputs:
        inputs = {"dataset": input_entry(args.data), "embeddings": input_entry(args.emb)}
        if args.ckpt is not None:
            inputs["checkpoint"] = input_entry(args.ckpt)
        manifest_path = args.manifest or next(iter(outputs.values())) + ".manifest.json"
        RunManifest(
            command="eval",
            version=__version__,
            seed=resolve_seed(args.seed),
            params={"split": args.split, "baseline": args.baseline, "k": args.k,
                    "compare": args.compare, "resamples": args.resamples},
            inputs=inputs,
            outputs=outputs,
        ).write(manifest_path)
    if args.preds_out is not None:
        write_predictions(args.preds_out, split_ds.ids(), preds)
    if args.out is not None:
        write_json(args.out, report)
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# explain


def explanation_to_dict(expl) -> dict:
    return {
        "example_id": expl.example_id,
        "predicted_label": expl.predicted_label,
        "faithful_label": faithful_label(expl),
        "probabilities": expl.probabilities.tolist(),
        "top_k": expl.top_k,
        "prototypes": [
            {
                "index": p.index,
                "class": p.class_label,
                "distance": p.distance,
                "raw_distance": p.raw_distance,
                "weights": p.weights.tolist(),
                "weighted_contribution": p.weighted_contribution.tolist(),
                "exemplars": [dataclasses.asdict(e) for e in p.exemplars],
            }
            for p in expl.ranking[: expl.top_k]
        ],
    }


def cmd_explain(args) -> int:
    if (args.id is None) == (not args.all):
        raise ConfigError("choose exactly one of --id or --all")
    head, _ = load_checkpoint(args.ckpt)
    dataset, embeddings = _load_pair(args.data, args.emb)
    train_ds, train_emb = _split_view(dataset, embeddings, "train")

    def explain_row(row_index: int, ex_id: str):
        return explain_prediction(
            head, train_ds, train_emb, embeddings.vectors[row_index],
            example_id=ex_id, top_k=args.top_k,
            exemplars_per_proto=args.exemplars,
        )

    if args.id is not None:
        position = {ex_id: i for i, ex_id in enumerate(dataset.ids())}
        if args.id not in position:
            raise DatasetFormatError(f"unknown example id {args.id!r}")
        record = explanation_to_dict(explain_row(position[args.id], args.id))
        if args.out is not None:
            _explain_manifest(args, {"report": args.out})
            write_json(args.out, record)
        else:
            print(json.dumps(record, indent=2, sort_keys=True))
        return 0

    test_idx = dataset.split_indices().get("test")
    if test_idx is None:
        raise DatasetFormatError("dataset has no examples tagged split='test'")
    records = (
        explanation_to_dict(explain_row(int(i), dataset.examples[int(i)].id))
        for i in test_idx
    )
    if args.out is not None:
        _explain_manifest(args, {"report": args.out})
        with open(args.out, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        _say(f"wrote {len(test_idx)} explanations to {args.out}")
    else:
        for record in records:
            print(json.dumps(record, sort_keys=True))
    return 0


def _explain_manifest(args, outputs: dict) -> None:
    manifest_path = args.manifest or next(iter(outputs.values())) + ".manifest.json"
    RunManifest(
        command="explain",
        version=__version__,
        seed=0,
        params={"id": args.id, "all": args.all, "top_k": args.top_k,
                "exemplars": args.exemplars},
        inputs={
            "dataset": input_entry(args.data),
            "embeddings": input_entry(args.emb),
            "checkpoint": input_entry(args.ckpt),
        },
        outputs=outputs,
    ).write(manifest_path)


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args) -> int:
    head, _ = load_checkpoint(args.ckpt)
    dataset, embeddings = _load_pair(args.data, args.emb)
    train_ds, train_emb = _split_view(dataset, embeddings, "train")

    nearest = nearest_examples_per_prototype(head, train_emb, args.k)
    names, matrix = association_matrix(head, train_ds, train_emb)
    report = {
        "k": args.k,
        "n_prototypes": head.n_prototypes,
        "prototype_classes": head.proto_class.tolist(),
        "segregation": segregation_metric(nearest),
        "association": {"groups": names, "rows": matrix.tolist()},
    }

    if args.soft_cluster:
        # the clustering lives in the head's latent space
        train_z = train_emb.vectors.astype(np.float64) @ head.projection
        model = soft_cluster_build(head.prototypes, train_z, train_ds.labels())
        if args.input is not None:
            query = load_embeddings(args.input)
        else:
            _, query = _split_view(dataset, embeddings, "test")
        query_z = query.vectors.astype(np.float64) @ head.projection
        posteriors = []
        for i in range(len(query)):
            post = soft_cluster_infer(model, head.prototypes, query_z[i])
            posteriors.append(
                {"id": query.ids[i], "p_positive": post.p_positive,
                 "theta": post.theta.tolist()}
            )
        report["soft_cluster"] = {"psi": model.psi.tolist(), "posteriors": posteriors}

    if args.out is not None:
        inputs = {
            "dataset": input_entry(args.data),
            "embeddings": input_entry(args.emb),
            "checkpoint": input_entry(args.ckpt),
        }
        if args.soft_cluster and args.input is not None:
            inputs["query"] = input_entry(args.input)
        manifest_path = args.manifest or args.out + ".manifest.json"
        RunManifest(
            command="analyze",
            version=__version__,
            seed=0,
            params={"k": args.k, "soft_cluster": args.soft_cluster},
            inputs=inputs,
            outputs={"report": args.out},
        ).write(manifest_path)
        write_json(args.out, report)
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    seed = resolve_seed(args.seed)
    params = {
        "n": args.n, "D": args.dim, "pos_frac": args.pos_frac,
        "signal_dims": args.signal_dims, "noise_scale": args.noise_scale,
        "n_clusters": args.clusters, "separation": args.separation,
        "radius_sigma": args.radius_sigma, "overlap_cos": args.overlap_cos,
        "label_noise": args.label_noise,
    }
    # validate before touching the filesystem
    dataset, embeddings = generate_synthetic(rng=seed, **params)
    manifest_path = args.manifest or args.out_data + ".manifest.json"
    RunManifest(
        command="synth",
        version=__version__,
        seed=seed,
        params=params,
        inputs={},
        outputs={"dataset": args.out_data, "embeddings": args.out_emb},
    ).write(manifest_path)
    save_dataset(dataset, args.out_data)
    write_embeddings(args.out_emb, embeddings)
    _say(
        f"wrote {args.out_data} ({len(dataset)} examples) and "
        f"{args.out_emb} (D={embeddings.dim})"
    )
    return 0


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prototex",
        description="Prototype-head training, evaluation and explanation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    defaults = TrainConfig()

    p_train = sub.add_parser("train", help="fit a head and save a checkpoint")
    p_train.add_argument("--algo", choices=("interleaved", "simple"),
                         default=defaults.algorithm)
    p_train.add_argument("--data", help="dataset JSONL path")
    p_train.add_argument("--emb", help="embedding PTXE path")
    p_train.add_argument("--out", help="checkpoint output path")
    p_train.add_argument("--report", help="report JSON path (default <out>.report.json)")
    p_train.add_argument("--manifest", help="manifest path (default <out>.manifest.json)")
    p_train.add_argument("--from-manifest", metavar="PATH",
                         help="replay a previous run from its manifest")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--num-prototypes", type=int, default=defaults.m)
    p_train.add_argument("--classes", type=int, default=defaults.n_classes)
    p_train.add_argument("--neg-count", type=int, default=defaults.neg_count)
    p_train.add_argument("--epochs", type=int, default=defaults.k,
                         help="outer iteration budget")
    p_train.add_argument("--delta", type=int, default=defaults.delta)
    p_train.add_argument("--gamma", type=int, default=defaults.gamma)
    p_train.add_argument("--lambda1", type=float, default=defaults.lambda1)
    p_train.add_argument("--lambda2", type=float, default=defaults.lambda2)
    p_train.add_argument("--lambda-interleaved", type=float,
                         default=defaults.lambda_interleaved)
    p_train.add_argument("--lr", type=float, default=defaults.lr)
    p_train.add_argument("--projection-lr-scale", type=float,
                         default=defaults.projection_lr_scale)
    p_train.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p_train.add_argument("--patience", type=int, default=defaults.patience)
    p_train.add_argument("--proto-dim", type=int, default=None)
    p_train.add_argument("--no-normalize", action="store_true",
                         help="feed raw distances to the linear layer")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint or baseline on a split")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--emb", required=True)
    p_eval.add_argument("--ckpt")
    p_eval.add_argument("--baseline", choices=("knn", "random"))
    p_eval.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p_eval.add_argument("--k", type=int, default=5, help="neighbors for --baseline knn")
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--compare", metavar="PREDS",
                        help="predictions file to test against (one-sided bootstrap)")
    p_eval.add_argument("--resamples", type=int, default=10000)
    p_eval.add_argument("--out", help="report JSON path (default stdout)")
    p_eval.add_argument("--preds-out", help="write predictions JSONL here")
    p_eval.add_argument("--manifest")
    p_eval.set_defaults(func=cmd_eval)

    p_explain = sub.add_parser("explain", help="case-based explanation per example")
    p_explain.add_argument("--ckpt", required=True)
    p_explain.add_argument("--data", required=True)
    p_explain.add_argument("--emb", required=True)
    p_explain.add_argument("--id", help="explain one example by id")
    p_explain.add_argument("--all", action="store_true",
                           help="explain every test example")
    p_explain.add_argument("--top-k", type=int, default=5)
    p_explain.add_argument("--exemplars", type=int, default=1,
                           help="training exemplars per prototype")
    p_explain.add_argument("--out", help="JSON (single) or JSONL (--all) output path")
    p_explain.add_argument("--manifest")
    p_explain.set_defaults(func=cmd_explain)

    p_analyze = sub.add_parser(
        "analyze", help="prototype segregation and association reports"
    )
    p_analyze.add_argument("--ckpt", required=True)
    p_analyze.add_argument("--data", required=True)
    p_analyze.add_argument("--emb", required=True)
    p_analyze.add_argument("--k", type=int, default=5,
                           help="neighbors per prototype")
    p_analyze.add_argument("--soft-cluster", action="store_true",
                           help="add reciprocal-distance posterior estimates")
    p_analyze.add_argument("--input", metavar="PTXE",
                           help="query embeddings for --soft-cluster "
                                "(default: the test split)")
    p_analyze.add_argument("--out", help="report JSON path (default stdout)")
    p_analyze.add_argument("--manifest")
    p_analyze.set_defaults(func=cmd_analyze)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset + embeddings")
    p_synth.add_argument("--n", type=int, required=True)
    p_synth.add_argument("--dim", type=int, required=True)
    p_synth.add_argument("--pos-frac", type=float, default=0.35)
    p_synth.add_argument("--signal-dims", type=int, default=4)
    p_synth.add_argument("--noise-scale", type=float, default=0.7)
    p_synth.add_argument("--clusters", type=int, default=4)
    p_synth.add_argument("--separation", type=float, default=4.0)
    p_synth.add_argument("--radius-sigma", type=float, default=0.55)
    p_synth.add_argument("--overlap-cos", type=float, default=0.5)
    p_synth.add_argument("--label-noise", type=float, default=0.15)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--out-data", default="synth.jsonl")
    p_synth.add_argument("--out-emb", default="synth.ptxe")
    p_synth.add_argument("--manifest")
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad flags, 0 on --help
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except ConfigError as exc:
        _say(f"error: {exc}")
        return 2
    except (DatasetFormatError, EmbeddingFormatError, CheckpointError,
            FileNotFoundError) as exc:
        _say(f"error: {exc}")
        return 3
    except PrototexError as exc:
        _say(f"error: {exc}")
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
