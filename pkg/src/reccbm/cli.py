"""Command-line entry point.

Subcommands: synth, train, eval, intervene, trace, report, serve, gradcheck.
Every run writes exactly one manifest.json (command, config snapshot, seeds,
input/output paths with sha256 hashes, timestamps) into the output directory.
Config precedence: flags > config file > defaults. REC_CBM_LOG sets the log
level.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from reccbm.analysis import (
    InterventionPolicy,
    build_trace,
    denoising_report,
    intervene_and_score,
)
from reccbm.checkpoint import load_checkpoint, save_checkpoint
from reccbm.data import (
    RubricSpec,
    assign_splits,
    generate_synthetic,
    load_dataset,
    load_spec,
    save_dataset,
    save_spec,
)
from reccbm.embedding import EmbeddingProviderConfig
from reccbm.gradcheck import TOLERANCE, format_audit_table, run_gradient_audit
from reccbm.trainer import TrainConfig, evaluate, train_full

logger = logging.getLogger("reccbm.cli")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Manifest:
    """Collects one run's provenance; written once on completion (or startup for serve)."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.record = {
            "command": command,
            "argv": {k: v for k, v in vars(args).items() if k != "func" and v is not None},
            "config": {},
            "seeds": [],
            "inputs": {},
            "outputs": {},
            "started_at": datetime.now(timezone.utc).isoformat(),
            "finished_at": None,
        }

    def add_input(self, path):
        if path:
            self.record["inputs"][str(path)] = _sha256(path)

    def add_output(self, path):
        if path:
            self.record["outputs"][str(path)] = _sha256(path)

    def write(self, outdir):
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        self.record["finished_at"] = datetime.now(timezone.utc).isoformat()
        path = outdir / "manifest.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.record, f, indent=2)
            f.write("\n")
        return path


def _load_configs(args) -> tuple[TrainConfig, EmbeddingProviderConfig]:
    train_d, embed_d = {}, {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as f:
            raw = json.load(f)
        train_d = raw.get("train", {})
        embed_d = raw.get("embedding", {})
    return TrainConfig.from_dict({**TrainConfig().to_dict(), **train_d}), (
        EmbeddingProviderConfig.from_dict({**EmbeddingProviderConfig().to_dict(), **embed_d})
    )


def _load_data_for_model(model, data_path):
    return load_dataset(data_path, spec=model.spec)


def _correlation_matrix(K: int, rho: float, pair: str | None) -> np.ndarray:
    corr = np.full((K, K), rho)
    np.fill_diagonal(corr, 1.0)
    if pair:
        i, j, r = pair.split(",")
        corr[int(i), int(j)] = corr[int(j), int(i)] = float(r)
    return corr


def cmd_synth(args) -> int:
    manifest = Manifest("synth", args)
    if args.spec:
        spec = load_spec(args.spec)
        manifest.add_input(args.spec)
    else:
        spec = RubricSpec(
            num_concepts=args.concepts,
            max_concept_level=args.levels,
            max_grade=args.grades,
            concept_names=tuple(f"concept{k}" for k in range(args.concepts)),
        )
    corr = _correlation_matrix(spec.num_concepts, args.rho, args.rho_pair)
    ds = generate_synthetic(spec, args.n, corr, args.noise_sd, seed=args.seed)
    ratios = tuple(float(r) for r in args.ratios.split(":"))
    total = sum(ratios)
    ds = assign_splits(ds, tuple(r / total for r in ratios), seed=args.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    spec_path, data_path = outdir / "spec.json", outdir / "data.jsonl"
    save_spec(spec, spec_path)
    save_dataset(ds, data_path)
    manifest.record["seeds"] = [args.seed]
    manifest.add_output(spec_path)
    manifest.add_output(data_path)
    manifest.write(outdir)
    print(json.dumps({"instances": len(ds), "spec": str(spec_path), "data": str(data_path)}))
    return 0


def cmd_train(args) -> int:
    manifest = Manifest("train", args)
    train_cfg, embed_cfg = _load_configs(args)
    spec = load_spec(args.spec)
    ds = load_dataset(args.data, spec=spec)
    manifest.add_input(args.spec)
    manifest.add_input(args.data)
    if args.config:
        manifest.add_input(args.config)
    if not ds.splits:
        logger.info("dataset has no split assignment; using a seeded 7:2:1 cut")
        ds = assign_splits(ds, (0.7, 0.2, 0.1), seed=train_cfg.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    seeds = [train_cfg.seed + i for i in range(args.seeds)]
    manifest.record["seeds"] = seeds
    manifest.record["config"] = {"train": train_cfg.to_dict(), "embedding": embed_cfg.to_dict(),
                                 "head": args.head}
    per_seed = []
    for seed in seeds:
        cfg_i = TrainConfig.from_dict({**train_cfg.to_dict(), "seed": seed})
        embed_i = EmbeddingProviderConfig.from_dict({**embed_cfg.to_dict(), "seed": seed})
        model = train_full(ds, ds, cfg_i, embed_i, head_mode=args.head)
        ckpt_path = outdir / f"ckpt_seed{seed}.bin"
        save_checkpoint(model, ckpt_path)
        manifest.add_output(ckpt_path)
        test = ds.split("test") or ds.instances
        metrics = evaluate(model, test).to_dict()
        per_seed.append({"seed": seed, "checkpoint": str(ckpt_path), "test": metrics})
        logger.info("seed %d: %s", seed, metrics)
    aggregate = {
        name: {
            "mean": float(np.mean([r["test"][name] for r in per_seed])),
            "sd": float(np.std([r["test"][name] for r in per_seed])),
        }
        for name in ("t_acc", "t_f1", "c_acc", "c_f1")
    }
    metrics_path = outdir / "metrics.json"
    with open(metrics_path, "w", encoding="utf-8") as f:
        json.dump({"per_seed": per_seed, "aggregate": aggregate}, f, indent=2)
        f.write("\n")
    manifest.add_output(metrics_path)
    manifest.write(outdir)
    print(json.dumps(aggregate))
    return 0


def cmd_eval(args) -> int:
    manifest = Manifest("eval", args)
    model = load_checkpoint(args.checkpoint)
    ds = _load_data_for_model(model, args.data)
    manifest.add_input(args.checkpoint)
    manifest.add_input(args.data)
    instances = ds.split(args.split) if ds.splits else ds.instances
    metrics = evaluate(model, instances).to_dict()
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    metrics_path = outdir / "metrics.json"
    with open(metrics_path, "w", encoding="utf-8") as f:
        json.dump({"split": args.split, "metrics": metrics}, f, indent=2)
        f.write("\n")
    manifest.add_output(metrics_path)
    manifest.write(outdir)
    print(json.dumps(metrics))
    return 0


def cmd_intervene(args) -> int:
    manifest = Manifest("intervene", args)
    model = load_checkpoint(args.checkpoint)
    ds = _load_data_for_model(model, args.data)
    manifest.add_input(args.checkpoint)
    manifest.add_input(args.data)
    instances = ds.split(args.split) if ds.splits else ds.instances
    K = model.spec.num_concepts
    kinds = ("oracle", "wrong", "random", "none") if args.policy == "all" else (args.policy,)
    k = K if args.k is None else args.k
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    curves_path = outdir / "intervention.jsonl"
    rows = []
    with open(curves_path, "w", encoding="utf-8") as f:
        for kind in kinds:
            policy = InterventionPolicy(kind, k, seed=args.seed, wrong_rule=args.wrong_rule)
            res = intervene_and_score(instances, model, policy)
            record = {"policy": kind, "k": k, "wrong_rule": args.wrong_rule,
                      "metrics": res.metrics.to_dict(), "curve": res.curve_dict()}
            rows.append(record)
            f.write(json.dumps(record) + "\n")
    if args.csv:
        csv_path = outdir / "intervention.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["policy"] + [f"k={i}" for i in range(K + 1)])
            for record in rows:
                writer.writerow([record["policy"]]
                                + [record["curve"][str(i)] for i in range(K + 1)])
        manifest.add_output(csv_path)
    manifest.add_output(curves_path)
    manifest.write(outdir)
    print(json.dumps({r["policy"]: r["curve"] for r in rows}))
    return 0


def cmd_trace(args) -> int:
    manifest = Manifest("trace", args)
    model = load_checkpoint(args.checkpoint)
    ds = _load_data_for_model(model, args.data)
    manifest.add_input(args.checkpoint)
    manifest.add_input(args.data)
    try:
        instance = ds.by_id(args.instance)
    except KeyError:
        raise SystemExit(f"error: instance {args.instance!r} not found in {args.data}")
    trace = build_trace(instance, model, top_n_tokens=args.top_n)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    trace_path = outdir / f"trace_{args.instance}.json"
    with open(trace_path, "w", encoding="utf-8") as f:
        json.dump(trace.to_dict(), f, indent=2)
        f.write("\n")
    manifest.add_output(trace_path)
    manifest.write(outdir)
    print(json.dumps(trace.to_dict()))
    return 0


def cmd_report(args) -> int:
    manifest = Manifest("report", args)
    model = load_checkpoint(args.checkpoint)
    ds = _load_data_for_model(model, args.data)
    manifest.add_input(args.checkpoint)
    manifest.add_input(args.data)
    instances = ds.split(args.split) if ds.splits else ds.instances
    rep = denoising_report(model, instances)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    report_path = outdir / "denoising.jsonl"
    with open(report_path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"matrix": "empirical", "values": rep.empirical.tolist(),
                            "zero_variance_concepts": list(rep.zero_variance_concepts)}) + "\n")
        f.write(json.dumps({"matrix": "partial", "values": rep.partial.tolist()}) + "\n")
        f.write(json.dumps({"summary": rep.summary}) + "\n")
    if args.csv:
        for name, matrix in (("empirical", rep.empirical), ("partial", rep.partial)):
            csv_path = outdir / f"denoising_{name}.csv"
            with open(csv_path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow([""] + list(model.spec.concept_names))
                for cname, row in zip(model.spec.concept_names, matrix):
                    writer.writerow([cname] + [float(v) for v in row])
            manifest.add_output(csv_path)
    manifest.add_output(report_path)
    manifest.write(outdir)
    print(json.dumps(rep.summary))
    return 0


def cmd_serve(args) -> int:
    from reccbm.service import make_server, run_server

    manifest = Manifest("serve", args)
    model = load_checkpoint(args.checkpoint)
    manifest.add_input(args.checkpoint)
    dataset = None
    if args.data:
        dataset = _load_data_for_model(model, args.data)
        manifest.add_input(args.data)
    manifest.write(args.out)
    server = make_server(model, dataset, port=args.port, split=args.split)
    print(json.dumps({"serving": f"http://127.0.0.1:{server.server_address[1]}"}), flush=True)
    run_server(server)
    return 0


def cmd_gradcheck(args) -> int:
    manifest = Manifest("gradcheck", args)
    rows = run_gradient_audit(num_seeds=args.seeds)
    table = format_audit_table(rows)
    print(table)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    audit_path = outdir / "gradcheck.json"
    with open(audit_path, "w", encoding="utf-8") as f:
        json.dump([{"objective": r.objective, "param": r.param,
                    "max_rel_err": r.max_rel_err, "ok": r.ok} for r in rows], f, indent=2)
        f.write("\n")
    manifest.record["seeds"] = list(range(args.seeds))
    manifest.add_output(audit_path)
    manifest.write(outdir)
    ok = all(r.ok for r in rows)
    print(f"gradient audit {'passed' if ok else 'FAILED'} (tolerance {TOLERANCE})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reccbm",
        description="Rubric-aware concept-bottleneck grading engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus with splits")
    p.add_argument("--spec", help="rubric spec JSON (alternative to -K/-M/-S)")
    p.add_argument("-K", "--concepts", type=int, default=4)
    p.add_argument("-M", "--levels", type=int, default=3)
    p.add_argument("-S", "--grades", type=int, default=4)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--rho", type=float, default=0.0, help="uniform off-diagonal latent correlation")
    p.add_argument("--rho-pair", help="plant one pair, e.g. '0,1,0.9'")
    p.add_argument("--noise-sd", type=float, default=0.25)
    p.add_argument("--ratios", default="7:2:1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run both training stages, multi-seed")
    p.add_argument("--spec", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON file with {train: {...}, embedding: {...}}")
    p.add_argument("--seeds", type=int, default=1, help="number of seeds (base taken from config)")
    p.add_argument("--head", choices=("latent", "direct"), default="latent")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics of a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("intervene", help="intervention curves on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--policy", choices=("oracle", "wrong", "random", "none", "all"),
                   default="all")
    p.add_argument("--k", type=int, default=None, help="concepts to intervene (default: all)")
    p.add_argument("--seed", type=int, default=0, help="seed for the random policy")
    p.add_argument("--wrong-rule", choices=("farthest", "grade_min"), default="farthest")
    p.add_argument("--csv", action="store_true")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_intervene)

    p = sub.add_parser("trace", help="decision trace for one instance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--top-n", type=int, default=5)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("report", help="denoising analysis matrices")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--csv", action="store_true")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="read-only HTTP service over a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--split", default="test")
    p.add_argument("--port", type=int, default=8377)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("gradcheck", help="finite-difference audit of all losses")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("REC_CBM_LOG", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except FileNotFoundError as e:
        print(json.dumps({"error": f"missing file: {e.filename or e}"}), file=sys.stderr)
        return 1
    except Exception as e:
        print(json.dumps({"error": str(e), "type": type(e).__name__}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
