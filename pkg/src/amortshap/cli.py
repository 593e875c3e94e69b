"""Command-line entry point: ``amortshap <command> ...``.

Commands: gen, explain, refs, train, stability, faithfulness, bench, verify,
serve, recipe. Set AMORTSHAP_LOG=DEBUG|INFO|WARNING for log verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .amortized import AmortizedConfig, AmortizedModel, ReferenceDataset, build_reference_dataset, train_amortized
from .classifier import load_classifier, save_classifier, serve
from .core import DEFAULT_PAD, BudgetError, ContractViolation, NumericalError, RunManifest, derive_seed
from .faithfulness import DEFAULT_ALPHAS, faithfulness_curve, random_attributions, write_curve_csv
from .runner import (
    ExplainConfig,
    explain_dataset,
    explain_instance,
    read_attributions,
    read_dataset,
    resolve_label,
    verify_run,
    write_attributions,
    write_dataset,
)
from .stability import stability_sweep
from .toygen import ToySpec, balanced_subsample, generate_dataset

log = logging.getLogger("amortshap")

EXIT_OK, EXIT_FAILED_INSTANCES, EXIT_ERROR = 0, 1, 2


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def parse_method(text: str) -> tuple[str, int]:
    """``ks:200`` -> ("ks", 200); ``exact`` -> ("exact", 0)."""
    name, _, m = text.partition(":")
    return name, int(m) if m else 0


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _label_arg(text: str):
    return text if text == "pred" else int(text)


def _load_model(path):
    return AmortizedModel.load(path) if path else None


# ------------------------------------------------------------------ commands

def cmd_gen(args) -> int:
    spec = ToySpec(
        n=args.n, lengths=_ints(args.lengths), vocab_size=args.vocab_size, n_signal=args.signal,
        signal_scale=args.signal_scale, background_scale=args.background_scale, signal_rate=args.signal_rate,
        n_pairs=0 if args.kind == "additive" else args.pairs, pair_scale=args.pair_scale,
        label_noise=args.noise, num_classes=args.classes, kind=args.kind,
        value_mode="raw_score" if args.kind == "additive" else "probability", seed=args.seed,
    )
    toy = generate_dataset(spec)
    write_dataset(args.out, toy.seqs, toy.labels)
    save_classifier(toy.classifier, args.classifier_out)
    print(f"wrote {len(toy.seqs)} instances to {args.out}, classifier to {args.classifier_out}")
    return EXIT_OK


def cmd_explain(args) -> int:
    seqs, _ = read_dataset(args.input, args.pad)
    clf = load_classifier(args.classifier, args.value_mode, args.max_batch)
    try:
        model = _load_model(args.model)
        config = ExplainConfig(
            method=args.method, m=args.samples, master_seed=args.seed, label=_label_arg(args.label),
            pad=args.pad, cap=args.cap, normalization=args.normalization,
            model_digest=file_digest(args.model) if args.model else None,
        )
        result = explain_dataset(seqs, clf, config, model=model, workers=args.workers)
    finally:
        clf.close()
    mpath = write_attributions(args.out, result)
    print(f"wrote {len(result.attributions)} attributions to {args.out} (manifest {mpath.name})")
    for iid, err in result.errors.items():
        print(f"error: {iid}: {err}", file=sys.stderr)
    return EXIT_OK if result.ok else EXIT_FAILED_INSTANCES


def cmd_refs(args) -> int:
    seqs, _ = read_dataset(args.input, args.pad)
    clf = load_classifier(args.classifier, args.value_mode, args.max_batch)
    try:
        refs = build_reference_dataset(seqs, clf, args.method, args.samples, args.seed, args.pad)
    finally:
        clf.close()
    refs.write(args.out)
    print(f"wrote {len(refs)} reference records to {args.out} ({len(refs.skipped)} skipped)")
    return EXIT_OK if not refs.skipped else EXIT_FAILED_INSTANCES


def _train_config(args) -> AmortizedConfig:
    return AmortizedConfig(
        vocab_buckets=args.buckets, dim=args.dim, hidden=args.hidden, lr=args.lr, epochs=args.epochs,
        patience=args.patience, batch_size=args.batch_size, seed=args.seed,
        context_radius=args.context_radius, train_fraction=args.fraction,
    )


def cmd_train(args) -> int:
    refs = ReferenceDataset.read(args.refs)
    model, report = train_amortized(refs, _train_config(args))
    model.save(args.out)
    summary = report.to_dict()
    print(json.dumps({k: v for k, v in summary.items() if k != "history"}, indent=1))
    if args.report:
        Path(args.report).write_text(json.dumps(summary, indent=1) + "\n")
    return EXIT_OK


def _stability_explainer(clf, method, m, model, normalization, pad, cap):
    def explain(x, master_seed):
        y = clf.predicted_label(x)
        seed = derive_seed(master_seed, x.id, method)
        return explain_instance(x, clf, method, m, seed, y, model=model, normalization=normalization,
                                pad=pad, cap=cap).phi
    return explain


def cmd_stability(args) -> int:
    seqs, labels = read_dataset(args.input, args.pad)
    if args.balanced:
        if any(lbl is None for lbl in labels):
            raise ContractViolation("--balanced needs gold labels in the dataset")
        seqs, labels = balanced_subsample(seqs, labels, args.balanced, args.seed_base)
    if args.seeds < 2:
        raise ContractViolation("stability needs --seeds >= 2")
    seeds = [args.seed_base + r for r in range(args.seeds)]
    clf = load_classifier(args.classifier, args.value_mode, args.max_batch)
    model = _load_model(args.model)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = []
    failed = 0
    try:
        for text in args.methods.split(","):
            method, m = parse_method(text)
            explain = _stability_explainer(clf, method, m, model, args.normalization, args.pad, args.cap)
            report = stability_sweep(seqs, explain, seeds, _ints(args.topk), _ints(args.buckets),
                                     method=method, m=m, workers=args.workers)
            stem = out_dir / f"stability_{method}{'-' + str(m) if m else ''}"
            manifest = RunManifest(
                master_seed=args.seed_base, method=method, budget=m, classifier=clf.descriptor,
                value_mode=clf.value_mode, pad=args.pad,
                options={"seeds": seeds, "topk": _ints(args.topk), "buckets": _ints(args.buckets),
                         "balanced": args.balanced, "normalization": args.normalization,
                         "model": file_digest(args.model) if args.model else None},
            )
            doc = report.to_dict()
            doc["manifest_hash"] = manifest.digest()
            doc["manifest"] = manifest.to_dict()
            stem.with_suffix(".json").write_text(json.dumps(doc, indent=1) + "\n")
            report.write_csv(stem.with_suffix(".csv"))
            failed += report.n_failed
            agg = report.aggregate
            summary.append({"setting": text, **{k: agg[k] for k in ("spearman", "topk", "mse", "seconds_per_instance")},
                            "per_bucket": {b: v["spearman"] for b, v in report.per_bucket.items()}})
    finally:
        clf.close()
    (out_dir / "stability_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    for row in summary:
        tops = " ".join(f"top{k}={v:.2f}" if v is not None else f"top{k}=n/a" for k, v in row["topk"].items())
        sp = "n/a" if row["spearman"] is None else f"{row['spearman']:.3f}"
        print(f"{row['setting']:>12}  spearman={sp}  {tops}  mse={row['mse']:.3e}  "
              f"{row['seconds_per_instance']:.4f}s/it")
    return EXIT_OK if not failed else EXIT_FAILED_INSTANCES


def cmd_faithfulness(args) -> int:
    seqs, _ = read_dataset(args.input, args.pad)
    clf = load_classifier(args.classifier, args.value_mode, args.max_batch)
    try:
        if args.random_seed is not None:
            attrs = random_attributions(seqs, args.random_seed)
        else:
            attrs = {r["id"]: r["scores"] for r in read_attributions(args.attrs)}
        rows = faithfulness_curve(seqs, attrs, clf, _floats(args.alphas), pad=args.pad)
    finally:
        clf.close()
    write_curve_csv(args.out, rows)
    for r in rows:
        print(f"alpha={r['alpha']:.3f}  accuracy={r['accuracy']:.4f}  n={r['n_instances']}")
    return EXIT_OK


def run_bench(seqs, clf, methods, model=None, master_seed: int = 0, pad: str = DEFAULT_PAD,
              repeats: int = 1) -> list[dict]:
    """Per-instance latency and distinct classifier evaluations for each method."""
    labels = {x.id: resolve_label(x, clf, "pred") for x in seqs}
    rows = []
    for text in methods:
        method, m = parse_method(text)
        times, evals, skipped = [], [], 0
        for x in seqs:
            seed = derive_seed(master_seed, x.id, method)
            best = float("inf")
            try:
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    attr = explain_instance(x, clf, method, m, seed, labels[x.id], model=model, pad=pad)
                    best = min(best, time.perf_counter() - t0)
            except BudgetError:
                skipped += 1
                continue
            times.append(best)
            evals.append(attr.n_evals)
        if not times:
            log.warning("%s: every instance exceeded the budget cap", text)
            continue
        rows.append({
            "setting": text, "method": method, "m": m, "n": len(times), "skipped": skipped,
            "mean_seconds": float(np.mean(times)), "median_seconds": float(np.median(times)),
            "mean_evals": float(np.mean(evals)), "max_evals": int(max(evals)), "min_evals": int(min(evals)),
        })
    return rows


def cmd_bench(args) -> int:
    seqs, _ = read_dataset(args.input, args.pad)
    clf = load_classifier(args.classifier, args.value_mode, args.max_batch)
    try:
        rows = run_bench(seqs, clf, args.methods.split(","), _load_model(args.model), args.seed, args.pad,
                         args.repeats)
    finally:
        clf.close()
    result = {"kernel_backend": kernels.BACKEND, "rows": rows}
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=1) + "\n")
    for r in rows:
        print(f"{r['setting']:>12}  {r['mean_seconds'] * 1e3:9.3f} ms/it  evals mean={r['mean_evals']:.1f} "
              f"max={r['max_evals']}" + (f"  ({r['skipped']} over cap)" if r["skipped"] else ""))
    return EXIT_OK


def cmd_verify(args) -> int:
    problems = verify_run(args.attrs, args.manifest)
    if args.recompute:
        manifest = json.loads(Path(args.manifest or f"{args.attrs}.manifest.json").read_text())
        seqs, _ = read_dataset(args.input, manifest["pad"])
        clf = load_classifier(args.classifier, manifest["value_mode"])
        try:
            config = ExplainConfig(
                method=manifest["method"], m=manifest["budget"], master_seed=manifest["master_seed"],
                label=_label_arg(manifest["label"]), pad=manifest["pad"], cap=manifest["options"].get("cap", 15),
                normalization=manifest["options"].get("normalization", "as_written"),
                model_digest=manifest["options"].get("model"),
            )
            result = explain_dataset(seqs, clf, config, model=_load_model(args.model))
        finally:
            clf.close()
        tmp = Path(args.attrs).with_name(Path(args.attrs).name + ".verify.tmp")
        write_attributions(tmp, result)
        if tmp.read_bytes() != Path(args.attrs).read_bytes():
            problems.append("recomputed attributions differ from the file")
        tmp.unlink()
        Path(str(tmp) + ".manifest.json").unlink()
    for p in problems:
        print(f"problem: {p}", file=sys.stderr)
    print("ok" if not problems else f"{len(problems)} problem(s)")
    return EXIT_OK if not problems else EXIT_FAILED_INSTANCES


def cmd_serve(args) -> int:
    clf = load_classifier(args.classifier, args.value_mode)
    if args.tcp:
        import socketserver

        host, port = args.tcp.rsplit(":", 1)

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                serve(clf, self.rfile, self.wfile)

        with socketserver.TCPServer((host, int(port)), Handler) as server:
            server.serve_forever()
    else:
        serve(clf, sys.stdin.buffer, sys.stdout.buffer)
    return EXIT_OK


def cmd_recipe(args) -> int:
    from . import recipes

    config = _train_config(args)
    if args.recipe == "learning-curve":
        out = recipes.learning_curve(ReferenceDataset.read(args.refs), _floats(args.fractions), config)
    elif args.recipe == "sensitivity":
        out = recipes.training_sensitivity(ReferenceDataset.read(args.refs), range(args.runs), args.fraction, config)
    else:
        toy = generate_dataset(ToySpec(n=args.n, lengths=_ints(args.lengths), vocab_size=args.vocab_size,
                                       seed=args.toy_seed))
        clf = toy.classifier
        refs = build_reference_dataset(toy.seqs, clf, "svs", 25, master_seed=args.seed)
        out = recipes.domain_transfer(toy, refs, n_target=args.n_target, config=config, seed=args.seed)
    text = json.dumps(out, indent=1)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def _add_classifier_args(p, value_mode_default=None):
    p.add_argument("--classifier", required=True, help="builtin:<file.json> or external:<command | tcp://host:port>")
    p.add_argument("--value-mode", choices=["prob", "raw", "probability", "raw_score"], default=value_mode_default)
    p.add_argument("--max-batch", type=int, default=64, help="inputs per external request frame")
    p.add_argument("--pad", default=DEFAULT_PAD)


def _add_train_args(p):
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--buckets", type=int, default=2 ** 16)
    p.add_argument("--context-radius", type=int, default=0)
    p.add_argument("--fraction", type=float, default=1.0, help="fraction of the training split used")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amortshap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a toy dataset and its classifier")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--lengths", default="8,16,32")
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--signal", type=int, default=20)
    p.add_argument("--signal-scale", type=float, default=2.0)
    p.add_argument("--background-scale", type=float, default=0.2)
    p.add_argument("--signal-rate", type=float, default=0.25)
    p.add_argument("--pairs", type=int, default=5)
    p.add_argument("--pair-scale", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--kind", choices=["interaction", "additive"], default="interaction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--classifier-out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("explain", help="compute attributions for a dataset")
    p.add_argument("--method", required=True, choices=["exact", "svs", "ks", "amortized", "adapt"])
    p.add_argument("--samples", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input", required=True)
    _add_classifier_args(p)
    p.add_argument("--label", default="pred", help="'pred' or a class index")
    p.add_argument("--model", help="amortized checkpoint (amortized/adapt)")
    p.add_argument("--normalization", choices=["as_written", "virtual_sample"], default="as_written")
    p.add_argument("--cap", type=int, default=15, help="max L for exact enumeration")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("refs", help="build a reference dataset (default SVS-25) for training")
    p.add_argument("--input", required=True)
    _add_classifier_args(p)
    p.add_argument("--method", default="svs")
    p.add_argument("--samples", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refs)

    p = sub.add_parser("train", help="train the amortized explainer on reference scores")
    p.add_argument("--refs", required=True)
    _add_train_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stability", help="cross-seed stability of estimators")
    p.add_argument("--input", required=True)
    _add_classifier_args(p)
    p.add_argument("--methods", default="ks:25,ks:200,ks:2000,svs:25")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--topk", default="5,10")
    p.add_argument("--buckets", default="8,16,32")
    p.add_argument("--balanced", type=int, help="balanced-label subsample size")
    p.add_argument("--model")
    p.add_argument("--normalization", choices=["as_written", "virtual_sample"], default="as_written")
    p.add_argument("--cap", type=int, default=15)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("faithfulness", help="accuracy after masking top-alpha tokens")
    p.add_argument("--input", required=True)
    _add_classifier_args(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--attrs", help="attribution JSONL")
    g.add_argument("--random-seed", type=int, help="use uniform-random scores instead")
    p.add_argument("--alphas", default=",".join(str(a) for a in DEFAULT_ALPHAS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_faithfulness)

    p = sub.add_parser("bench", help="per-instance latency and evaluation counts")
    p.add_argument("--input", required=True)
    _add_classifier_args(p)
    p.add_argument("--methods", default="exact,svs:25,ks:25,ks:200,amortized")
    p.add_argument("--model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="check manifest hashes and re-derive seeds")
    p.add_argument("--attrs", required=True)
    p.add_argument("--manifest")
    p.add_argument("--recompute", action="store_true", help="re-run and compare bytes")
    p.add_argument("--input")
    p.add_argument("--classifier")
    p.add_argument("--model")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("serve", help="serve a builtin classifier over the external protocol")
    p.add_argument("--classifier", required=True)
    p.add_argument("--value-mode", choices=["prob", "raw", "probability", "raw_score"])
    p.add_argument("--tcp", help="host:port to listen on instead of stdio")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("recipe", help="toy-scale experiment recipes")
    p.add_argument("recipe", choices=["learning-curve", "sensitivity", "transfer"])
    p.add_argument("--refs")
    p.add_argument("--fractions", default="0.1,0.3,0.5,0.7,1.0")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--n-target", type=int, default=200)
    p.add_argument("--lengths", default="8,16,32")
    p.add_argument("--vocab-size", type=int, default=3000)
    p.add_argument("--toy-seed", type=int, default=0)
    p.add_argument("--out")
    _add_train_args(p)
    p.set_defaults(func=cmd_recipe)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("AMORTSHAP_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "recipe", None) in ("learning-curve", "sensitivity") and not args.refs:
        parser.error("--refs is required for this recipe")
    if args.command == "verify" and args.recompute and not (args.input and args.classifier):
        parser.error("--recompute needs --input and --classifier")
    try:
        return args.func(args)
    except (ContractViolation, BudgetError, NumericalError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
