"""Command-line interface: synth, train, eval, index, query, fuse-tune,
attribute, validate. Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import attribution, dataset, evaluator, retrieval, synth, trainer
from .errors import MeritError
from .head import HeadConfig, load_head, save_head
from .loss import LossConfig
from .store import EmbeddingStore, read_meta, read_store, validate_store


class _Parser(argparse.ArgumentParser):
    # spec'd exit codes: usage problems are validation errors (1), not 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _emit(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=1) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_heads(paths: list[str]) -> dict:
    heads = {}
    for p in paths:
        params = load_head(p)
        if not params.factor:
            raise ValueError(f"head file {p} carries no factor tag")
        if params.factor in heads:
            raise ValueError(f"duplicate head for factor {params.factor!r}")
        heads[params.factor] = params
    return heads


def _load_manifests(paths: list[str]) -> dict:
    manifests = {}
    for p in paths:
        m = dataset.load_manifest(p)
        if m.factor in manifests:
            raise ValueError(f"duplicate manifest for factor {m.factor!r}")
        manifests[m.factor] = m
    return manifests


def _cmd_synth(args) -> int:
    cfg = (synth.SynthConfig.from_json(args.config) if args.config
           else synth.SynthConfig())
    overrides = {
        "seed": args.seed, "n_folders": args.n_folders, "k": args.k,
        "in_dim": args.in_dim, "noise_sigma": args.noise_sigma,
        "cross_factor_leak": args.leak, "n_classes": args.n_classes,
        "factor_subspace_dim": args.subspace_dim,
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(cfg, name, value)
    if args.rotate:
        cfg.rotate = True
    cfg.__post_init__()
    result = synth.generate(cfg)
    paths = synth.write_outputs(result, args.out_dir)
    _emit({name: str(p) for name, p in paths.items()}, None)
    return 0


def _cmd_train(args) -> int:
    train_cfg = (trainer.TrainConfig.from_file(args.config) if args.config
                 else trainer.TrainConfig())
    for name, value in (("epochs", args.epochs), ("batch_size", args.batch_size),
                        ("seed", args.seed), ("lr_max", args.lr_max),
                        ("lr_min", args.lr_min),
                        ("weight_decay", args.weight_decay)):
        if value is not None:
            setattr(train_cfg, name, value)
    train_cfg.__post_init__()
    manifest = dataset.load_manifest(args.manifest)
    if manifest.factor != args.factor:
        raise ValueError(f"manifest factor {manifest.factor!r} != --factor {args.factor!r}")
    store = EmbeddingStore.load(args.store)
    head_cfg = HeadConfig(hidden_dim=args.hidden_dim, out_dim=args.out_dim)
    loss_cfg = LossConfig(gamma=args.gamma, margin=args.margin, sign=args.loss_sign)
    params, history = trainer.train_head(manifest, store, head_cfg, train_cfg, loss_cfg)
    save_head(params, args.out)
    if args.history:
        history.to_csv(args.history)
    _emit({"head": args.out, "factor": args.factor,
           "final_loss": history.losses[-1], "epochs": len(history)}, None)
    return 0


def _cmd_eval(args) -> int:
    store = EmbeddingStore.load(args.store)
    heads = _load_heads(args.heads)
    manifests = _load_manifests(args.manifests)
    report = evaluator.disentanglement_matrix(
        heads, manifests, store,
        include_baseline=not args.no_baseline, lenient=args.lenient)
    if args.out:
        Path(args.out).write_text(report.to_json())
    if args.format == "table":
        sys.stdout.write(report.render_table())
    elif not args.out:
        sys.stdout.write(report.to_json())
    return 0


def _cmd_index(args) -> int:
    store = EmbeddingStore.load(args.store)
    params = load_head(args.head)
    index = retrieval.build_index(params, store, mode=args.mode,
                                  nlist=args.nlist, nprobe=args.nprobe,
                                  seed=args.seed)
    retrieval.save_index(index, args.out)
    _emit({"index": args.out, "factor": index.factor, "entries": len(index),
           "skipped": index.skipped}, None)
    return 0


def _cmd_query(args) -> int:
    store = EmbeddingStore.load(args.store)
    if args.clip_id not in store.id_index:
        raise ValueError(f"unknown clip id {args.clip_id!r}")
    heads = _load_heads(args.heads)
    indexes = {}
    for p in args.indexes:
        idx = retrieval.load_index(p, mode=args.mode, seed=args.seed)
        indexes[idx.factor] = idx
    weights = tuple(args.weights) if args.weights else None
    strategy = retrieval.FusionStrategy(args.fusion, weights)
    z = store.vectors64([args.clip_id])[0]
    result = retrieval.query_topk(z, heads, indexes, k=args.k, strategy=strategy)
    for cand in result.fused:
        line = {"clip_id": cand.clip_id, "fused": cand.fused}
        line.update({f"s_{f[:3]}": s for f, s in cand.scores.items()})
        sys.stdout.write(json.dumps(line, sort_keys=True) + "\n")
    return 0


def _cmd_fuse_tune(args) -> int:
    store = EmbeddingStore.load(args.store)
    heads = _load_heads(args.heads)
    manifest = dataset.load_manifest(args.manifest)
    w = retrieval.tune_weights(manifest.triplets, heads, store,
                               grid_step=args.grid_step)
    _emit({"w_mel": w[0], "w_rhy": w[1], "w_tim": w[2]}, args.out)
    return 0


def _cmd_attribute(args) -> int:
    rows = []
    for p in args.heads:
        params = load_head(p)
        rows.append(attribution.attribute_head(params, n_blocks=args.blocks))
    if args.format == "table":
        sys.stdout.write(attribution.render_attribution_table(rows))
    else:
        _emit({row.factor or f"head{i}": [float(v) for v in row.fractions]
               for i, row in enumerate(rows)}, None)
    return 0


def _cmd_validate(args) -> int:
    report = validate_store(args.store, args.manifest or (),
                            expected_dim=args.expect_dim)
    if args.meta:
        metas = read_meta(args.meta)
        _, records = read_store(args.store)
        known = {r.clip_id for r in records}
        report.unresolved_ids = sorted(
            set(report.unresolved_ids) | {cid for cid in metas if cid not in known})
    _emit(report.to_json_dict(), None)
    return 0 if report.ok else 1


def build_parser() -> _Parser:
    parser = _Parser(prog="merit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-factor store and manifests")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="JSON file with SynthConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-folders", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--in-dim", type=int)
    p.add_argument("--subspace-dim", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--leak", type=float)
    p.add_argument("--n-classes", type=int)
    p.add_argument("--rotate", action="store_true")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train one factor head")
    p.add_argument("--factor", required=True, choices=dataset.FACTORS)
    p.add_argument("--store", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="write per-epoch CSV here")
    p.add_argument("--config", help="key = value TrainConfig file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr-max", type=float)
    p.add_argument("--lr-min", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--hidden-dim", type=int, default=512)
    p.add_argument("--out-dim", type=int, default=128)
    p.add_argument("--gamma", type=float, default=10.0)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--loss-sign", choices=("consistent", "paper"),
                   default="consistent")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="disentanglement matrix over three heads")
    p.add_argument("--store", required=True)
    p.add_argument("--heads", nargs=3, required=True)
    p.add_argument("--manifests", nargs=3, required=True)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("index", help="build a per-factor retrieval index")
    p.add_argument("--head", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("exact", "approximate"), default="exact")
    p.add_argument("--nlist", type=int)
    p.add_argument("--nprobe", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("query", help="top-k retrieval with fused scores")
    p.add_argument("--store", required=True)
    p.add_argument("--clip-id", required=True)
    p.add_argument("--heads", nargs=3, required=True)
    p.add_argument("--indexes", nargs=3, required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--fusion", choices=("mean", "wmean", "concat", "product"),
                   default="mean")
    p.add_argument("--weights", nargs=3, type=float)
    p.add_argument("--mode", choices=("exact", "approximate"), default="exact")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("fuse-tune", help="grid-search fusion weights")
    p.add_argument("--store", required=True)
    p.add_argument("--heads", nargs=3, required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_fuse_tune)

    p = sub.add_parser("attribute", help="per-layer weight-mass attribution")
    p.add_argument("--heads", nargs="+", required=True)
    p.add_argument("--blocks", type=int)
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.set_defaults(func=_cmd_attribute)

    p = sub.add_parser("validate", help="check store/manifest consistency")
    p.add_argument("--store", required=True)
    p.add_argument("--manifest", nargs="*", default=[])
    p.add_argument("--meta", help="metadata sidecar to cross-check")
    p.add_argument("--expect-dim", type=int)
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (MeritError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
