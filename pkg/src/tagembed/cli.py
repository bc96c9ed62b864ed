"""Command-line surface: ingest, sample, train, embed, eval-nc, eval-lp, transfer, bench.

Exit codes: 0 success, 1 validation error (bad arguments or inputs), 2
runtime error. All randomness is controlled by --seed; --config loads a flat
"key = value" file whose values individual flags override; --json prints the
machine-readable result to stdout. Report-producing verbs also render a
matplotlib figure next to the delimited/JSON output.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import os
import sys
from dataclasses import asdict

from tagembed import evaluator, reports, synthetic
from tagembed.encoder import embed_corpus, load_encoder, save_encoder
from tagembed.errors import ValidationError
from tagembed.graph_store import TagCorpus, build_corpus, ingest_graph, load_corpus, load_manifest
from tagembed.memory_bank import save_bank
from tagembed.ppr import load_ppr_cache, personalized_pagerank, save_ppr_cache
from tagembed.sampler import build_all_pools, save_pools
from tagembed.trainer import (
    TrainConfig,
    bench_variants,
    init_train_state,
    parse_config_file,
    train,
    write_loss_csv,
)


class _ArgumentError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so run() owns exit codes."""

    def error(self, message):
        raise _ArgumentError(message)


def _parse_ratio(spec: str) -> tuple[float, float, float]:
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValidationError(f"expected a:b:c ratio, got {spec!r}")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise ValidationError(f"non-numeric ratio component in {spec!r}") from exc
    total = sum(vals)
    if total <= 0:
        raise ValidationError(f"ratio {spec!r} sums to zero")
    return tuple(v / total for v in vals)  # type: ignore[return-value]


def _resolve_config_path(path: str) -> str:
    if os.path.exists(path):
        return path
    preset = importlib.resources.files("tagembed").joinpath("presets", os.path.basename(path))
    if preset.is_file():
        return str(preset)
    raise ValidationError(f"config file {path!r} not found (and no preset of that name)")


# Flags that mirror TrainConfig fields; None means "not given on the CLI".
_CONFIG_FLAGS = (
    ("--temperature", float, "contrastive temperature tau (default: 0.3)"),
    ("--alpha", float, "KL regularizer weight (default: 0.1)"),
    ("--num-pos-samples", int, "positive pool budget t (default: 15)"),
    ("--batch-size", int, "anchors per step (default: 64)"),
    ("--learning-rate", float, "SGD learning rate (default: 0.05)"),
    ("--steps", int, "training steps (default: 200)"),
    ("--epochs", int, "epochs, used when steps is 0 (default: 0)"),
    ("--variant", str, "full | fixed_weights | sim_aggregate | no_bank (default: full)"),
    ("--restart-prob", float, "PageRank restart probability (default: 0.15)"),
    ("--ppr-epsilon", float, "PageRank push tolerance (default: 1e-4)"),
    ("--feature-dim", int, "hashing buckets F (default: 4096)"),
    ("--embed-dim", int, "embedding dimension d (default: 64)"),
    ("--checkpoint-every", int, "checkpoint period in steps, 0 = final only (default: 0)"),
    ("--threads", int, "worker threads for pool building (default: 1)"),
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file (or preset name)")
    parser.add_argument("--seed", type=int, default=None, help="global random seed (default: 0)")
    for flag, typ, help_text in _CONFIG_FLAGS:
        parser.add_argument(flag, type=typ, default=None, help=help_text)


def _build_config(args: argparse.Namespace) -> TrainConfig:
    values: dict = {}
    if args.config:
        values.update(parse_config_file(_resolve_config_path(args.config)))
    if args.seed is not None:
        values["seed"] = args.seed
    for flag, _, _ in _CONFIG_FLAGS:
        key = flag.lstrip("-").replace("-", "_")
        given = getattr(args, key)
        if given is not None:
            values[key] = given
    return TrainConfig(**values)


def _emit(payload: dict, args: argparse.Namespace) -> None:
    text = json.dumps(payload, sort_keys=True, indent=None if args.json else 2)
    if getattr(args, "out_report", None):
        with open(args.out_report, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(payload, sort_keys=True) + "\n")
    print(text)


def _graph_slice(corpus: TagCorpus, graph_id: str | None):
    if graph_id is None:
        idx = 0
    else:
        ids = [g.graph_id for g in corpus.graphs]
        if graph_id not in ids:
            raise ValidationError(f"graph_id {graph_id!r} not in corpus (have {ids})")
        idx = ids.index(graph_id)
    lo, hi = int(corpus.offsets[idx]), int(corpus.offsets[idx + 1])
    return corpus.graphs[idx], lo, hi


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------


def _cmd_ingest(args) -> int:
    if args.manifest:
        corpus = load_corpus(args.manifest)
    else:
        if not (args.nodes and args.edges and args.domain_text is not None):
            raise ValidationError("ingest needs --manifest or --nodes/--edges/--domain-text")
        graph = ingest_graph(args.nodes, args.edges, args.domain_text, graph_id=args.graph_id)
        corpus = build_corpus([graph])
    payload = {
        "graphs": [
            {
                "graph_id": g.graph_id,
                "nodes": g.num_nodes,
                "edges": g.num_edges,
                "average_degree": round(g.average_degree, 2),
                "labeled_nodes": int((g.labels >= 0).sum()) if g.labels is not None else 0,
            }
            for g in corpus.graphs
        ],
        "total_nodes": corpus.total_nodes,
    }
    _emit(payload, args)
    return 0


def _cmd_sample(args) -> int:
    corpus = load_corpus(args.manifest)
    config = _build_config(args)
    cache = None
    if args.ppr_cache and os.path.exists(args.ppr_cache):
        cache, cached_rp, cached_eps = load_ppr_cache(args.ppr_cache)
        if cached_rp != config.restart_prob or cached_eps != config.ppr_epsilon:
            cache = None
    pools, excluded = build_all_pools(
        corpus,
        config.num_pos_samples,
        config.restart_prob,
        config.ppr_epsilon,
        threads=config.threads,
        ppr_cache=cache,
    )
    if args.ppr_cache and cache is None:
        records = {}
        for v in pools:
            g_idx, local = corpus.decompose(v)
            scores = personalized_pagerank(
                corpus.graphs[g_idx], local, config.restart_prob, config.ppr_epsilon
            )
            records[v] = scores.scores
        save_ppr_cache(args.ppr_cache, records, config.restart_prob, config.ppr_epsilon)
    save_pools(args.out, pools)
    _emit(
        {
            "pools": len(pools),
            "excluded_anchors": excluded,
            "t": config.num_pos_samples,
            "out": args.out,
        },
        args,
    )
    return 0


def _load_corpus_for_training(args, config: TrainConfig) -> tuple[TagCorpus, dict]:
    corpus = load_corpus(args.manifest)
    info: dict = {}
    if getattr(args, "mask_test_edges", False):
        ratios = _parse_ratio(args.edge_split)
        split_seed = args.split_seed
        masked = []
        removed = 0
        for g in corpus.graphs:
            sp = evaluator.split_edges(g, ratios, seed=split_seed)
            removed += len(sp.test_edges)
            masked.append(sp.masked_graph)
        corpus = build_corpus(masked)
        info["masked_test_edges"] = removed
    return corpus, info


def _cmd_train(args) -> int:
    config = _build_config(args)
    corpus, info = _load_corpus_for_training(args, config)
    os.makedirs(args.out, exist_ok=True)

    def checkpoint(state) -> None:
        prefix = ""
        if config.checkpoint_every > 0 and state.step < total_steps_holder[0]:
            prefix = f"step{state.step:06d}."
        save_encoder(os.path.join(args.out, prefix + "encoder.bin"), state.params)
        save_bank(os.path.join(args.out, prefix + "bank.bin"), state.bank)
        save_pools(os.path.join(args.out, prefix + "pools.upos"), state.pools)

    state = init_train_state(corpus, config)
    from tagembed.trainer import resolve_steps

    total_steps_holder = [resolve_steps(config, len(state.eligible))]
    result = train(corpus, config, checkpoint_fn=checkpoint, state=state)
    write_loss_csv(os.path.join(args.out, "loss.csv"), result.reports)
    reports.save_loss_figure(result.reports, os.path.join(args.out, "loss.png"))
    save_encoder(os.path.join(args.out, "encoder_f0.bin"), result.f0)
    payload = {
        "steps": len(result.reports),
        "final_loss": result.reports[-1].loss,
        "initial_loss": result.reports[0].loss,
        "excluded_anchors": result.excluded,
        "out": args.out,
        "config": asdict(config),
    }
    payload.update(info)
    args.out_report = os.path.join(args.out, "train_report.json")
    _emit(payload, args)
    return 0


def _cmd_embed(args) -> int:
    params = load_encoder(args.ckpt)
    corpus = load_corpus(args.manifest)
    emb = embed_corpus(params, corpus)
    evaluator.save_embeddings(args.out, emb)
    _emit({"nodes": emb.shape[0], "dim": emb.shape[1], "out": args.out}, args)
    return 0


def _cmd_eval_nc(args) -> int:
    corpus = load_corpus(args.manifest)
    emb = evaluator.load_embeddings(args.emb)
    if emb.shape[0] != corpus.total_nodes:
        raise ValidationError(
            f"embedding rows ({emb.shape[0]}) do not match corpus nodes ({corpus.total_nodes})"
        )
    graph, lo, hi = _graph_slice(corpus, args.graph_id)
    if graph.labels is None:
        raise ValidationError(f"graph {graph.graph_id!r} has no labels")
    ratios = _parse_ratio(args.node_split)
    seeds = [args.seed + i for i in range(args.runs)]
    splits = [evaluator.split_nodes(graph, ratios, seed=s) for s in seeds]
    report = evaluator.linear_probe_nc(emb[lo:hi], graph.labels, splits)
    if args.fig:
        reports.save_metrics_figure(report, args.fig)
    args.out_report = args.out
    _emit(report.to_dict(), args)
    return 0


def _cmd_eval_lp(args) -> int:
    corpus = load_corpus(args.manifest)
    emb = evaluator.load_embeddings(args.emb)
    if emb.shape[0] != corpus.total_nodes:
        raise ValidationError(
            f"embedding rows ({emb.shape[0]}) do not match corpus nodes ({corpus.total_nodes})"
        )
    graph, lo, hi = _graph_slice(corpus, args.graph_id)
    ratios = _parse_ratio(args.edge_split)
    seeds = [args.seed + i for i in range(args.runs)]
    splits = [evaluator.split_edges(graph, ratios, seed=s) for s in seeds]
    report = evaluator.link_pred_eval(emb[lo:hi], splits, k=args.hits_k)
    if args.fig:
        reports.save_metrics_figure(report, args.fig)
    args.out_report = args.out
    _emit(report.to_dict(), args)
    return 0


def _cmd_transfer(args) -> int:
    entries = load_manifest(args.manifest)
    holdout_entry = next((e for e in entries if e["graph_id"] == args.holdout), None)
    if holdout_entry is None:
        raise ValidationError(f"holdout graph {args.holdout!r} not in manifest")
    if args.mode == "cross_domain":
        train_entries = [e for e in entries if e["domain_text"] != holdout_entry["domain_text"]]
    else:
        train_entries = [e for e in entries if e["graph_id"] != args.holdout]
    if not train_entries:
        raise ValidationError("no training graphs remain after the manifest filter")

    base = os.path.dirname(os.path.abspath(args.manifest))

    def _resolve(entry, key):
        path = entry[key]
        return path if os.path.isabs(path) else os.path.join(base, path)

    held_out = ingest_graph(
        _resolve(holdout_entry, "nodes"),
        _resolve(holdout_entry, "edges"),
        holdout_entry["domain_text"],
        graph_id=holdout_entry["graph_id"],
    )
    config = _build_config(args)
    if args.ckpt:
        params = load_encoder(args.ckpt)
    else:
        train_corpus = build_corpus(
            [
                ingest_graph(
                    _resolve(e, "nodes"), _resolve(e, "edges"), e["domain_text"], graph_id=e["graph_id"]
                )
                for e in train_entries
            ]
        )
        params = train(train_corpus, config).params
    seeds = tuple(args.seed + i for i in range(args.runs)) if args.seed is not None else tuple(
        range(args.runs)
    )
    report = evaluator.transfer_eval(
        params,
        held_out,
        mode=args.mode,
        node_ratios=_parse_ratio(args.node_split),
        edge_ratios=_parse_ratio(args.edge_split),
        seeds=seeds,
        k=args.hits_k,
        k_shot=args.k_shot,
    )
    report.extra["training_graphs"] = [e["graph_id"] for e in train_entries]
    if args.fig:
        reports.save_metrics_figure(report, args.fig)
    args.out_report = args.out
    _emit(report.to_dict(), args)
    return 0


def _cmd_bench(args) -> int:
    config = _build_config(args)
    if args.manifest:
        corpus = load_corpus(args.manifest)
    else:
        corpus = synthetic.make_benchmark_corpus(
            seed=config.seed, n_nodes=args.nodes
        )
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    results = bench_variants(corpus, config, variants=variants, steps=args.bench_steps)
    payload: dict = {"results": results, "steps_per_variant": args.bench_steps}
    if "full" in results and "no_bank" in results:
        payload["speedup_no_bank_over_full"] = (
            results["no_bank"]["median_step_seconds"] / results["full"]["median_step_seconds"]
        )
    if args.fig:
        reports.save_bench_figure(results, args.fig)
    args.out_report = args.out
    _emit(payload, args)
    return 0


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="tagembed", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("ingest", help="validate graphs and print corpus statistics")
    p.add_argument("--manifest", help="corpus manifest (JSONL)")
    p.add_argument("--nodes", help="single-graph nodes file (JSONL)")
    p.add_argument("--edges", help="single-graph edges file (TSV)")
    p.add_argument("--domain-text", help="single-graph domain description")
    p.add_argument("--graph-id", default=None, help="graph id for single-graph mode")
    p.add_argument("--json", action="store_true", help="compact machine-readable stdout")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("sample", help="build positive pools and write the UPOS sidecar")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output pools file (UPOS)")
    p.add_argument("--ppr-cache", default=None, help="optional UPPR score cache to reuse/create")
    p.add_argument("--json", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("train", help="run contrastive pretraining, write checkpoints and loss curve")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mask-test-edges", action="store_true", help="hold out test edges before sampling")
    p.add_argument("--edge-split", default="85:10:5", help="train:val:test edge ratios (default: 85:10:5)")
    p.add_argument("--split-seed", type=int, default=0, help="seed for the edge holdout (default: 0)")
    p.add_argument("--json", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("embed", help="encode all corpus nodes with a checkpoint to a UEMB file")
    p.add_argument("--ckpt", required=True, help="encoder checkpoint (UENC)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output embedding file (UEMB)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("eval-nc", help="linear-probe node classification of frozen embeddings")
    p.add_argument("--emb", required=True, help="embedding file (UEMB)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--graph-id", default=None, help="graph to evaluate (default: first)")
    p.add_argument("--node-split", default="5:20:75", help="train:val:test node ratios (default: 5:20:75)")
    p.add_argument("--runs", type=int, default=5, help="repeats with shifted seeds (default: 5)")
    p.add_argument("--seed", type=int, default=0, help="base split seed (default: 0)")
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--fig", default=None, help="write a metrics figure here (PNG)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_eval_nc)

    p = sub.add_parser("eval-lp", help="link prediction with negative sampling on frozen embeddings")
    p.add_argument("--emb", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--graph-id", default=None)
    p.add_argument("--edge-split", default="85:10:5", help="train:val:test edge ratios (default: 85:10:5)")
    p.add_argument("--hits-k", type=int, default=100, help="K for Hits@K (default: 100)")
    p.add_argument("--runs", type=int, default=5, help="repeats with shifted seeds (default: 5)")
    p.add_argument("--seed", type=int, default=0, help="base split seed (default: 0)")
    p.add_argument("--out", default=None)
    p.add_argument("--fig", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_eval_lp)

    p = sub.add_parser("transfer", help="train on a filtered corpus, evaluate an unseen graph")
    p.add_argument("--manifest", required=True, help="manifest containing the holdout graph")
    p.add_argument("--holdout", required=True, help="graph_id to hold out")
    p.add_argument(
        "--mode",
        choices=("in_domain", "cross_domain"),
        default="in_domain",
        help="manifest filter: drop the graph, or its whole domain (default: in_domain)",
    )
    p.add_argument("--ckpt", default=None, help="reuse a trained encoder instead of training")
    p.add_argument("--node-split", default="5:20:75", help="probe split ratios (default: 5:20:75)")
    p.add_argument("--edge-split", default="85:10:5", help="LP split ratios (default: 85:10:5)")
    p.add_argument("--hits-k", type=int, default=100, help="K for Hits@K (default: 100)")
    p.add_argument("--k-shot", type=int, default=None, help="k-examples-per-class probe split")
    p.add_argument("--runs", type=int, default=5, help="evaluation repeats (default: 5)")
    p.add_argument("--out", default=None)
    p.add_argument("--fig", default=None)
    p.add_argument("--json", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_transfer)

    p = sub.add_parser("bench", help="wall-clock per-step comparison of training variants")
    p.add_argument("--manifest", default=None, help="corpus to bench (default: synthetic)")
    p.add_argument("--nodes", type=int, default=150, help="synthetic nodes per graph (default: 150)")
    p.add_argument(
        "--variants", default="full,no_bank", help="comma-separated variants (default: full,no_bank)"
    )
    p.add_argument("--bench-steps", type=int, default=200, help="steps per variant (default: 200)")
    p.add_argument("--out", default=None)
    p.add_argument("--fig", default=None)
    p.add_argument("--json", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_bench)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
