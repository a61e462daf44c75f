"""Command-line interface: ``multiacct <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 convergence
failure (outputs are still written), 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, MultiAcctError

log = logging.getLogger("multiacct")

EXIT_CONVERGENCE = 4


def _add_pipeline_args(p: argparse.ArgumentParser):
    p.add_argument("inputs", nargs="*", help="activity files (CSV or JSONL)")
    p.add_argument("--config", help="key-value configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one setting, e.g. --set spread.clamp=0.1 (repeatable)")
    p.add_argument("--method", choices=("unsup-katz", "semi-katz", "semi-embed"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed; derives every stage seed")
    p.add_argument("--truth", help="ownership CSV account_id,user_id")
    p.add_argument("-c", "--clusters-count", dest="c", type=int, help="number of clusters")
    p.add_argument("--alpha", type=float, help="Katz threshold percentile")
    p.add_argument("--alternative", action="store_true",
                   help="add Katz-derived alternative ground truth")
    p.add_argument("--fraction", type=float, help="fraction of accounts queried for truth")
    p.add_argument("--emit", choices=("positives", "all"))
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--cache-dir")
    p.add_argument("--graph", help="resume from a dumped (cleaned) graph")
    p.add_argument("--embeddings", help="resume from an embedding file")
    p.add_argument("--similarity", help="resume from a Katz matrix file")
    p.add_argument("--clusters", help="resume from a cluster assignment CSV")


def _pipeline_config(args):
    from .pipeline import PipelineConfig

    if args.config:
        cfg = PipelineConfig.from_file(args.config)
    else:
        cfg = PipelineConfig()
    if args.inputs:
        cfg.inputs = list(args.inputs)
    for name in ("method", "seed", "emit", "format", "graph", "embeddings", "similarity",
                 "clusters"):
        v = getattr(args, name)
        if v is not None:
            setattr(cfg, name, v)
    if args.out:
        cfg.output = args.out
    if args.cache_dir:
        cfg.cache_dir = args.cache_dir
    if args.truth:
        cfg.truth.path = args.truth
    if args.c is not None:
        cfg.cluster.c = args.c
    if args.alpha is not None:
        cfg.katz.alpha = args.alpha
    if args.fraction is not None:
        cfg.truth.fraction = args.fraction
    if args.alternative:
        cfg.truth.use_alternative = True
    for item in args.overrides:
        cfg.set_item(item)
    return cfg


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


# -- subcommands -----------------------------------------------------------


def cmd_ingest(args):
    from .graphcore import build_bipartite, clean_graph, read_activities

    records, rejected = [], 0
    for path in args.inputs:
        parsed = read_activities(path, args.format)
        records.extend(parsed.records)
        rejected += parsed.rejected
    g = build_bipartite(records)
    summary = {"activities": len(records), "rejected": rejected, "accounts": g.n_accounts,
               "pages": g.n_pages, "edges": g.n_edges}
    if not args.no_clean:
        res = clean_graph(g)
        g = res.graph
        summary.update(threshold=res.threshold, removed=len(res.removed),
                       accounts_after=g.n_accounts, pages_after=g.n_pages)
        if args.removed:
            Path(args.removed).write_text("".join(a + "\n" for a in res.removed),
                                          encoding="utf-8")
    if args.output:
        g.save(args.output)
    else:
        sys.stdout.write(g.to_edgelist())
        return 0
    _print_json(summary)
    return 0


def cmd_katz(args):
    from .graphcore import BipartiteGraph
    from .katz import katz_matrix
    from .pipeline import population_report, write_predictions
    from .truth import OwnershipMap

    g = BipartiteGraph.load(args.graph)
    beta = "auto" if args.beta == "auto" else float(args.beta)
    s = katz_matrix(g, beta=beta, tol=args.tol, weighted=args.weighted, method=args.method,
                    max_terms=args.max_terms, accounts_only=not args.full)
    if args.output:
        s.save(args.output)
    summary = {"beta": s.beta, "tol": s.tol, "n": s.n, "accounts": s.n_accounts,
               "converged": bool(s.converged), "terms": s.n_terms}
    if args.alpha is not None:
        from .pairs import triu_pairs

        left, right = triu_pairs(s.n_accounts)
        scores = s.account_block()[left, right]
        thr = float(np.percentile(scores, args.alpha))
        hard = (scores > thr).astype(np.int8)
        smax = s.max_account_pair()
        prob = scores / smax if smax > 0 else np.zeros_like(scores)
        summary.update(alpha=args.alpha, threshold=thr, predicted_positive=int(hard.sum()))
        write_predictions(args.predictions, s.accounts, left, right, prob, hard,
                          np.zeros(left.size, dtype=np.int16), args.emit)
        if args.truth:
            owners = OwnershipMap.load(args.truth)
            rep = population_report(owners.codes(s.accounts), left, right, hard, scores)
            if rep is not None:
                summary["report"] = rep.as_dict()
    _print_json(summary)
    return 0 if s.converged else EXIT_CONVERGENCE


def cmd_embed(args):
    from .embed import SkipGramConfig, WalkConfig, node2vec
    from .graphcore import BipartiteGraph

    g = BipartiteGraph.load(args.graph)
    res = node2vec(g, WalkConfig(p=args.p, q=args.q, num_walks=args.num_walks,
                                 walk_length=args.walk_length, seed=args.seed),
                   SkipGramConfig(d=args.d, window=args.window, negatives=args.negatives,
                                  epochs=args.epochs, seed=args.seed, workers=args.workers),
                   weighted=not args.unweighted, workers=args.workers)
    res.embedding.save(args.output)
    _print_json({"nodes": len(res.embedding.nodes), "d": res.embedding.d,
                 "epoch_loss": res.epoch_loss, "missing": len(res.missing)})
    return 0


def cmd_cluster(args):
    from .cluster import spectral_cluster
    from .embed import EmbeddingMatrix
    from .graphcore import BipartiteGraph

    emb = EmbeddingMatrix.load(args.embeddings)
    if args.graph:
        accounts = BipartiteGraph.load(args.graph).accounts
    else:
        accounts = emb.nodes
    ca = spectral_cluster(emb.rows(accounts), accounts, c=args.c, seed=args.seed,
                          n_init=args.n_init)
    if args.output:
        ca.save(args.output)
        _print_json({"c": ca.c, "sizes": ca.sizes().tolist()})
    else:
        sys.stdout.write("account_id,cluster\n")
        sys.stdout.writelines(f"{a},{k}\n" for a, k in zip(ca.accounts, ca.labels.tolist()))
    return 0


def cmd_simulate_split(args):
    from .graphcore import write_activities, read_activities
    from .truth import split_accounts, subsample_activities

    records = read_activities(args.input, args.format).records
    rng = np.random.default_rng(args.seed)
    if args.density is not None:
        records = subsample_activities(records, max(1, round(args.density * args.s)),
                                       int(rng.integers(0, 2**32)))
    out, owners = split_accounts(records, args.s, seed=int(rng.integers(0, 2**32)),
                                 min_activities=args.min_activities)
    write_activities(out, args.records, with_user=False)
    owners.save(args.ownership)
    _print_json({"records": len(out), "accounts": len(owners),
                 "users": len(set(owners.values()))})
    return 0


def cmd_detect(args):
    from .pipeline import run_pipeline

    cfg = _pipeline_config(args)
    res = run_pipeline(cfg)
    if res.report is not None:
        _print_json(res.report.as_dict())
    else:
        _print_json({"predictions": str(res.predictions), **{k: v for k, v in res.info.items()
                                                                 if k != "blocks"}})
    return 0 if res.converged else EXIT_CONVERGENCE


def cmd_evaluate(args):
    from .cluster import ClusterAssignment
    from .graphcore import BipartiteGraph
    from .metrics import write_roc
    from .pipeline import population_report, read_predictions
    from .truth import OwnershipMap

    owners = OwnershipMap.load(args.truth)
    us, vs, prob, label, _ = read_predictions(args.predictions)
    if args.graph:
        accounts = tuple(BipartiteGraph.load(args.graph).accounts)
    elif args.listed_only:
        accounts = tuple(sorted(set(us) | set(vs)))
    else:
        accounts = tuple(sorted(owners))
    idx = {a: i for i, a in enumerate(accounts)}
    keep = [k for k, (u, v) in enumerate(zip(us, vs)) if u in idx and v in idx]
    dropped = len(us) - len(keep)
    if dropped:
        log.warning("%d predicted pair(s) involve accounts outside the population", dropped)
    left = np.array([idx[us[k]] for k in keep], dtype=np.int64)
    right = np.array([idx[vs[k]] for k in keep], dtype=np.int64)
    prob, label = prob[keep], label[keep]
    owner = owners.codes(accounts)
    qb = None
    if args.queried:
        queried = set(Path(args.queried).read_text(encoding="utf-8").split())
        blocks = np.zeros(len(accounts), dtype=np.int64)
        if args.clusters:
            blocks = ClusterAssignment.load(args.clusters).as_dict()
            blocks = np.array([blocks.get(a, -1) for a in accounts], dtype=np.int64)
        qb = np.where([a in queried for a in accounts], blocks, -1)
    if args.listed_only:
        # score only the listed pairs: drop the unlisted block by restricting owners
        from .metrics import evaluate

        same = owner[left] == owner[right]
        ok = (owner[left] >= 0) & (owner[right] >= 0)
        rep = evaluate(label[ok], same[ok].astype(np.int8), scores=prob[ok])
    else:
        rep = population_report(owner, left, right, label, prob, qb)
    if rep is None:
        raise DataError("no evaluable pairs (no pair has two known owners)")
    if args.roc:
        write_roc(args.roc, prob, (owner[left] == owner[right]).astype(np.int8))
    if args.csv:
        sys.stdout.write(rep.csv_row(header=True))
    else:
        print(rep.to_json(verbose=args.verbose))
    return 0


def cmd_sweep(args):
    from .pipeline import run_sweep

    cfg = _pipeline_config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    conv = int if args.parameter in ("splits", "d", "clusters") else float
    try:
        values = [conv(float(v)) if conv is int else conv(v) for v in values]
    except ValueError:
        raise ConfigError(f"sweep values {args.values!r} are not numbers") from None
    res = run_sweep(cfg, args.parameter, values, args.out or cfg.output, plot=not args.no_plot)
    sys.stdout.write(res.csv_path.read_text(encoding="utf-8"))
    for f in res.figures:
        log.info("wrote %s", f)
    return 0


def cmd_generate(args):
    from .graphcore import write_activities
    from .synth import SynthConfig, generate_activity_log

    cfg = SynthConfig(n_users=args.users, activities_per_user=args.activities,
                      n_pages=args.pages, n_topics=args.topics, n_communities=args.communities,
                      seed=args.seed)
    records = generate_activity_log(cfg)
    write_activities(records, args.output, with_user=True)
    _print_json({"records": len(records), "activities": int(sum(r.weight for r in records)),
                 "users": args.users})
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multiacct", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0, help="log more (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse activities, build and clean the bipartite graph")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("-o", "--output", help="graph edge-list file (default: stdout)")
    p.add_argument("--no-clean", action="store_true", help="skip the low-degree filter")
    p.add_argument("--removed", help="write removed account ids to this file")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("katz", help="Katz similarity and threshold predictions")
    p.add_argument("--graph", required=True)
    p.add_argument("--beta", default="auto", help="'auto' (0.9/||M||) or a number")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-terms", type=int, default=1000)
    p.add_argument("--method", choices=("auto", "solve", "series"), default="auto")
    p.add_argument("--weighted", action="store_true", help="use activity counts as weights")
    p.add_argument("--full", action="store_true", help="keep page rows too (default: accounts)")
    p.add_argument("--alpha", type=float, help="threshold percentile; writes predictions")
    p.add_argument("--predictions", default="predictions.csv")
    p.add_argument("--emit", choices=("positives", "all"), default="positives")
    p.add_argument("--truth", help="ownership CSV to evaluate the predictions against")
    p.add_argument("-o", "--output", help="binary matrix file")
    p.set_defaults(func=cmd_katz)

    p = sub.add_parser("embed", help="Node2Vec embeddings of all graph nodes")
    p.add_argument("--graph", required=True)
    p.add_argument("--p", type=float, default=0.25)
    p.add_argument("--q", type=float, default=4.0)
    p.add_argument("--d", type=int, default=128)
    p.add_argument("--num-walks", type=int, default=10)
    p.add_argument("--walk-length", type=int, default=80)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--unweighted", action="store_true", help="ignore activity counts")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="spectral clustering of account embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--graph", help="restrict to the graph's accounts (default: all nodes)")
    p.add_argument("-c", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-init", type=int, default=20)
    p.add_argument("-o", "--output", help="assignment CSV (default: stdout)")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("simulate-split", help="split each user's activities over s accounts")
    p.add_argument("input")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--s", type=int, default=15)
    p.add_argument("--min-activities", type=int, default=1000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--density", type=float,
                   help="first subsample each user to density*s unit activities")
    p.add_argument("--records", default="split_activities.csv")
    p.add_argument("--ownership", default="ownership.csv")
    p.set_defaults(func=cmd_simulate_split)

    p = sub.add_parser("detect", help="run the full pipeline")
    _add_pipeline_args(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score a predictions file against truth")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--graph", help="pair population = the graph's accounts "
                                   "(default: accounts in the truth file)")
    p.add_argument("--listed-only", action="store_true",
                   help="evaluate only the pairs listed in the file")
    p.add_argument("--queried", help="queried account list; their pairs are excluded")
    p.add_argument("--clusters", help="cluster CSV used with --queried")
    p.add_argument("--roc", help="write threshold,fpr,tpr CSV for the listed pairs")
    p.add_argument("--csv", action="store_true", help="one CSV row instead of JSON")
    p.add_argument("--verbose", action="store_true", help="also emit the (tp+fn) accuracy")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="one pipeline run per parameter value; CSV + PNGs")
    p.add_argument("parameter", choices=("density", "splits", "alpha", "d", "pq", "clusters"))
    p.add_argument("values", help="comma-separated values")
    _add_pipeline_args(p)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("generate", help="write a synthetic user-level activity log")
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--activities", type=float, default=450.0, help="mean activities per user")
    p.add_argument("--pages", type=int, default=1000)
    p.add_argument("--topics", type=int, default=20)
    p.add_argument("--communities", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_generate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except MultiAcctError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
