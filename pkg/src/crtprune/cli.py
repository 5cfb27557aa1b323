"""Command line front end.

Every subcommand reads the same key=value configuration, draws from a
seed-derived stream, and emits JSON, so runs are reproducible from the
command line alone.  `verify` runs the experiment suite and exits
non-zero when any report fails; everything else samples or evaluates one
object from the configured mechanism.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from .ascension import sample_ascension_time, sample_spine_tree
from .config import Config, EXPERIMENT_IDS, default_config, load_config
from .dynamics import mark_tree, prune_at, pruned_law, grow_step
from .errors import CrtpruneError
from .galton_watson import Exceeded, offspring_law, sample_flat, tree_law
from .metric import ghp_nested_upper, sample_excursion_subtrees
from .newick import serialize
from .experiments import run_suite
from .mechanism import landmarks
from .rng import stream

GHP_STEPS = 20_000


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crtprune",
                                description="continuum tree pruning toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("law", "sample", "prune", "grow", "ascension", "spine",
                 "ghp", "verify"):
        c = sub.add_parser(name)
        c.add_argument("--config", default=None, help="key=value run file")
        c.add_argument("--seed", type=int, default=None)
        c.add_argument("--out", default="-", help="output path, - for stdout")
        c.add_argument("--replicates", type=int, default=None)
        if name == "verify":
            c.add_argument("--experiment", default=None,
                           choices=list(EXPERIMENT_IDS) + ["all"])
    return p


def _emit(payload, out: str) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _newick_or_null(trees) -> List[Optional[str]]:
    return [None if isinstance(t, Exceeded) else serialize(t) for t in trees]


def _run(args) -> int:
    cfg = load_config(args.config) if args.config else default_config()
    seed = cfg.seed if args.seed is None else args.seed
    n = cfg.replicates if args.replicates is None else args.replicates
    mech = cfg.mechanism
    caps = cfg.caps

    if args.command == "verify":
        wanted = args.experiment or cfg.experiment
        eids = EXPERIMENT_IDS if wanted == "all" else (wanted,)
        reports = run_suite(eids, cfg, seed)
        _emit([r.as_dict() for r in reports], args.out)
        return 0 if all(r.verdict == "pass" for r in reports) else 1

    rng = stream(seed, 0)
    if args.command == "law":
        law = offspring_law(mech, cfg.lam, tail_tol=cfg.tolerances.tail)
        tl = tree_law(mech, cfg.lam, tail_tol=cfg.tolerances.tail)
        marks = landmarks(mech)
        payload = {"lambda": cfg.lam, "eta": tl.eta, "edge_rate": tl.edge_rate,
                   "leaf_mass": tl.leaf_mass, "largest_zero": marks.q0,
                   "offspring": {"values": law.values.tolist(),
                                 "probs": law.probs.tolist(),
                                 "mean": law.mean,
                                 "tail_mass": law.tail_mass}}
    elif args.command == "sample":
        ff = sample_flat(tree_law(mech, cfg.lam), n, rng,
                         node_cap=caps.max_nodes, height_cap=caps.max_depth)
        payload = _newick_or_null(ff.trees())
    elif args.command == "prune":
        ff = sample_flat(tree_law(mech, cfg.lam), n, rng,
                         node_cap=caps.max_nodes, height_cap=caps.max_depth)
        payload = []
        for t in ff.trees():
            if isinstance(t, Exceeded):
                payload.append(None)
                continue
            m = mark_tree(t, mech, cfg.lam, horizon=cfg.theta, rng=rng)
            payload.append(serialize(prune_at(m, cfg.theta)))
    elif args.command == "grow":
        ff = sample_flat(pruned_law(mech, cfg.lam, cfg.theta), n, rng,
                         node_cap=caps.max_nodes, height_cap=caps.max_depth)
        payload = []
        for t in ff.trees():
            if isinstance(t, Exceeded):
                payload.append(None)
                continue
            g = grow_step(t, mech, cfg.lam, cfg.theta, cfg.q, rng,
                          node_cap=caps.max_nodes)
            payload.append(None if isinstance(g, Exceeded) else serialize(g))
    elif args.command == "ascension":
        payload = sample_ascension_time(mech, cfg.lam, rng, n).tolist()
    elif args.command == "spine":
        tl = pruned_law(mech, cfg.lam, cfg.theta)
        payload = _newick_or_null(
            sample_spine_tree(tl, rng, node_cap=caps.max_nodes)
            for _ in range(n))
    elif args.command == "ghp":
        # fixed three-rung intensity ladder under the configured lambda;
        # each replicate reports both sparser rungs measured inside the
        # finest one, so the pair tracks approach to a common target
        lams = [cfg.lam / 16.0, cfg.lam / 4.0, cfg.lam]
        bounds = []
        for _ in range(n):
            fo = sample_excursion_subtrees(GHP_STEPS, lams, rng,
                                           allow_empty=True)
            bounds.append([
                ghp_nested_upper(fo.tree(2), fo.keep_mask(0, 2),
                                 fo.measure(2), fo.measure_in(0, 2), tol=1e-6),
                ghp_nested_upper(fo.tree(2), fo.keep_mask(1, 2),
                                 fo.measure(2), fo.measure_in(1, 2), tol=1e-6)])
        payload = {"lambdas": lams, "bounds": bounds}
    else:  # pragma: no cover - argparse guards the choices
        raise AssertionError(args.command)
    _emit(payload, args.out)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except CrtpruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
