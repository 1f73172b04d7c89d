"""Command-line entry point.

Exit status: 0 when every graded check passes, 2 when a check fails or a
condition cannot be met, 1 on usage errors.
"""
from __future__ import annotations

import argparse
import itertools
import json
import math
import random
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .coalescent import (UnsatisfiableCondition, check_record_invariants, check_trace_invariants,
                         run_coalescent, selection_record)
from .exact_oracle import (MODES, chain_count, degprob_table, exact_label_prob,
                           exact_rrt_law, verify_probonevert, verify_product_form)
from .experiments import EXPERIMENTS, ExperimentConfig, replicate_rng, run_experiment
from .limitlaws import ks_critical, ks_two_sample, mark_sample
from .tree_core import build_rrt, check_tree_invariants, to_edge_csv

EXP_DEFAULTS = {
    "near-max": {"n": 2**16, "replicates": 2000, "j": [0, 1]},
    "moments": {"n": 2**16, "replicates": 2000, "j": [0]},
    "cond-degree": {"n": 2**16, "replicates": 10_000, "degrees": ["abs:0"]},
    "fixed-label": {"n": 10**6, "replicates": 10_000, "labels": ["pow:0.5"]},
    "tau": {"n": 1000, "replicates": 100_000},
    "h2": {"n": 2**16, "replicates": 2000, "n_values": [2**10, 2**13, 2**16]},
    "degree-tail": {"n": 1024, "replicates": 100_000, "degrees": ["abs:8"]},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _specs(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _pairs(text: str) -> list[list[int]]:
    out = []
    for part in text.split(","):
        a, _, b = part.partition("-")
        out.append([int(a), int(b)])
    return out


def _resolve_seed(seed: int | None) -> int:
    if seed is None:
        seed = int(np.random.SeedSequence().entropy) % (2**63)
        print(f"seed: {seed}", file=sys.stderr)
    return seed


def _emit(out: str | None, name: str, text: str, header: str | None = None) -> None:
    body = (f"# {header}\n" if header else "") + text
    if out is None:
        sys.stdout.write(body)
        return
    path = Path(out)
    if path.suffix:
        path.parent.mkdir(parents=True, exist_ok=True)
    else:
        path.mkdir(parents=True, exist_ok=True)
        path = path / name
    path.write_text(body, encoding="utf-8", newline="")
    print(f"wrote {path}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rrtcoal", description="Random recursive trees via the coalescent: generators, exact oracles, experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, n_required=False):
        sp.add_argument("--n", type=int, required=n_required)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    g = sub.add_parser("gen-rrt", help="sample a random recursive tree as a child,parent CSV")
    common(g, True)
    g = sub.add_parser("gen-coalescent", help="run the coalescent; writes the merge trace and the relabelled tree")
    common(g, True)

    o = sub.add_parser("oracle", help="exact enumeration suites")
    o.add_argument("--suite", required=True, choices=["coupling", "probonevert", "product", "label", "degprob"])
    o.add_argument("--n", type=int)
    o.add_argument("--k", type=int)
    o.add_argument("--reps", type=int, help="number of randomized instances")
    o.add_argument("--seed", type=int)
    o.add_argument("--out")

    e = sub.add_parser("exp", help="Monte Carlo experiments")
    e.add_argument("name", choices=sorted(EXPERIMENTS))
    e.add_argument("--config", help="JSON file with ExperimentConfig fields; flags override it")
    e.add_argument("--n", type=int)
    e.add_argument("--k", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--reps", type=int, dest="replicates")
    e.add_argument("--threads", type=int, dest="workers")
    e.add_argument("--out")
    e.add_argument("--labels", type=_specs, help="comma list of abs:L, pow:a, rho:r, last")
    e.add_argument("--degrees", type=_specs, help="comma list of abs:d, a:a")
    e.add_argument("--j", type=_ints)
    e.add_argument("--orders", type=_ints)
    e.add_argument("--rects", help='rectangles "a,b,c,d;..." per test set, sets separated by "|"')
    e.add_argument("--pairs", type=_pairs, help="label index pairs such as 0-1,0-2")
    e.add_argument("--n-values", type=_ints, dest="n_values")
    e.add_argument("--eps", type=_floats)
    e.add_argument("--t-n", type=int, dest="t_n")
    e.add_argument("--mode", choices=["auto", "full", "tracked"])

    s = sub.add_parser("selfcheck", help="structural invariant suite")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--reps", type=int, default=200)
    s.add_argument("--seed", type=int)
    return p


# -- commands ---------------------------------------------------------------

def cmd_gen_rrt(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be positive")
    seed = _resolve_seed(args.seed)
    t = build_rrt(args.n, np.random.default_rng(seed))
    _emit(args.out, f"rrt_n{args.n}_seed{seed}.csv", to_edge_csv(t, f"version={__version__} seed={seed} n={args.n}"))
    return 0


def cmd_gen_coalescent(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be positive")
    seed = _resolve_seed(args.seed)
    tr = run_coalescent(args.n, np.random.default_rng(seed))
    check_trace_invariants(tr, selection_record(tr))
    head = f"version={__version__} seed={seed} n={args.n}"
    _emit(args.out, f"coalescent_n{args.n}_seed{seed}.jsonl", tr.to_jsonl(), head)
    if args.out is not None:
        _emit(args.out if not Path(args.out).suffix else str(Path(args.out).with_suffix(".csv")),
              f"coalescent_n{args.n}_seed{seed}_tree.csv", to_edge_csv(tr.relabelled(), head))
    return 0


def _oracle_coupling(args) -> int:
    sizes = [args.n] if args.n else [3, 4, 5]
    ok_all = True
    for n in sizes:
        if not 2 <= n <= 6:
            raise UsageError("coupling suite needs 2 <= n <= 6")
        law = exact_rrt_law(n)
        ok = law.is_uniform() and len(law) == math.factorial(n - 1)
        per = chain_count(n) // len(law)
        print(f"{len(law)} trees × {per} chains, uniform: {'PASS' if ok else 'FAIL'}")
        if args.out:
            _emit(args.out, f"rrt_law_n{n}.csv", law.to_csv())
        ok_all &= ok
    return 0 if ok_all else 2


def _oracle_probonevert(args) -> int:
    rnd = random.Random(_resolve_seed(args.seed))
    reps = args.reps or 1000
    bad = 0
    for _ in range(reps):
        n = rnd.randint(3, 60)
        mode = rnd.choice(MODES)
        t_n = 2 if mode == "nolab" else rnd.randint(2, n)
        J = rnd.sample(range(t_n, n + 1), rnd.randint(0, min(12, n - t_n + 1)))
        ell = rnd.randint(t_n, n)
        cf, en = verify_probonevert(n, t_n, J, rnd.randint(0, 6), rnd.randint(0, 10), ell, mode)
        bad += cf != en
    print(f"{reps} one-vertex instances, mismatches: {bad}: {'PASS' if bad == 0 else 'FAIL'}")
    return 0 if bad == 0 else 2


def random_disjoint_instance(rnd: random.Random, max_total: int = 14, max_k: int = 4):
    n = rnd.randint(6, 80)
    t_n = rnd.randint(2, n - 3)
    k = rnd.randint(1, max_k)
    pool = rnd.sample(range(t_n, n + 1), min(max_total, n - t_n + 1))
    cuts = sorted(rnd.randint(0, len(pool)) for _ in range(k - 1))
    Js = [pool[a:b] for a, b in zip([0] + cuts, cuts + [len(pool)])]
    ds = [rnd.randint(0, 4) for _ in range(k)]
    hs = [rnd.randint(0, 8) for _ in range(k)]
    ells = [rnd.randint(t_n, n) for _ in range(k)]
    return n, t_n, Js, ds, hs, ells


def _oracle_product(args) -> int:
    rnd = random.Random(_resolve_seed(args.seed))
    reps = args.reps or 500
    bad = 0
    for _ in range(reps):
        n, t_n, Js, ds, hs, ells = random_disjoint_instance(rnd)
        mode = rnd.choice(("geq", "eq"))
        joint, prod = verify_product_form(n, t_n, Js, ds, hs, ells, mode)
        bad += joint != prod
    print(f"{reps} disjoint multi-vertex instances, mismatches: {bad}: {'PASS' if bad == 0 else 'FAIL'}")
    return 0 if bad == 0 else 2


def _oracle_label(args) -> int:
    sizes = [args.n] if args.n else [3, 4, 5]
    ks = [args.k] if args.k else [1, 2, 3]
    bad = total = 0
    for n in sizes:
        for k in ks:
            if k > n:
                continue
            for labels in itertools.permutations(range(1, n + 1), k):
                en, cf = exact_label_prob(n, labels)
                total += 1
                bad += en != cf
    print(f"{total} label tuples, mismatches: {bad}: {'PASS' if bad == 0 else 'FAIL'}")
    return 0 if bad == 0 else 2


def _oracle_degprob(args) -> int:
    sizes = [args.n] if args.n else [3, 4, 5]
    bad = total = 0
    for n in sizes:
        for degrees in ([1], [2], [1, 1], [2, 1], [1, 1, 1]):
            for t_n in (2, 3):
                if t_n > n or len(degrees) > n:
                    continue
                target = 2.0 ** -sum(degrees)
                for p in degprob_table(n, degrees, t_n).values():
                    total += 1
                    bad += float(p) != target
    print(f"{total} feasible truncated selections, mismatches: {bad}: {'PASS' if bad == 0 else 'FAIL'}")
    return 0 if bad == 0 else 2


def cmd_oracle(args) -> int:
    return {"coupling": _oracle_coupling, "probonevert": _oracle_probonevert, "product": _oracle_product,
            "label": _oracle_label, "degprob": _oracle_degprob}[args.suite](args)


EXP_FLAGS = ("n", "k", "seed", "replicates", "workers", "labels", "degrees", "j", "orders", "pairs",
             "n_values", "eps", "t_n", "mode")


def config_from_args(args) -> ExperimentConfig:
    merged: dict = {"experiment": args.name, **EXP_DEFAULTS.get(args.name, {})}
    if args.config:
        try:
            merged.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        merged["experiment"] = args.name
    for key in EXP_FLAGS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    if args.rects is not None:
        merged["rects"] = [r for r in args.rects.split("|")]
    if merged.get("seed") is None:
        merged["seed"] = _resolve_seed(None)
    try:
        return ExperimentConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_exp(args) -> int:
    cfg = config_from_args(args)
    try:
        rep = run_experiment(cfg)
    except UnsatisfiableCondition as exc:
        print(f"unsatisfiable condition: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    stem = f"{cfg.experiment}_n{cfg.n}_seed{cfg.seed}"
    if args.out:
        _emit(args.out, stem + ".json", rep.to_json())
    _emit(args.out, stem + ".csv", rep.to_csv())
    print(f"{cfg.experiment}: {'PASS' if rep.passed else 'FAIL'} ({rep.invariant_checks} invariant checks, "
          f"{rep.wall_clock:.1f}s)", file=sys.stderr)
    return 0 if rep.passed else 2


def cmd_selfcheck(args) -> int:
    seed = _resolve_seed(args.seed)
    checks = 0
    for r in range(args.reps):
        rng = replicate_rng(seed, r)
        tr = run_coalescent(args.n, rng)
        rec = selection_record(tr)
        checks += check_trace_invariants(tr, rec) + check_record_invariants(rec)
        t = build_rrt(args.n, rng)
        pairs = [tuple(int(v) for v in rng.integers(1, args.n + 1, 2)) for _ in range(5)]
        checks += check_tree_invariants(t, pairs)
    m = 10_000
    ref = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31,)))
    x, _ = mark_sample(ref, m)
    y, _ = mark_sample(ref, m)
    ks = ks_two_sample(x, y)
    crit = ks_critical(m) * math.sqrt(2)
    ok = ks <= crit
    print(f"{checks} invariant checks passed; reference self-test KS {ks:.4f} <= {crit:.4f}: "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


COMMANDS = {"gen-rrt": cmd_gen_rrt, "gen-coalescent": cmd_gen_coalescent, "oracle": cmd_oracle,
            "exp": cmd_exp, "selfcheck": cmd_selfcheck}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
