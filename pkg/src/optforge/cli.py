"""Command-line entry point: ``optforge {search,eval,descent-test,enumerate,hash}``.

Exit codes: 0 success, 2 config or input error, 3 runtime/search error, 4 data error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .config import load_config
from .equiv import hash_code
from .errors import ConfigError, DataError, OptForgeError, ParseError, UnknownOperator
from .expr import parse, serialize
from .records import DUPLICATE, CandidateRecord
from .screen import ScoreThreshold, descent_test
from .search import SearchResult, mct_search, random_search, select_top_k
from .space import SpaceConfig, enumerate_rules

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DATA = 0, 2, 3, 4


def summarize(log, k: int, threshold: ScoreThreshold, use_threshold: bool = True) -> dict:
    """The part of a report that is a pure function of the run log."""
    counts = SearchResult([], log).totals
    top = select_top_k(log, k, threshold, use_threshold)
    rows = []
    for rec in top:
        dups = sorted({r.expr for r in log if r.status == DUPLICATE and r.hash == rec.hash})
        rows.append(
            {
                "expr": rec.expr,
                "score": rec.score,
                "best_lr": rec.best_lr,
                "raw_metric": rec.raw_metric,
                "hash": rec.hash,
                "level": rec.level,
                "sample_index": rec.sample_index,
                "equivalent_duplicates": dups,
            }
        )
    return {"top_k": rows, "totals": counts}


def read_log(path) -> list:
    with open(path) as f:
        return [CandidateRecord.from_dict(json.loads(line)) for line in f if line.strip()]


def regenerate_report(run_dir) -> dict:
    """Rebuild top_k and totals of a finished run from run.jsonl and the echoed config."""
    run_dir = Path(run_dir)
    report = json.loads((run_dir / "report.json").read_text())
    echo = report["config_echo"]
    kind = report["metric_kind"]
    raw = echo["screen"]["score_threshold.loss" if kind == "loss" else "score_threshold.accuracy"]
    summary = summarize(
        read_log(run_dir / "run.jsonl"),
        echo["search"]["proposal_size"],
        ScoreThreshold(kind, raw),
        echo["search"]["use_threshold"],
    )
    return {**report, **summary}


def _load(args):
    overrides = list(args.set or [])
    if getattr(args, "algorithm", None):
        overrides.append(f'search.algorithm="{args.algorithm}"')
    if getattr(args, "seed", None) is not None:
        overrides.append(f"search.master_seed={args.seed}")
    if getattr(args, "out", None):
        overrides.append(f"output.dir={json.dumps(args.out)}")
    return load_config(args.config, overrides)


def _registry_echo(space_cfg: SpaceConfig) -> dict:
    reg = space_cfg.registry
    return {
        "unary": [op.name for op in reg.unary],
        "binary": [op.name for op in reg.binary],
        "inputs": [op.name for op in reg.inputs],
    }


def cmd_search(args) -> int:
    cfg = _load(args)
    task = cfg.build_task()
    space_cfg, screen_cfg, search_cfg = cfg.space_config(), cfg.screen_config(), cfg.search_config()
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    if cfg["search.algorithm"] == "random":
        result = random_search(task, space_cfg, screen_cfg, search_cfg, budget=cfg.budget)
    else:
        result = mct_search(task, space_cfg, screen_cfg, search_cfg)
    elapsed = time.perf_counter() - start

    with open(out / "run.jsonl", "w") as f:
        for rec in result.log:
            f.write(rec.to_json() + "\n")
    threshold = screen_cfg.threshold_for(task.metric_kind)
    report = {
        "version": __version__,
        "algorithm": cfg["search.algorithm"],
        "metric_kind": task.metric_kind,
        "task": task.describe(),
        **summarize(result.log, search_cfg.proposal_size, threshold, search_cfg.use_threshold),
        "path": result.path,
        "wall_clock_seconds": elapsed,
        "registry": _registry_echo(space_cfg),
        "constraints": space_cfg.constraints.to_entries(),
        "config_echo": cfg.echo(),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    totals = report["totals"]
    print(f"{cfg['search.algorithm']} search: {totals} in {elapsed:.1f}s")
    for i, row in enumerate(report["top_k"], 1):
        print(f"{i}. {row['expr']}  score={row['score']:.6g}  lr={row['best_lr']}")
    print(f"wrote {out / 'run.jsonl'} and {out / 'report.json'}")
    return EXIT_OK


def _parse_expr(text, space_cfg):
    return parse(text, space_cfg.registry)


def cmd_eval(args) -> int:
    from .tasks.evaluate import evaluate_optimizer

    cfg = _load(args)
    space_cfg, screen_cfg = cfg.space_config(), cfg.screen_config()
    rule = _parse_expr(args.expr, space_cfg)
    task = cfg.build_task()
    rec = evaluate_optimizer(rule, task, task.grid(), screen_cfg, seed=cfg["search.master_seed"])
    rec.hash = hash_code(rule, cfg.search_config().probe).hex
    print(rec.to_json())
    return EXIT_OK


def cmd_descent_test(args) -> int:
    cfg = _load(args)
    rule = _parse_expr(args.expr, cfg.space_config())
    passed, cosine = descent_test(rule, cfg.screen_config().descent)
    print(f"{'pass' if passed else 'fail'} {cosine:.12g}")
    return EXIT_OK


def cmd_enumerate(args) -> int:
    cfg = _load(args)
    space_cfg = cfg.space_config()
    if args.operators:
        names = [n.strip() for n in args.operators.split(",") if n.strip()]
        try:
            registry = space_cfg.registry.subset(names)
        except UnknownOperator as exc:
            raise ConfigError(str(exc)) from exc
        space_cfg = SpaceConfig(space_cfg.max_depth, registry, space_cfg.constraints)
    rules = sorted(serialize(r) for r in enumerate_rules(space_cfg, args.max_len))
    print(len(rules))
    if not args.count_only:
        for r in rules:
            print(r)
    return EXIT_OK


def cmd_hash(args) -> int:
    cfg = _load(args)
    space_cfg, probe = cfg.space_config(), cfg.search_config().probe
    a, b = _parse_expr(args.expr_a, space_cfg), _parse_expr(args.expr_b, space_cfg)
    ha, hb = hash_code(a, probe), hash_code(b, probe)
    print(f"{ha.hex}  {serialize(a)}")
    print(f"{hb.hex}  {serialize(b)}")
    print("equal" if ha == hb else "unequal")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML run configuration")
    common.add_argument("--set", action="append", metavar="K=V", help="override a config key, e.g. screen.lambda_d=0.2")
    common.add_argument("--seed", type=int, help="master seed (search.master_seed)")

    parser = argparse.ArgumentParser(prog="optforge", description="Search for optimizer update rules.")
    parser.add_argument("--version", action="version", version=f"optforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", parents=[common], help="run a search and write run.jsonl + report.json")
    p.add_argument("--algorithm", choices=("mct", "random"))
    p.add_argument("--out", metavar="DIR", help="output directory (output.dir)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", parents=[common], help="evaluate one rule on the configured task")
    p.add_argument("expr")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("descent-test", parents=[common], help="run the train-free descent screen")
    p.add_argument("expr")
    p.set_defaults(func=cmd_descent_test)

    p = sub.add_parser("enumerate", parents=[common], help="list every complete rule up to a length")
    p.add_argument("max_len", type=int)
    p.add_argument("--operators", help="comma-separated registry subset, e.g. sign,add,g,one")
    p.add_argument("--count-only", action="store_true")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("hash", parents=[common], help="compare the equivalence codes of two rules")
    p.add_argument("expr_a")
    p.add_argument("expr_b")
    p.set_defaults(func=cmd_hash)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, UnknownOperator) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OptForgeError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
