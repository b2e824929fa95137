"""Command-line entry point: ``dalock <command> [options]``.

Exit codes: 0 on success, 2 on a configuration error, 3 when an invariant
check fails.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import corpus, harness
from .errors import ConfigError, CorpusError, DALockError, InvariantViolation
from .sketch import build_sketch

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value configuration file")
    p.add_argument("--users", help="number of simulated users")
    p.add_argument("--psi", help="hit-count threshold (e.g. 2^-7, inf)")
    p.add_argument("--k", dest="K", help="strike threshold")
    p.add_argument("--oracle", choices=harness.ORACLES)
    p.add_argument("--seed", help="master seed")
    p.add_argument("--workers", help="worker processes")
    p.add_argument("--out", help="output path")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key (repeatable)")


def _overrides(args: argparse.Namespace) -> dict:
    pairs = [f"{key}={getattr(args, key)}" for key in ("users", "psi", "K", "oracle", "seed", "workers", "out")
             if getattr(args, key, None) is not None]
    return harness.parse_assignments(pairs + list(args.set))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dalock", description="Distribution-aware password throttling simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("usability", "attacker-free lockout run"),
                       ("security", "run with an online attacker"),
                       ("matrix", "cross product of policy cells with shared user seeds"),
                       ("sketch-build", "train a count sketch on a corpus and serialize it")):
        _add_common(sub.add_parser(name, help=text))
    v = sub.add_parser("validate", help="run the invariant suite")
    v.add_argument("--seed", type=int, default=0)
    return parser


def _write_series(series: harness.MetricsSeries, out: str | None) -> None:
    if out is None:
        sys.stdout.write(series.to_csv())
    else:
        harness.emit_csv(series, out)


def _run(args: argparse.Namespace) -> int:
    if args.command == "validate":
        failed = 0
        for name, ok, detail in harness.validate(args.seed):
            print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
            failed += not ok
        return EXIT_INVARIANT if failed else EXIT_OK

    overrides = _overrides(args)
    if args.command == "matrix":
        cells = harness.matrix_cells(args.config, overrides)
        out = overrides.get("out")
        if out is None and args.config is not None:
            out = harness.load_config(args.config, overrides).out
        _, summary = harness.run_matrix(cells, out)
        sys.stdout.write(summary)
        return EXIT_OK

    cfg = harness.load_config(args.config, overrides)
    if args.command == "usability":
        _write_series(harness.run_usability(cfg), cfg.out)
    elif args.command == "security":
        _write_series(harness.run_security(cfg), cfg.out)
    elif args.command == "sketch-build":
        if cfg.out is None:
            raise ConfigError("sketch-build needs --out")
        banned, _ = harness._distribution(harness._corpus_key(cfg), cfg.banlist)
        ss = np.random.SeedSequence(cfg.sketch_seed, spawn_key=(0xC0FFEE,))
        sub_rng, noise_rng = (np.random.default_rng(s) for s in ss.spawn(2))
        trained = corpus.subsample(banned, cfg.subsample, sub_rng)
        sketch = build_sketch(trained, cfg.sketch_d, cfg.sketch_w, cfg.sketch_seed, cfg.epsilon, noise_rng)
        sketch.save(Path(cfg.out))
        print(f"wrote {cfg.out}: d={sketch.d} w={sketch.w} total={sketch.total_freq():.6g}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, CorpusError, DALockError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
