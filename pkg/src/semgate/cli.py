"""``semgate`` command line: run the gateway, or drive the benchmark against one.

Exit codes: 0 success, 2 invalid input, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from .errors import CorruptSnapshot, InvalidFraction, InvalidRecord, OutOfRange, SemgateError
from .harness.dataset import generate_synthetic, paraphrase_counts, read_seeds, write_dataset
from .harness.replay import (
    EmbeddedTarget,
    HttpTarget,
    OfflineJudge,
    Provenance,
    populate,
    replay,
    sweep_threshold,
    threshold_range,
)
from .harness.report import render_json, render_table

log = logging.getLogger("semgate")


class UsageError(Exception):
    pass


def _fractions(text: str):
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from exc
    return parts[0] if len(parts) == 1 else parts


def _add_target(p: argparse.ArgumentParser) -> None:
    p.add_argument("--target", required=True, help="gateway base URL, or 'embedded'")
    p.add_argument("--config", help="gateway config JSON used for an embedded target")
    p.add_argument("--snapshot", help="snapshot file backing an embedded target")
    p.add_argument("--llm-delay-ms", type=float, default=None, help="mock LLM delay (embedded target)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semgate", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the caching gateway")
    p.add_argument("--config", help="JSON config file (SEMGATE_* env vars override)")
    p.add_argument("--listen", help="HOST:PORT, overrides config")

    p = sub.add_parser("generate", help="write a synthetic seed/test dataset")
    p.add_argument("--seeds", type=int, required=True, help="seed records per category")
    p.add_argument("--tests", type=int, required=True, help="test queries per category")
    p.add_argument("--paraphrase-fraction", type=_fractions, required=True,
                   help="one fraction, or four comma-separated (one per category)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("populate", help="insert seed records into a target")
    p.add_argument("--dataset", required=True)
    _add_target(p)

    for name in ("replay", "sweep"):
        p = sub.add_parser(name, help="replay test queries" if name == "replay" else "replay across thresholds")
        p.add_argument("--tests", required=True)
        p.add_argument("--dataset", help="seed file; needed to judge hits (and to populate)")
        if name == "replay":
            p.add_argument("--populate", action="store_true", help="insert --dataset before replaying")
            p.add_argument("--threshold", type=float)
            p.add_argument("--no-uncached", action="store_true", help="skip the no-cache latency pass")
        else:
            p.add_argument("--from", dest="start", type=float, default=0.6)
            p.add_argument("--to", dest="stop", type=float, default=0.9)
            p.add_argument("--step", type=float, default=0.05)
        p.add_argument("--report", help="output file (default stdout)")
        p.add_argument("--format", choices=("json", "table"), default="table")
        p.add_argument("--parallel", type=int, default=1)
        _add_target(p)
    return parser


def _engine_for(args):
    from .service.app import build_engine
    from .service.config import load_config

    config = load_config(args.config)
    if args.snapshot:
        config.cache.snapshot_path = args.snapshot
    if args.llm_delay_ms is not None:
        config.upstream.mock_delay_ms = args.llm_delay_ms
    return config, build_engine(config)


def _target(args):
    if args.target == "embedded":
        config, engine = _engine_for(args)
        return EmbeddedTarget(engine), config
    if not args.target.startswith(("http://", "https://")):
        raise UsageError(f"--target must be a URL or 'embedded', got {args.target!r}")
    return HttpTarget(args.target), None


def _emit(text: str, dest: Optional[str]) -> None:
    if dest:
        Path(dest).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app
    from .service.config import load_config

    config = load_config(args.config)
    if args.listen:
        config = config.model_copy(update={"listen": args.listen})
    try:
        app = create_app(config)
    except CorruptSnapshot as exc:
        print(f"semgate: cannot start, snapshot {config.cache.snapshot_path} is corrupt: {exc}", file=sys.stderr)
        return 1
    host, port = config.host_port
    uvicorn.run(app, host=host, port=port)
    return 0


def cmd_generate(args) -> int:
    seeds, tests = generate_synthetic(args.seeds, args.tests, args.paraphrase_fraction, args.seed)
    meta = {"rng_seed": args.seed, "paraphrase_fraction": args.paraphrase_fraction}
    paths = write_dataset(args.out, seeds, tests, meta)
    for cat, c in paraphrase_counts(tests).items():
        print(f"{cat}: {c['paraphrases']}/{c['tests']} paraphrases")
    print(f"wrote {paths['seeds']} and {paths['tests']}")
    return 0


def cmd_populate(args) -> int:
    if args.target == "embedded" and not args.snapshot:
        raise UsageError("populate --target embedded needs --snapshot to keep the result")
    target, config = _target(args)
    n = populate(args.dataset, target)
    if config is not None:
        target.engine.store.snapshot_save(config.cache.snapshot_path)
    print(f"inserted {n} entries")
    return 0


def _provenance(dataset: Optional[str]):
    prov = Provenance()
    seeds = read_seeds(dataset) if dataset else []
    for s in seeds:
        prov.record(s.question, s.id)
    return prov, seeds


def cmd_replay(args) -> int:
    target, config = _target(args)
    prov, seeds = _provenance(args.dataset)
    if args.populate:
        if not args.dataset:
            raise UsageError("--populate needs --dataset")
        populate(seeds, target)
    report = replay(
        args.tests, target, OfflineJudge(prov), prov,
        threshold=args.threshold, measure_uncached=not args.no_uncached, parallel=args.parallel,
    )
    _emit(render_json(report) if args.format == "json" else render_table(report), args.report)
    return 0


def cmd_sweep(args) -> int:
    if not args.dataset:
        raise UsageError("sweep needs --dataset to repopulate the cache for each threshold")
    target, _ = _target(args)
    thresholds = threshold_range(args.start, args.stop, args.step)
    results = sweep_threshold(args.tests, args.dataset, target, thresholds, parallel=args.parallel)
    reports = [r for _, r in results]
    _emit(render_json(reports) if args.format == "json" else render_table(reports), args.report)
    return 0


COMMANDS = {
    "serve": cmd_serve,
    "generate": cmd_generate,
    "populate": cmd_populate,
    "replay": cmd_replay,
    "sweep": cmd_sweep,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, InvalidFraction, InvalidRecord, OutOfRange, ValidationError, json.JSONDecodeError) as exc:
        print(f"semgate: {exc}", file=sys.stderr)
        return 2
    except (SemgateError, OSError) as exc:
        print(f"semgate: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
