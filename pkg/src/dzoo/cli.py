"""Command-line entry point.

Subcommands: `attack` runs a benchmark config end to end, `analyze` emits
embedding neighborhood statistics, `victim-check` probes a served victim,
and `serve` hosts the FastAPI service.  Exit codes: 0 success, 2 config or
input error, 3 victim unavailable.
"""

from __future__ import annotations

import argparse
import sys

from .errors import (
    ConfigError,
    DatasetFormatError,
    EmbeddingFormatError,
    VictimProtocolError,
    VictimUnavailableError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VICTIM = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dzoo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    attack = sub.add_parser("attack", help="run the benchmark grid from a config file")
    attack.add_argument("--config", required=True, help="benchmark config (json)")
    attack.add_argument("--out", default=None, help="report path (default: config 'out' or stdout)")
    attack.add_argument("--format", choices=["json", "table"], default="json")
    attack.add_argument("--seed-offset", type=int, default=0, metavar="N",
                        help="added to every configured seed")
    attack.add_argument("--workers", type=int, default=None,
                        help="attack examples in parallel (same report either way)")

    analyze = sub.add_parser("analyze", help="embedding neighborhood statistics")
    analyze.add_argument("--config", required=True)
    analyze.add_argument("--out", default=None)
    analyze.add_argument("--format", choices=["json", "table"], default="json")
    analyze.add_argument("--thresholds", default=None,
                         help="comma-separated cosine thresholds (overrides config)")

    check = sub.add_parser("victim-check", help="probe a remote victim endpoint")
    check.add_argument("--config", default=None, help="config with a remote victim")
    check.add_argument("--endpoint", default=None, help="endpoint URL (overrides config)")
    check.add_argument("--timeout", type=float, default=5.0)
    check.add_argument("--retries", type=int, default=1)

    serve = sub.add_parser("serve", help="host the victim/attack service")
    serve.add_argument("--config", required=True)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _write_output(data: bytes, out_path: str | None) -> None:
    if out_path:
        with open(out_path, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()


def _cmd_attack(args) -> int:
    from . import harness
    from .embedding import load_embeddings

    config = harness.load_config(args.config)
    if args.seed_offset:
        config = harness.apply_seed_offset(config, args.seed_offset)
    if not config.dataset_path:
        raise ConfigError("config needs a 'dataset' path for the attack command")
    store = load_embeddings(config.embedding_path)
    dataset = harness.load_dataset(config.dataset_path)
    harness.validate_dataset_labels(dataset, harness.victim_class_count(config.victim_spec))
    victim = harness.build_victim(config.victim_spec, store)
    workers = args.workers if args.workers is not None else config.workers
    report = harness.run_benchmark(
        dataset, victim, store, config.attacks, config.regimes,
        config.seeds, config.runs, goal=config.goal, workers=workers,
    )
    _write_output(harness.render_report(report, args.format), args.out or config.out_path)
    return EXIT_OK


def _render_stats_table(data: bytes) -> bytes:
    import json

    rows = [json.loads(line) for line in data.decode("utf-8").splitlines() if line]
    headers = ["Threshold", "Vocab", "MeanNeighbors", "MeanNonzero"]
    body = [
        [f"{r['threshold']:g}", str(r["vocab_size"]),
         f"{r['mean_neighbors']:.4f}", f"{r['mean_neighbors_nonzero']:.4f}"]
        for r in rows
    ]
    widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip()]
    lines += ["  ".join(row[i].ljust(widths[i]) for i in range(len(headers))).rstrip()
              for row in body]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _cmd_analyze(args) -> int:
    from . import harness
    from .embedding import load_embeddings

    config = harness.load_config(args.config)
    thresholds = config.analyze_thresholds
    if args.thresholds:
        try:
            thresholds = [float(t) for t in args.thresholds.split(",") if t.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --thresholds value: {exc}") from exc
    store = load_embeddings(config.embedding_path)
    data = harness.analyze_embeddings(store, thresholds)
    if args.format == "table":
        data = _render_stats_table(data)
    _write_output(data, args.out)
    return EXIT_OK


def _cmd_victim_check(args) -> int:
    from . import harness
    from .victim import make_remote_victim

    endpoint = args.endpoint
    if endpoint is None:
        if args.config is None:
            raise ConfigError("victim-check needs --endpoint or --config")
        config = harness.load_config(args.config)
        if config.victim_spec.get("kind") != "remote":
            raise ConfigError("victim-check needs a remote victim in the config")
        endpoint = config.victim_spec["endpoint"]
    victim = make_remote_victim(endpoint, timeout=args.timeout, retries=args.retries)
    probs = victim(("hello",))
    print(f"victim at {endpoint} ok: {len(probs)} classes, probabilities {[round(p, 6) for p in probs]}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app_from_config

    app = create_app_from_config(args.config)
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "attack": _cmd_attack,
        "analyze": _cmd_analyze,
        "victim-check": _cmd_victim_check,
        "serve": _cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, EmbeddingFormatError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VictimUnavailableError as exc:
        print(f"victim unavailable: {exc}", file=sys.stderr)
        return EXIT_VICTIM
    except VictimProtocolError as exc:
        print(f"victim protocol error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
