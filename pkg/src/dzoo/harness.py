"""Benchmark orchestration: datasets, attack grids, metric aggregation.

The runner executes attack x regime x run grids over a dataset, with one
fresh query ledger per attacked example, and aggregates success rate,
average queries, and percent words changed as mean +/- population std
across runs.  Reports embed the per-run and per-example raw rows so every
aggregate can be recomputed from the report alone.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from . import search
from .constraints import ConstraintConfig, pretransform_filter, regime_config
from .embedding import EmbeddingStore, neighborhood_stats
from .errors import ConfigError, DatasetFormatError, QueryBudgetExceeded, VictimProtocolError
from .search import AttackOutcome, SearchConfig, importance_order
from .victim import (
    GoalConfig,
    QueryLedger,
    Sentence,
    Victim,
    evaluate_goal,
    make_bag_victim,
    make_remote_victim,
    make_scripted_victim,
)

ATTACK_NAMES = (
    "discretezoo",
    "random",
    "random_cs",
    "farthest",
    "closest",
    "greedy",
    "beam",
    "wir_unk",
    "wir_del",
    "wir_rand",
)

# Fallback sampling budget for the continued-sampling baseline when the
# config does not pin one.
DEFAULT_CS_BUDGET = 100

REPORT_SCHEMA = "dzoo-benchmark-report/1"
QUERY_ACCOUNTING_NOTE = (
    "query counts include importance-ranking probes; every victim evaluation "
    "of a distinct sentence during an attack hits the same per-example ledger"
)


@dataclass(frozen=True)
class ExampleRecord:
    id: str
    tokens: tuple[str, ...]
    label: int
    weight: int = 1


@dataclass(frozen=True)
class AttackSpec:
    """One attack column of the grid: algorithm name plus its tunables."""

    name: str
    search: SearchConfig = SearchConfig()
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.name not in ATTACK_NAMES:
            raise ConfigError(f"unknown attack {self.name!r}, expected one of {ATTACK_NAMES}")

    @property
    def label(self) -> str:
        if self.name == "beam":
            return f"beam{self.params.get('width', 4)}"
        return self.name


def load_dataset(source: str | os.PathLike | bytes | BinaryIO) -> list[ExampleRecord]:
    """Parse line-delimited json records {"id", "tokens", "label"}."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, bytes):
        data = source
    else:
        data = source.read()
        if isinstance(data, str):
            data = data.encode("utf-8")
    records: list[ExampleRecord] = []
    for lineno, line in enumerate(data.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}: invalid json: {exc}") from exc
        if not isinstance(obj, dict) or not {"id", "tokens", "label"} <= obj.keys():
            raise DatasetFormatError(f"line {lineno}: record needs id, tokens and label fields")
        tokens = obj["tokens"]
        if (
            not isinstance(tokens, list)
            or not tokens
            or not all(isinstance(t, str) for t in tokens)
        ):
            raise DatasetFormatError(f"line {lineno}: tokens must be a nonempty list of strings")
        if not isinstance(obj["label"], int) or isinstance(obj["label"], bool) or obj["label"] < 0:
            raise DatasetFormatError(f"line {lineno}: label must be a non-negative integer")
        records.append(ExampleRecord(id=str(obj["id"]), tokens=tuple(tokens), label=obj["label"]))
    return records


def run_attack(
    spec: AttackSpec,
    sentence: Sentence,
    true_label: int,
    victim: Victim,
    ledger: QueryLedger,
    store: EmbeddingStore,
    constraints: ConstraintConfig,
    goal: GoalConfig,
    rng: np.random.Generator,
) -> AttackOutcome:
    """Dispatch one attack by name with its spec'd parameters."""
    name = spec.name
    if name == "discretezoo":
        return search.discretezoo_attack(
            sentence, true_label, victim, ledger, store, constraints,
            spec.search, goal=goal, importance=spec.params.get("importance", "unk"), rng=rng,
        )
    if name == "random":
        return search.random_attack(sentence, true_label, victim, ledger, store, constraints, rng, goal=goal)
    if name == "random_cs":
        budget = spec.search.query_budget or DEFAULT_CS_BUDGET
        return search.random_cs_attack(
            sentence, true_label, victim, ledger, store, constraints, budget, rng, goal=goal
        )
    if name in ("farthest", "closest"):
        return search.extremal_attack(sentence, true_label, victim, ledger, store, constraints, name, goal=goal)
    if name == "greedy":
        return search.greedy_attack(sentence, true_label, victim, ledger, store, constraints, goal=goal)
    if name == "beam":
        return search.beam_attack(
            sentence, true_label, victim, ledger, store, constraints,
            int(spec.params.get("width", 4)), goal=goal,
        )
    # wir_unk / wir_del / wir_rand: greedy pass in importance order
    mode = name.split("_", 1)[1]
    targets = pretransform_filter(sentence, constraints)
    if not targets:
        return AttackOutcome(False, sentence, ledger.count, 0, [], search.STATUS_SKIPPED)
    try:
        order = importance_order(sentence, targets, victim, ledger, true_label, goal, mode, rng)
    except QueryBudgetExceeded:
        return AttackOutcome(False, sentence, ledger.count, 0, [], search.STATUS_BUDGET)
    return search.greedy_attack(
        sentence, true_label, victim, ledger, store, constraints, order=order, goal=goal
    )


def _attack_one_example(
    example: ExampleRecord,
    spec: AttackSpec,
    victim: Victim,
    store: EmbeddingStore,
    constraints: ConstraintConfig,
    goal: GoalConfig,
    seed: int,
    index: int,
) -> dict:
    """Run (or skip) one example; returns its raw report row."""
    # the skip probe is charged to no ledger: already-misclassified examples
    # cost the attack nothing
    try:
        probe = evaluate_goal(victim(example.tokens), example.label, goal)
    except VictimProtocolError:
        return {"id": example.id, "status": search.STATUS_VICTIM_ERROR, "success": False,
                "queries": 0, "words_changed": 0, "skipped": False, "length": len(example.tokens)}
    if probe.flipped:
        return {"id": example.id, "status": "skipped", "success": False,
                "queries": 0, "words_changed": 0, "skipped": True, "length": len(example.tokens)}
    ledger = QueryLedger(
        hard_cap=spec.search.query_budget if spec.name != "random_cs" else None
    )
    rng = np.random.default_rng([seed, index])
    outcome = run_attack(
        spec, Sentence(example.tokens), example.label, victim, ledger, store, constraints, goal, rng
    )
    return {
        "id": example.id,
        "status": outcome.status,
        "success": outcome.success,
        "queries": outcome.queries,
        "words_changed": outcome.words_changed,
        "skipped": False,
        "length": len(example.tokens),
    }


def _mean_std(values: Sequence[float]) -> dict:
    if not values:
        return {"mean": 0.0, "std": 0.0}
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def _run_row(run_index: int, seed: int, rows: list[dict]) -> dict:
    attacked = [r for r in rows if not r["skipped"]]
    successes = [r for r in attacked if r["success"]]
    pct_changed = None
    if successes:
        pct_changed = float(
            np.mean([100.0 * r["words_changed"] / r["length"] for r in successes])
        )
    return {
        "run": run_index,
        "seed": seed,
        "attacked": len(attacked),
        "skipped": len(rows) - len(attacked),
        "successes": len(successes),
        "victim_errors": sum(1 for r in attacked if r["status"] == search.STATUS_VICTIM_ERROR),
        "success_rate_pct": 100.0 * len(successes) / len(attacked) if attacked else 0.0,
        "avg_queries": float(np.mean([r["queries"] for r in attacked])) if attacked else 0.0,
        "pct_words_changed": pct_changed,
        "total_queries": int(sum(r["queries"] for r in attacked)),
        "examples": rows,
    }


def run_benchmark(
    dataset: Sequence[ExampleRecord],
    victim: Victim,
    store: EmbeddingStore,
    attack_specs: Sequence[AttackSpec],
    regimes: Sequence[ConstraintConfig],
    seeds: Sequence[int],
    runs_per_attack: int,
    goal: GoalConfig = GoalConfig(),
    workers: int | None = None,
) -> dict:
    """Run the full attack x regime x run grid and aggregate the report.

    Deterministic given (dataset, victim, store, specs, seeds): per-example
    generators are derived from (run seed, example index), so parallel and
    serial execution produce identical reports.
    """
    if runs_per_attack < 1:
        raise ConfigError("runs_per_attack must be >= 1")
    if len(seeds) < runs_per_attack:
        raise ConfigError(
            f"need at least {runs_per_attack} seeds for {runs_per_attack} runs, got {len(seeds)}"
        )
    cells = []
    for spec in attack_specs:
        for constraints in regimes:
            per_run = []
            for r in range(runs_per_attack):
                seed = int(seeds[r])
                tasks = [
                    (example, spec, victim, store, constraints, goal, seed, i)
                    for i, example in enumerate(dataset)
                ]
                if workers and workers > 1:
                    with ThreadPoolExecutor(max_workers=workers) as pool:
                        rows = list(pool.map(lambda t: _attack_one_example(*t), tasks))
                else:
                    rows = [_attack_one_example(*t) for t in tasks]
                per_run.append(_run_row(r, seed, rows))
            pct_values = [row["pct_words_changed"] for row in per_run
                          if row["pct_words_changed"] is not None]
            pct_agg = _mean_std(pct_values)
            pct_agg["no_successes"] = not pct_values
            cells.append({
                "attack": spec.label,
                "regime": constraints.regime_name,
                "search": {
                    "n_samples": spec.search.n_samples,
                    "max_updates": spec.search.max_updates,
                    "step_scale": spec.search.step_scale,
                    "pool_factor": spec.search.pool_factor,
                    "query_budget": spec.search.query_budget,
                },
                "params": dict(spec.params),
                "constraints": {
                    "cosine_threshold": constraints.cosine_threshold,
                    "candidate_pool_size": constraints.candidate_pool_size,
                    "allow_repeat_modification": constraints.allow_repeat_modification,
                },
                "runs": runs_per_attack,
                "skipped": per_run[0]["skipped"],
                "victim_errors": int(sum(row["victim_errors"] for row in per_run)),
                "success_rate_pct": _mean_std([row["success_rate_pct"] for row in per_run]),
                "avg_queries": _mean_std([row["avg_queries"] for row in per_run]),
                "pct_words_changed": pct_agg,
                "per_run": per_run,
            })
    return {
        "schema": REPORT_SCHEMA,
        "goal": {"kind": goal.kind, "kappa": goal.kappa, "epsilon": goal.epsilon},
        "dataset_size": len(dataset),
        "runs": runs_per_attack,
        "seeds": [int(s) for s in seeds[:runs_per_attack]],
        "query_accounting": QUERY_ACCOUNTING_NOTE,
        "cells": cells,
    }


def _format_cell(agg: dict) -> str:
    text = f"{agg['mean']:.1f}±{agg['std']:.1f}"
    if agg.get("no_successes"):
        text += " *"
    return text


def render_report(report: dict, format: str = "json") -> bytes:
    """Serialize a report; json is byte-deterministic, table mirrors the json."""
    if format == "json":
        return (json.dumps(report, sort_keys=True, indent=2) + "\n").encode("utf-8")
    if format != "table":
        raise ValueError(f"unknown format {format!r}, expected 'json' or 'table'")
    headers = ["Attack", "Regime", "Success%", "Avg#Queries", "%WordsChanged", "Runs", "Skipped"]
    body = []
    flagged = False
    for cell in report.get("cells", []):
        pct = _format_cell(cell["pct_words_changed"])
        flagged = flagged or cell["pct_words_changed"].get("no_successes", False)
        body.append([
            cell["attack"],
            cell["regime"],
            _format_cell(cell["success_rate_pct"]),
            _format_cell(cell["avg_queries"]),
            pct,
            str(cell["runs"]),
            str(cell["skipped"]),
        ])
    widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip()]
    for row in body:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(headers))).rstrip())
    if flagged:
        lines.append("* no successes: % words changed undefined, reported as 0")
    return ("\n".join(lines) + "\n").encode("utf-8")


def analyze_embeddings(store: EmbeddingStore, thresholds: Sequence[float]) -> bytes:
    """Neighborhood stats per threshold as json-lines, histogram included."""
    lines = []
    for threshold in thresholds:
        stats = neighborhood_stats(store, threshold)
        record = {
            "threshold": stats.threshold,
            "vocab_size": stats.vocab_size,
            "mean_neighbors": stats.mean_neighbors,
            "mean_neighbors_nonzero": stats.mean_neighbors_nonzero,
            "histogram": {str(k): stats.histogram[k] for k in sorted(stats.histogram)},
        }
        lines.append(json.dumps(record, sort_keys=True))
    return ("\n".join(lines) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# config file handling

STOCHASTIC_ATTACKS = {"discretezoo", "random", "random_cs", "wir_rand"}


@dataclass
class BenchmarkConfig:
    embedding_path: str
    dataset_path: str | None
    victim_spec: dict
    attacks: list[AttackSpec]
    regimes: list[ConstraintConfig]
    seeds: list[int]
    runs: int
    goal: GoalConfig
    out_path: str | None = None
    analyze_thresholds: list[float] = field(default_factory=lambda: [0.9, 0.7])
    workers: int | None = None
    num_classes: int | None = None


def _parse_search(obj: dict) -> SearchConfig:
    allowed = {"n_samples", "max_updates", "step_scale", "pool_factor", "query_budget", "rng_seed"}
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown search option(s): {sorted(unknown)}")
    try:
        return SearchConfig(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid search config: {exc}") from exc


def _parse_attack(obj) -> AttackSpec:
    if isinstance(obj, str):
        obj = {"name": obj}
    if not isinstance(obj, dict) or "name" not in obj:
        raise ConfigError(f"attack entry must be a name or an object with a name: {obj!r}")
    obj = dict(obj)
    name = obj.pop("name")
    search_cfg = _parse_search(obj.pop("search", {}))
    if name == "beam" and "width" in obj:
        if not isinstance(obj["width"], int) or obj["width"] < 1:
            raise ConfigError("beam width must be a positive integer")
    if name == "discretezoo" and obj.get("importance") not in (None, "unk", "del", "rand"):
        raise ConfigError(f"invalid importance mode {obj.get('importance')!r}")
    return AttackSpec(name=name, search=search_cfg, params=obj)


def _parse_regime(obj) -> ConstraintConfig:
    if isinstance(obj, str):
        return regime_config(obj)
    if not isinstance(obj, dict) or "name" not in obj:
        raise ConfigError(f"regime entry must be a name or an object with a name: {obj!r}")
    obj = dict(obj)
    name = obj.pop("name")
    try:
        return regime_config(name, **obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid regime {name!r}: {exc}") from exc


def load_config(path: str | os.PathLike) -> BenchmarkConfig:
    """Parse and validate the benchmark config file (see README for schema)."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid json: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a json object")
    if "embeddings" not in raw:
        raise ConfigError("config needs an 'embeddings' path")
    victim_spec = raw.get("victim")
    if not isinstance(victim_spec, dict) or victim_spec.get("kind") not in ("bag", "scripted", "remote"):
        raise ConfigError("config needs a victim object with kind bag, scripted or remote")
    attacks = [_parse_attack(a) for a in raw.get("attacks", [])]
    regimes = [_parse_regime(r) for r in raw.get("regimes", ["constrained", "unconstrained"])]
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a list of integers")
    runs = raw.get("runs", 1)
    if not isinstance(runs, int) or runs < 1:
        raise ConfigError("runs must be a positive integer")
    if len(seeds) < runs:
        raise ConfigError(f"{runs} runs need at least {runs} seeds, got {len(seeds)}")
    goal_obj = raw.get("goal", {})
    try:
        goal = GoalConfig(**goal_obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid goal config: {exc}") from exc
    thresholds = raw.get("analyze_thresholds", [0.9, 0.7])
    if not isinstance(thresholds, list) or not all(
        isinstance(t, (int, float)) and -1.0 < t <= 1.0 for t in thresholds
    ):
        raise ConfigError("analyze_thresholds must be a list of numbers in (-1, 1]")
    workers = raw.get("workers")
    if workers is not None and (not isinstance(workers, int) or workers < 1):
        raise ConfigError("workers must be a positive integer or null")
    return BenchmarkConfig(
        embedding_path=raw["embeddings"],
        dataset_path=raw.get("dataset"),
        victim_spec=victim_spec,
        attacks=attacks,
        regimes=regimes,
        seeds=seeds,
        runs=runs,
        goal=goal,
        out_path=raw.get("out"),
        analyze_thresholds=[float(t) for t in thresholds],
        workers=workers,
        num_classes=raw.get("num_classes"),
    )


def build_victim(spec: dict, store: EmbeddingStore | None) -> Victim:
    """Construct the configured victim; bag victims need the loaded store."""
    kind = spec["kind"]
    if kind == "bag":
        if store is None:
            raise ConfigError("bag victim needs a loaded embedding store")
        try:
            return make_bag_victim(store, np.asarray(spec["weights"], dtype=np.float64),
                                   np.asarray(spec["bias"], dtype=np.float64))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid bag victim: {exc}") from exc
    if kind == "scripted":
        try:
            table = {tuple(tokens): probs for tokens, probs in spec.get("entries", [])}
            return make_scripted_victim(table, spec["default"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scripted victim: {exc}") from exc
    if kind == "remote":
        if "endpoint" not in spec:
            raise ConfigError("remote victim needs an endpoint")
        return make_remote_victim(
            spec["endpoint"],
            timeout=float(spec.get("timeout", 10.0)),
            retries=int(spec.get("retries", 2)),
        )
    raise ConfigError(f"unknown victim kind {kind!r}")


def victim_class_count(spec: dict) -> int | None:
    """Declared class count when the victim spec makes it knowable."""
    if spec["kind"] == "bag":
        return len(spec.get("bias", [])) or None
    if spec["kind"] == "scripted":
        default = spec.get("default")
        return len(default) if default else None
    return spec.get("num_classes")


def apply_seed_offset(config: BenchmarkConfig, offset: int) -> BenchmarkConfig:
    return replace(config, seeds=[s + offset for s in config.seeds])


def validate_dataset_labels(dataset: Iterable[ExampleRecord], num_classes: int | None) -> None:
    if num_classes is None:
        return
    for record in dataset:
        if record.label >= num_classes:
            raise ConfigError(
                f"example {record.id!r} has label {record.label}, "
                f"but the victim declares {num_classes} classes"
            )
