"""Black-box victim interface: goal functions, query counting, victims.

Every attack sees a victim only as ``tokens -> probability vector``.  The
QueryLedger sits between the two, charging one query per distinct token
sequence and replaying memoized results for free, which is what makes the
benchmark's query columns honest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import QueryBudgetExceeded, VictimProtocolError, VictimUnavailableError

Victim = Callable[[tuple[str, ...]], np.ndarray]

GOAL_KINDS = ("textattack", "zoo")


@dataclass(frozen=True)
class Sentence:
    """Ordered token sequence plus the positions changed from the original."""

    tokens: tuple[str, ...]
    modified_positions: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "modified_positions", frozenset(self.modified_positions))
        if len(self.tokens) < 1:
            raise ValueError("sentence must contain at least one token")
        if any(p < 0 or p >= len(self.tokens) for p in self.modified_positions):
            raise ValueError("modified position out of range")

    def substitute(self, position: int, token: str) -> "Sentence":
        tokens = list(self.tokens)
        tokens[position] = token
        return Sentence(tuple(tokens), self.modified_positions | {position})


@dataclass(frozen=True)
class GoalConfig:
    """Which scalar the attacker maximizes, and its numeric guards."""

    kind: str = "zoo"
    kappa: float = 0.0
    epsilon: float = 1e-12

    def __post_init__(self) -> None:
        if self.kind not in GOAL_KINDS:
            raise ValueError(f"unknown goal kind {self.kind!r}, expected one of {GOAL_KINDS}")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not (0.0 < self.epsilon <= 1e-6):
            raise ValueError("epsilon must be in (0, 1e-6]")


@dataclass(frozen=True)
class GoalFunctionResult:
    score: float
    predicted_label: int
    flipped: bool


class QueryLedger:
    """Per-attack query counter with a transparent memo cache.

    A distinct token sequence is charged exactly once; repeats are replayed
    from the memo without touching the victim or the count.  The memo keys
    results by token sequence only, so one ledger must serve one
    (true label, goal) pair, i.e. one attack run.
    """

    def __init__(self, hard_cap: int | None = None) -> None:
        if hard_cap is not None and hard_cap < 1:
            raise ValueError("hard_cap must be >= 1")
        self.count = 0
        self.hard_cap = hard_cap
        self.memo: dict[tuple[str, ...], tuple[np.ndarray, GoalFunctionResult]] = {}


def goal_textattack(probs: np.ndarray, label: int) -> float:
    """One minus the true-label probability: larger means closer to a flip."""
    return float(1.0 - probs[label])


def goal_zoo(probs: np.ndarray, label: int, kappa: float = 0.0, epsilon: float = 1e-12) -> float:
    """Negated clamped log-margin of the true label over the runner-up.

    Probabilities are floored at epsilon before the logs, so a hard-zero
    class costs a bounded penalty instead of -inf.
    """
    p = np.maximum(np.asarray(probs, dtype=np.float64), epsilon)
    logs = np.log(p)
    true_log = logs[label]
    others = np.delete(logs, label)
    return float(-max(true_log - float(others.max()), -kappa))


def evaluate_goal(probs: np.ndarray, true_label: int, goal: GoalConfig) -> GoalFunctionResult:
    """Score a probability vector; argmax ties resolve to the lowest class."""
    probs = np.asarray(probs, dtype=np.float64)
    predicted = int(np.argmax(probs))
    if goal.kind == "textattack":
        score = goal_textattack(probs, true_label)
    else:
        score = goal_zoo(probs, true_label, goal.kappa, goal.epsilon)
    return GoalFunctionResult(score=score, predicted_label=predicted, flipped=predicted != true_label)


def query(
    victim: Victim,
    ledger: QueryLedger,
    sentence: Sentence | Sequence[str],
    true_label: int,
    goal: GoalConfig,
) -> GoalFunctionResult:
    """Evaluate a sentence against the victim, charging at most one query.

    Memo hits return the stored result without incrementing the count.  A
    configured hard cap raises QueryBudgetExceeded before the victim is
    invoked, which attacks surface as a budget outcome rather than failure.
    """
    tokens = tuple(sentence.tokens) if isinstance(sentence, Sentence) else tuple(sentence)
    hit = ledger.memo.get(tokens)
    if hit is not None:
        return hit[1]
    if ledger.hard_cap is not None and ledger.count >= ledger.hard_cap:
        raise QueryBudgetExceeded(f"query budget of {ledger.hard_cap} exhausted")
    probs = victim(tokens)
    result = evaluate_goal(probs, true_label, goal)
    ledger.count += 1
    ledger.memo[tokens] = (np.asarray(probs, dtype=np.float64), result)
    return result


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def make_bag_victim(store, weights: np.ndarray, bias: np.ndarray) -> Victim:
    """Deterministic linear classifier over the mean token embedding.

    Out-of-vocabulary tokens contribute the zero vector to the mean (the
    denominator is the full token count), so an all-OOV sentence scores the
    zero vector.
    """
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[0] < 2:
        raise ValueError(f"weights must be CxD with C >= 2, got shape {weights.shape}")
    if weights.shape[1] != store.dim:
        raise ValueError(
            f"weight dimension {weights.shape[1]} does not match store dimension {store.dim}"
        )
    if bias.shape != (weights.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match {weights.shape[0]} classes")

    def bag_victim(tokens: tuple[str, ...]) -> np.ndarray:
        mean = np.zeros(store.dim)
        for token in tokens:
            token_id = store.id_of(token)
            if token_id is not None:
                mean += store.matrix[token_id]
        mean /= len(tokens)
        return _softmax(weights @ mean + bias)

    return bag_victim


def make_scripted_victim(
    table: Mapping[Sequence[str], Sequence[float]],
    default: Sequence[float],
) -> Victim:
    """Lookup victim with a fixed fallback; the test oracle for query counts."""
    default_arr = np.asarray(default, dtype=np.float64)
    if default_arr.shape[0] < 2:
        raise ValueError("probability vectors need at least two classes")
    lookup: dict[tuple[str, ...], np.ndarray] = {}
    for key, probs in table.items():
        arr = np.asarray(probs, dtype=np.float64)
        if arr.shape != default_arr.shape:
            raise ValueError(f"scripted vector for {key!r} has shape {arr.shape}, expected {default_arr.shape}")
        lookup[tuple(key)] = arr

    def scripted_victim(tokens: tuple[str, ...]) -> np.ndarray:
        return lookup.get(tuple(tokens), default_arr)

    return scripted_victim


def _check_remote_probs(row, sum_tol: float = 1e-3) -> np.ndarray:
    if not isinstance(row, (list, tuple)) or len(row) < 2:
        raise VictimProtocolError(f"probability row must list >= 2 classes, got {row!r}")
    arr = np.asarray(row, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise VictimProtocolError(f"probabilities contain NaN or inf: {row!r}")
    if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
        raise VictimProtocolError(f"probabilities outside [0, 1]: {row!r}")
    total = float(arr.sum())
    if abs(total - 1.0) > sum_tol:
        raise VictimProtocolError(f"probabilities sum {total:g}")
    return arr


def make_remote_victim(
    endpoint: str,
    timeout: float = 10.0,
    retries: int = 2,
    session=None,
) -> Victim:
    """HTTP client victim speaking the /classify wire protocol.

    One sentence per request.  Transport failures are retried up to
    ``retries`` extra attempts and then raise VictimUnavailableError; a
    reachable server answering anything other than a 200 with one valid
    probability row raises VictimProtocolError.
    """
    import requests

    if session is None:
        session = requests.Session()
    url = endpoint.rstrip("/") + "/classify"

    def remote_victim(tokens: tuple[str, ...]) -> np.ndarray:
        last_exc: Exception | None = None
        for _ in range(retries + 1):
            try:
                response = session.post(url, json={"texts": [list(tokens)]}, timeout=timeout)
                break
            except requests.exceptions.RequestException as exc:
                last_exc = exc
        else:
            raise VictimUnavailableError(
                f"victim at {url} unreachable after {retries + 1} attempts: {last_exc}"
            ) from last_exc
        if response.status_code != 200:
            raise VictimProtocolError(f"victim returned status {response.status_code}")
        try:
            payload = response.json()
        except ValueError as exc:
            raise VictimProtocolError(f"victim response is not json: {exc}") from exc
        rows = payload.get("probabilities") if isinstance(payload, dict) else None
        if not isinstance(rows, list) or len(rows) != 1:
            raise VictimProtocolError(f"expected one probability row, got {rows!r}")
        return _check_remote_probs(rows[0])

    return remote_victim


def hamming_distance(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) != len(b):
        raise ValueError("sequences differ in length")
    return sum(1 for x, y in zip(a, b) if x != y)


def probability_vector_ok(probs: np.ndarray, sum_tol: float = 1e-6) -> bool:
    """True when probs is a well-formed distribution over >= 2 classes."""
    arr = np.asarray(probs, dtype=np.float64)
    return (
        arr.ndim == 1
        and arr.shape[0] >= 2
        and bool(np.all(np.isfinite(arr)))
        and float(arr.min()) >= 0.0
        and float(arr.max()) <= 1.0
        and math.isclose(float(arr.sum()), 1.0, abs_tol=sum_tol)
    )
