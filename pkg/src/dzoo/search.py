"""Search algorithms: the pseudogradient attack and the baseline family.

All attacks share the same skeleton: query the unmodified sentence once to
fix the baseline goal value, substitute tokens drawn from the constraint
regime's candidate pools, keep a substitution only when it does not lower
the goal, and stop at the first evaluation that flips the label.  Every
victim evaluation an attack makes is recorded as a trace step, so tests
can audit query accounting and monotonicity from the outcome alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintConfig, TargetIndexList, candidate_pool, pretransform_filter
from .embedding import NORM_EPS, EmbeddingStore, cosine, knn, snap
from .errors import QueryBudgetExceeded, VictimError
from .victim import (
    GoalConfig,
    GoalFunctionResult,
    QueryLedger,
    Sentence,
    Victim,
    hamming_distance,
    query,
)

# Mask token for importance probing; passed to the victim verbatim, and
# out-of-vocabulary for the embedding store by construction.
UNK_TOKEN = "[UNK]"

STATUS_SUCCESS = "success"
STATUS_EXHAUSTED = "exhausted"
STATUS_BUDGET = "budget"
STATUS_SKIPPED = "skipped"
STATUS_VICTIM_ERROR = "victim_error"

IMPORTANCE_MODES = ("unk", "del", "rand")


@dataclass(frozen=True)
class SearchConfig:
    """Tunables for the pseudogradient attack and query budgeting.

    n_samples is the number of neighbor displacements per update step,
    max_updates the per-position step budget, step_scale the multiplier on
    the summed displacement before snapping, and pool_factor sizes the
    unconstrained sampling pool at pool_factor * n_samples neighbors.
    query_budget, when set, becomes the ledger hard cap (and the sampling
    budget of the continued-sampling baseline).
    """

    n_samples: int = 10
    max_updates: int = 2
    step_scale: float = 1.0
    pool_factor: int = 2
    query_budget: int | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.max_updates < 1:
            raise ValueError("max_updates must be >= 1")
        if self.step_scale <= 0:
            raise ValueError("step_scale must be > 0")
        if self.pool_factor < 1:
            raise ValueError("pool_factor must be >= 1")
        if self.query_budget is not None and self.query_budget < 1:
            raise ValueError("query_budget must be >= 1")


@dataclass
class TraceStep:
    """One victim evaluation: what was tried, what it scored, whether it stuck."""

    kind: str  # "initial" | "candidate" | "snap"
    position: int  # -1 for the initial query
    old_token: str
    new_token: str
    goal: float
    accepted: bool
    tokens: tuple[str, ...]


@dataclass
class AttackOutcome:
    success: bool
    final_sentence: Sentence
    queries: int
    words_changed: int
    trace: list[TraceStep]
    status: str


class _AttackRun:
    """Shared bookkeeping: current sentence, goal baseline, trace, outcome."""

    def __init__(
        self,
        sentence: Sentence,
        true_label: int,
        victim: Victim,
        ledger: QueryLedger,
        goal: GoalConfig,
    ) -> None:
        self.original = sentence
        self.current = sentence
        self.true_label = true_label
        self.victim = victim
        self.ledger = ledger
        self.goal = goal
        self.current_result: GoalFunctionResult | None = None
        self.trace: list[TraceStep] = []

    def initial_query(self) -> GoalFunctionResult:
        result = query(self.victim, self.ledger, self.current, self.true_label, self.goal)
        self.current_result = result
        self.trace.append(
            TraceStep("initial", -1, "", "", result.score, True, self.current.tokens)
        )
        return result

    def evaluate(
        self, candidate: Sentence, position: int, kind: str
    ) -> tuple[GoalFunctionResult, TraceStep]:
        result = query(self.victim, self.ledger, candidate, self.true_label, self.goal)
        step = TraceStep(
            kind,
            position,
            self.current.tokens[position],
            candidate.tokens[position],
            result.score,
            False,
            candidate.tokens,
        )
        self.trace.append(step)
        return result, step

    def accept(self, candidate: Sentence, result: GoalFunctionResult, step: TraceStep) -> None:
        step.accepted = True
        self.current = candidate
        self.current_result = result

    def outcome(self, status: str) -> AttackOutcome:
        return AttackOutcome(
            success=status == STATUS_SUCCESS,
            final_sentence=self.current,
            queries=self.ledger.count,
            words_changed=hamming_distance(self.original.tokens, self.current.tokens),
            trace=self.trace,
            status=status,
        )


def _skipped_outcome(sentence: Sentence, ledger: QueryLedger) -> AttackOutcome:
    return AttackOutcome(
        success=False,
        final_sentence=sentence,
        queries=ledger.count,
        words_changed=0,
        trace=[],
        status=STATUS_SKIPPED,
    )


def importance_order(
    sentence: Sentence,
    targets: TargetIndexList,
    victim: Victim,
    ledger: QueryLedger,
    true_label: int,
    goal: GoalConfig,
    mode: str,
    rng: np.random.Generator | None = None,
) -> TargetIndexList:
    """Order target positions by how much masking or deleting them helps.

    "unk" masks each position with the reserved token, "del" removes it
    (scoring only; emitted sentences never change length), both costing
    exactly one query per target; "rand" is a free seeded shuffle.
    Descending score, ties to the lower index.
    """
    if mode not in IMPORTANCE_MODES:
        raise ValueError(f"unknown importance mode {mode!r}, expected one of {IMPORTANCE_MODES}")
    if mode == "rand":
        if rng is None:
            raise ValueError("importance mode 'rand' needs an rng")
        return [targets[i] for i in rng.permutation(len(targets))]
    scores: dict[int, float] = {}
    tokens = sentence.tokens
    for t in targets:
        if mode == "unk":
            probe = tokens[:t] + (UNK_TOKEN,) + tokens[t + 1 :]
        elif len(tokens) > 1:
            probe = tokens[:t] + tokens[t + 1 :]
        else:
            probe = tokens  # deleting the only token would empty the sentence
        scores[t] = query(victim, ledger, probe, true_label, goal).score
    return sorted(targets, key=lambda t: (-scores[t], t))


def _dzoo_candidates(
    store: EmbeddingStore,
    token_id: int,
    constraints: ConstraintConfig,
    config: SearchConfig,
    rng: np.random.Generator,
):
    """Per-step candidate neighbors for one position.

    Unconstrained: n_samples drawn uniformly without replacement from the
    pool_factor * n_samples nearest pool.  Constrained: the filtered pool,
    highest-cosine first, capped at n_samples.
    """
    if constraints.cosine_threshold is None:
        pool = knn(
            store,
            store.vector(token_id),
            config.pool_factor * config.n_samples,
            exclude={token_id},
        )
        if len(pool) > config.n_samples:
            picks = rng.choice(len(pool), size=config.n_samples, replace=False)
            pool = [pool[int(i)] for i in picks]
        return pool
    return candidate_pool(store, token_id, constraints)[: config.n_samples]


def discretezoo_attack(
    sentence: Sentence,
    true_label: int,
    victim: Victim,
    ledger: QueryLedger,
    store: EmbeddingStore,
    constraints: ConstraintConfig,
    config: SearchConfig,
    goal: GoalConfig = GoalConfig(),
    importance: str = "unk",
    rng: np.random.Generator | None = None,
) -> AttackOutcome:
    """Discrete zeroth-order pseudogradient attack.

    At each target position, up to max_updates steps: query the sampled
    neighbor substitutions (returning at once if one flips the label),
    accumulate the finite-difference displacement sum, snap the displaced
    embedding back to a token, and keep that token only if it does not
    lower the goal.
    """
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    targets = pretransform_filter(sentence, constraints)
    if not targets:
        return _skipped_outcome(sentence, ledger)
    run = _AttackRun(sentence, true_label, victim, ledger, goal)
    try:
        order = importance_order(sentence, targets, victim, ledger, true_label, goal, importance, rng)
        if run.initial_query().flipped:
            return run.outcome(STATUS_SUCCESS)
        for t in order:
            for _ in range(config.max_updates):
                if not constraints.allow_repeat_modification and t in run.current.modified_positions:
                    break  # single-modification regime: the position is spent
                token_id = store.id_of(run.current.tokens[t])
                if token_id is None:
                    break  # no embedding, no neighborhood
                candidates = _dzoo_candidates(store, token_id, constraints, config, rng)
                if not candidates:
                    break
                base = run.current_result
                e_t = store.vector(token_id)
                sumd = np.zeros(store.dim)
                for neighbor in candidates:
                    cand = run.current.substitute(t, store.token_of(neighbor.token_id))
                    result, step = run.evaluate(cand, t, "candidate")
                    if result.flipped:
                        run.accept(cand, result, step)
                        return run.outcome(STATUS_SUCCESS)
                    diff = store.vector(neighbor.token_id) - e_t
                    magnitude = float(np.linalg.norm(diff))
                    if magnitude < NORM_EPS:
                        continue  # coincident embedding carries no direction
                    sumd += (result.score - base.score) / magnitude * (diff / magnitude)
                displaced = e_t + config.step_scale * sumd
                if float(np.linalg.norm(displaced)) < NORM_EPS:
                    continue  # unsnappable point; treat the step as rejected
                snapped_id = snap(store, displaced)
                snapped_token = store.token_of(snapped_id)
                if snapped_token == run.current.tokens[t]:
                    continue  # snapped back onto the current token: nothing to do
                if (
                    constraints.cosine_threshold is not None
                    and cosine(e_t, store.vector(snapped_id)) < constraints.cosine_threshold
                ):
                    continue  # snap target fails the similarity constraint: discard unqueried
                snapped = run.current.substitute(t, snapped_token)
                result, step = run.evaluate(snapped, t, "snap")
                # snap rejection: acceptance precedes the flip check, so a
                # goal-lowering snap never replaces the current sentence
                if result.score >= base.score:
                    run.accept(snapped, result, step)
                    if result.flipped:
                        return run.outcome(STATUS_SUCCESS)
        return run.outcome(STATUS_EXHAUSTED)
    except QueryBudgetExceeded:
        return run.outcome(STATUS_BUDGET)
    except VictimError:
        return run.outcome(STATUS_VICTIM_ERROR)


def _single_pick_pass(
    run: _AttackRun,
    store: EmbeddingStore,
    constraints: ConstraintConfig,
    order: TargetIndexList,
    pick,
) -> AttackOutcome:
    """One pass over targets, substituting a single picked candidate at each."""
    if run.initial_query().flipped:
        return run.outcome(STATUS_SUCCESS)
    for t in order:
        token_id = store.id_of(run.current.tokens[t])
        if token_id is None:
            continue
        pool = candidate_pool(store, token_id, constraints)
        if not pool:
            continue
        chosen = pick(pool)
        cand = run.current.substitute(t, store.token_of(chosen.token_id))
        result, step = run.evaluate(cand, t, "candidate")
        if result.score >= run.current_result.score:
            run.accept(cand, result, step)
            if result.flipped:
                return run.outcome(STATUS_SUCCESS)
    return run.outcome(STATUS_EXHAUSTED)


def random_attack(
    sentence: Sentence,
    true_label: int,
    victim: Victim,
    ledger: QueryLedger,
    store: EmbeddingStore,
    constraints: ConstraintConfig,
    rng: np.random.Generator,
    goal: GoalConfig = GoalConfig(),
) -> AttackOutcome:
    """One shuffled pass, one uniformly sampled replacement per position."""
    targets = pretransform_filter(sentence, constraints)
    if not targets:
        return _skipped_outcome(sentence, ledger)
    order = [targets[i] for i in rng.permutation(len(targets))]
    run = _AttackRun(sentence, true_label, victim, ledger, goal)
    try:
        return _single_pick_pass(
            run, store, constraints, order, lambda pool: pool[int(rng.integers(len(pool)))]
        )
    except QueryBudgetExceeded:
        return run.outcome(STATUS_BUDGET)
    except VictimError:
        return run.outcome(STATUS_VICTIM_ERROR)


def extremal_attack(
    sentence: Sentence,
    true_label: int,
    victim: Victim,
    ledger: QueryLedger,
    store: EmbeddingStore,
    constraints: ConstraintConfig,
    mode: str,
    goal: GoalConfig = GoalConfig(),
) -> AttackOutcome:
    """Deterministic single pass picking the closest or farthest pool entry."""
    if mode not in ("farthest", "closest"):
        raise ValueError(f"mode must be 'farthest' or 'closest', got {mode!r}")
    targets = pretransform_filter(sentence, constraints)
    if not targets:
        return _skipped_outcome(sentence, ledger)
    pick = (lambda pool: pool[-1]) if mode == "farthest" else (lambda pool: pool[0])
    run = _AttackRun(sentence, true_label, victim, ledger, goal)
    try:
        return _single_pick_pass(run, store, constraints, targets, pick)
    except QueryBudgetExceeded:
        return run.outcome(STATUS_BUDGET)
    except VictimError:
        return run.outcome(STATUS_VICTIM_ERROR)


def random_cs_attack(
    sentence: Sentence,
    true_label: int,
    victim: Victim,
    ledger: QueryLedger,
    store: EmbeddingStore,
    constraints: ConstraintConfig,
    budget: int,
    rng: np.random.Generator,
    goal: GoalConfig = GoalConfig(),
) -> AttackOutcome:
    """Continued sampling: cycle over targets until a flip or `budget` draws.

    Revisiting (and re-modifying) a position is allowed; each visit pools
    the neighbors of the token currently at that position.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    targets = pretransform_filter(sentence, constraints)
    if not targets:
        return _skipped_outcome(sentence, ledger)
    run = _AttackRun(sentence, true_label, victim, ledger, goal)
    try:
        if run.initial_query().flipped:
            return run.outcome(STATUS_SUCCESS)
        count = 0
        cursor = 0
        fruitless_visits = 0
        while count < budget:
            if cursor >= len(targets):
                cursor = 0
            t = targets[cursor]
            cursor += 1
            token_id = store.id_of(run.current.tokens[t])
            pool = candidate_pool(store, token_id, constraints) if token_id is not None else []
            if not pool:
                fruitless_visits += 1
                if fruitless_visits >= len(targets):
                    return run.outcome(STATUS_EXHAUSTED)  # no position can be sampled
                continue
            fruitless_visits = 0
            chosen = pool[int(rng.integers(len(pool)))]
            cand = run.current.substitute(t, store.token_of(chosen.token_id))
            result, step = run.evaluate(cand, t, "candidate")
            count += 1
            if result.score >= run.current_result.score:
                run.accept(cand, result, step)
                if result.flipped:
                    return run.outcome(STATUS_SUCCESS)
        return run.outcome(STATUS_BUDGET)
    except QueryBudgetExceeded:
        return run.outcome(STATUS_BUDGET)
    except VictimError:
        return run.outcome(STATUS_VICTIM_ERROR)


def greedy_attack(
    sentence: Sentence,
    true_label: int,
    victim: Victim,
    ledger: QueryLedger,
    store: EmbeddingStore,
    constraints: ConstraintConfig,
    order: TargetIndexList | None = None,
    goal: GoalConfig = GoalConfig(),
) -> AttackOutcome:
    """Try every pool candidate per position, keep the best non-worsening one."""
    targets = order if order is not None else pretransform_filter(sentence, constraints)
    if not targets:
        return _skipped_outcome(sentence, ledger)
    run = _AttackRun(sentence, true_label, victim, ledger, goal)
    try:
        if run.initial_query().flipped:
            return run.outcome(STATUS_SUCCESS)
        for t in targets:
            token_id = store.id_of(run.current.tokens[t])
            if token_id is None:
                continue
            best: tuple[Sentence, GoalFunctionResult, TraceStep] | None = None
            for neighbor in candidate_pool(store, token_id, constraints):
                cand = run.current.substitute(t, store.token_of(neighbor.token_id))
                result, step = run.evaluate(cand, t, "candidate")
                if result.flipped:
                    run.accept(cand, result, step)
                    return run.outcome(STATUS_SUCCESS)
                if best is None or result.score > best[1].score:
                    best = (cand, result, step)
            if best is not None and best[1].score >= run.current_result.score:
                run.accept(*best)
        return run.outcome(STATUS_EXHAUSTED)
    except QueryBudgetExceeded:
        return run.outcome(STATUS_BUDGET)
    except VictimError:
        return run.outcome(STATUS_VICTIM_ERROR)


@dataclass
class _Hypothesis:
    sentence: Sentence
    result: GoalFunctionResult
    chain: tuple[TraceStep, ...]
    used: frozenset[int]


def beam_attack(
    sentence: Sentence,
    true_label: int,
    victim: Victim,
    ledger: QueryLedger,
    store: EmbeddingStore,
    constraints: ConstraintConfig,
    width: int,
    goal: GoalConfig = GoalConfig(),
) -> AttackOutcome:
    """Beam search over (position, candidate) moves.

    Each round expands every frontier hypothesis by all moves at positions
    it has not touched yet, admits only non-worsening children, and keeps
    the global top `width`.  Returns at the first flipping evaluation; on
    exhaustion the best hypothesis ever admitted becomes the final sentence.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    targets = pretransform_filter(sentence, constraints)
    if not targets:
        return _skipped_outcome(sentence, ledger)
    run = _AttackRun(sentence, true_label, victim, ledger, goal)
    try:
        initial = run.initial_query()
        if initial.flipped:
            return run.outcome(STATUS_SUCCESS)
        root = _Hypothesis(sentence, initial, (), frozenset())
        frontier = [root]
        best = root
        while frontier:
            expansions: list[_Hypothesis] = []
            for hyp in frontier:
                for t in targets:
                    if t in hyp.used:
                        continue
                    token_id = store.id_of(hyp.sentence.tokens[t])
                    if token_id is None:
                        continue
                    for neighbor in candidate_pool(store, token_id, constraints):
                        cand = hyp.sentence.substitute(t, store.token_of(neighbor.token_id))
                        result, step = run.evaluate(cand, t, "candidate")
                        if result.flipped:
                            for s in hyp.chain:
                                s.accepted = True
                            run.accept(cand, result, step)
                            return run.outcome(STATUS_SUCCESS)
                        if result.score >= hyp.result.score:
                            expansions.append(
                                _Hypothesis(cand, result, hyp.chain + (step,), hyp.used | {t})
                            )
            expansions.sort(key=lambda h: -h.result.score)  # stable: insertion order on ties
            frontier = expansions[:width]
            if frontier and frontier[0].result.score > best.result.score:
                best = frontier[0]
        if best is not root:
            for s in best.chain:
                s.accepted = True
            run.current = best.sentence
            run.current_result = best.result
        return run.outcome(STATUS_EXHAUSTED)
    except QueryBudgetExceeded:
        return run.outcome(STATUS_BUDGET)
    except VictimError:
        return run.outcome(STATUS_VICTIM_ERROR)


def gaussian_two_point_step(
    f,
    x: np.ndarray,
    mu: float,
    n: int,
    lam: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One continuous two-point descent step with Gaussian directions.

    Reference implementation of the estimator the discrete attack
    discretizes; used in tests to validate sign and scale conventions.
    """
    if mu <= 0:
        raise ValueError("mu must be > 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    fx = float(f(x))
    total = np.zeros_like(x)
    for _ in range(n):
        u = rng.standard_normal(x.shape[0])
        total += (float(f(x + mu * u)) - fx) / mu * u
    return x - lam * total / n
