"""FastAPI service wrapping the engine: victim serving plus attack-as-a-service.

POST /classify speaks the same wire protocol the remote victim client
expects, so a served bag or scripted victim can be attacked from any other
process. POST /attack and POST /analyze expose single-example attacks and
embedding statistics for multi-client use; batch benchmarking stays in the
CLI, which needs deterministic local execution.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .constraints import regime_config
from .embedding import EmbeddingStore, load_embeddings, neighborhood_stats
from .errors import ConfigError
from .harness import AttackSpec, _parse_attack, build_victim, load_config, run_attack
from .victim import GoalConfig, QueryLedger, Sentence, Victim


class ClassifyRequest(BaseModel):
    texts: list[list[str]] = Field(min_length=1)


class ClassifyResponse(BaseModel):
    probabilities: list[list[float]]


class AttackRequest(BaseModel):
    tokens: list[str] = Field(min_length=1)
    label: int = Field(ge=0)
    attack: str = "discretezoo"
    regime: str = "constrained"
    seed: int = 0
    width: int | None = None
    importance: str | None = None
    search: dict = Field(default_factory=dict)


class AcceptedStep(BaseModel):
    position: int
    old_token: str
    new_token: str
    goal: float


class AttackResponse(BaseModel):
    success: bool
    status: str
    queries: int
    words_changed: int
    original: list[str]
    final: list[str]
    accepted_steps: list[AcceptedStep]


class AnalyzeRequest(BaseModel):
    thresholds: list[float] = Field(min_length=1)


class ThresholdStats(BaseModel):
    threshold: float
    vocab_size: int
    mean_neighbors: float
    mean_neighbors_nonzero: float
    histogram: dict[int, int]


class AnalyzeResponse(BaseModel):
    records: list[ThresholdStats]


class HealthResponse(BaseModel):
    status: str
    vocab_size: int


def create_app(
    store: EmbeddingStore,
    victim: Victim,
    goal: GoalConfig = GoalConfig(),
) -> FastAPI:
    """Build the service around one loaded store and one hosted victim."""
    app = FastAPI(title="dzoo", description="black-box word-substitution attack service")

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", vocab_size=len(store))

    @app.post("/classify", response_model=ClassifyResponse)
    def classify(request: ClassifyRequest) -> ClassifyResponse:
        rows = []
        for tokens in request.texts:
            if not tokens:
                raise HTTPException(status_code=422, detail="empty token list")
            rows.append([float(p) for p in victim(tuple(tokens))])
        return ClassifyResponse(probabilities=rows)

    @app.post("/attack", response_model=AttackResponse)
    def attack(request: AttackRequest) -> AttackResponse:
        entry: dict = {"name": request.attack, "search": request.search}
        if request.width is not None:
            entry["width"] = request.width
        if request.importance is not None:
            entry["importance"] = request.importance
        try:
            spec = _parse_attack(entry)
            constraints = regime_config(request.regime)
        except (ConfigError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        ledger = QueryLedger(hard_cap=spec.search.query_budget if spec.name != "random_cs" else None)
        outcome = run_attack(
            spec,
            Sentence(tuple(request.tokens)),
            request.label,
            victim,
            ledger,
            store,
            constraints,
            goal,
            np.random.default_rng(request.seed),
        )
        return AttackResponse(
            success=outcome.success,
            status=outcome.status,
            queries=outcome.queries,
            words_changed=outcome.words_changed,
            original=list(request.tokens),
            final=list(outcome.final_sentence.tokens),
            accepted_steps=[
                AcceptedStep(
                    position=s.position, old_token=s.old_token, new_token=s.new_token, goal=s.goal
                )
                for s in outcome.trace
                if s.accepted and s.kind != "initial"
            ],
        )

    @app.post("/analyze", response_model=AnalyzeResponse)
    def analyze(request: AnalyzeRequest) -> AnalyzeResponse:
        records = []
        for threshold in request.thresholds:
            try:
                stats = neighborhood_stats(store, threshold)
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            records.append(
                ThresholdStats(
                    threshold=stats.threshold,
                    vocab_size=stats.vocab_size,
                    mean_neighbors=stats.mean_neighbors,
                    mean_neighbors_nonzero=stats.mean_neighbors_nonzero,
                    histogram=stats.histogram,
                )
            )
        return AnalyzeResponse(records=records)

    return app


def create_app_from_config(config_path: str) -> FastAPI:
    """Load embeddings and the victim named in a benchmark config file."""
    config = load_config(config_path)
    store = load_embeddings(config.embedding_path)
    victim = build_victim(config.victim_spec, store)
    return create_app(store, victim, config.goal)
