"""Query-efficient black-box word-substitution attacks over embedding spaces."""

from .constraints import (
    ConstraintConfig,
    DEFAULT_STOPWORDS,
    candidate_pool,
    load_stopwords,
    pretransform_filter,
    regime_config,
)
from .embedding import (
    EmbeddingStore,
    Neighbor,
    NeighborhoodStats,
    cosine,
    knn,
    load_embeddings,
    neighborhood_stats,
    snap,
)
from .errors import (
    ConfigError,
    DatasetFormatError,
    DzooError,
    EmbeddingFormatError,
    QueryBudgetExceeded,
    VictimError,
    VictimProtocolError,
    VictimUnavailableError,
)
from .harness import (
    AttackSpec,
    ExampleRecord,
    analyze_embeddings,
    load_config,
    load_dataset,
    render_report,
    run_benchmark,
)
from .search import (
    AttackOutcome,
    SearchConfig,
    TraceStep,
    UNK_TOKEN,
    beam_attack,
    discretezoo_attack,
    extremal_attack,
    gaussian_two_point_step,
    greedy_attack,
    importance_order,
    random_attack,
    random_cs_attack,
)
from .victim import (
    GoalConfig,
    GoalFunctionResult,
    QueryLedger,
    Sentence,
    goal_textattack,
    goal_zoo,
    make_bag_victim,
    make_remote_victim,
    make_scripted_victim,
    query,
)

__version__ = "0.1.0"
