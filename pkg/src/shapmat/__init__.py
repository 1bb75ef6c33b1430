"""shapmat: dynamic maintenance of player-by-task Shapley matrices.

Represents per-task Shapley values as a maintained matrix and updates it
under task/player arrivals, deletions, and replacements: new task columns
are interpolated from nearby anchors under a model-induced task distance,
and player events re-enumerate only the local games whose support changed.
"""

from .core import (
    ABSENT,
    Coalition,
    EXACT_LOCAL,
    INTERPOLATED,
    MC,
    REUSED,
    ShapleyMatrix,
    SupportSet,
    ValueColumn,
    load_matrix,
    save_matrix,
)
from .estimators import (
    CallableGame,
    EstimateReport,
    McConfig,
    complementary_mc,
    exact_local_shapley,
    permutation_mc,
    stopping_check,
)
from .locality import (
    DistanceConfig,
    cosine_distance,
    d_gamma,
    path_jaccard,
    ppr_profile,
    weighted_tanimoto,
)
from .maintenance import (
    PlayerUpdateReport,
    StreamEvent,
    anchor_expansion,
    delete_player,
    delete_task,
    joint_update,
    player_update,
    replace_player,
    task_update,
)
from .models import (
    DataPoint,
    DecisionTree,
    Game,
    LocalizedGame,
    RBFScorer,
    RidgeERM,
    SupportProfile,
    WKNN,
    register_proxy_tasks,
)
from .selfval import (
    AnchorSet,
    BuildReport,
    CoverageReport,
    PivotSchedule,
    build_self_matrix,
    covering_radius,
    select_anchors_fps,
)
from .harness import (
    ExperimentConfig,
    MetricsReport,
    baseline_matrix,
    load_dataset,
    metrics,
    replay,
    run_stream,
    save_dataset,
    sweep,
    synth_blobs,
    synth_ring,
)

__version__ = "0.1.0"
