"""fluence: simulate per-example training-data influence on test-metric
trajectories, with reference baselines and desk-scale synthetic oracles."""

from .baselines import (
    Checkpoint,
    GradientDump,
    SimfluenceParams,
    graddot_influence,
    load_dump,
    load_simfluence,
    save_dump,
    save_simfluence,
    simfluence_fit,
    simfluence_rollout,
    tracin_influence,
    tracin_simulate,
)
from .dynamics import (
    Curriculum,
    EmbeddingTable,
    Run,
    RunSet,
    Trajectory,
    load_embeddings,
    load_runs,
    save_embeddings,
    save_runs,
    split_runs,
    subsample_run,
)
from .errors import (
    DataError,
    DegenerateRankingError,
    FluenceError,
    MissingEmbeddingError,
    MissingTrajectoryError,
    NumericalError,
    ParseError,
    UnknownExampleError,
    ValidationError,
)
from .evalmetrics import (
    EvalReport,
    PairScore,
    aggregate,
    all_steps_mae,
    all_steps_mse,
    compare_runsets,
    spearman_final_step,
)
from .mislabel import (
    detection_curve,
    random_baseline_curve,
    self_influence_featurized,
    self_influence_tracin,
)
from .reduction import (
    ReductionReport,
    embed_per_id_params,
    one_hot_embeddings,
    reduction_check,
)
from .simulator import (
    SimulatorConfig,
    SimulatorParams,
    fit,
    influence_factors,
    init_params,
    load_model,
    mean_rollout_mse,
    objective_and_gradients,
    predict_step,
    rollout,
    save_model,
    step_factors,
    teacher_forced_loss,
)
from .synthetic import (
    PlantedGenerator,
    PlantedWorld,
    generate_planted_runs,
    make_planted_world,
    sample_planted_runs,
    split_pool_for_unseen,
)
from .toy import (
    ToyDataset,
    ToyRunConfig,
    corrupt_labels,
    make_toy_dataset,
    train_toy_and_record,
)
from .training import FitReport

__version__ = "0.1.0"
