"""Last-layer retraining toolkit.

Corrects the linear head of a frozen classifier for worst-group accuracy when
the retraining labels carry symmetric noise: majority-vote label spreading on
the exact kNN graph of the embeddings cleans the labels, and two-stage
retraining methods (with or without group annotations) refit the head.
Includes a synthetic spurious-correlation generator, an experiment sweep
harness with holdout-based model selection, and table reporting.
"""

from .data import (
    EmbeddingDataset,
    GroupTable,
    NoiseSpec,
    apply_noise,
    derive_groups,
    inject_symmetric_noise,
    load_csv,
    load_embeddings,
    save_csv,
    save_embeddings,
    split_validation,
)
from .errors import (
    AggregationError,
    ConfigError,
    DegenerateDataError,
    DegenerateSelectionError,
    DivergenceError,
    EvaluationError,
    FormatError,
    LastLayerError,
    MissingAnnotationError,
    ParameterError,
    ShapeError,
    ValidationError,
)
from .knn import (
    KnnGraph,
    SpreadConfig,
    build_knn_graph,
    measure_label_accuracy,
    spread_labels,
    write_graph_csv,
)
from .linear import (
    LinearModel,
    StepPolicy,
    TrainConfig,
    alpha_loss,
    finetune,
    load_model,
    per_example_loss,
    predict,
    predict_proba,
    save_model,
    train,
)
from .methods import (
    ErrorSet,
    RadConfig,
    SelfConfig,
    build_error_set,
    error_set_composition,
    run_erm,
    run_gds,
    run_guw,
    run_knn_rad,
    run_knn_self,
    run_rad,
    run_self,
)
from .metrics import ExperimentResult, SummaryRow, aggregate, worst_group_accuracy
from .sweep import SweepSpec, run_sweep, spread_diagnostic, task_seed
from .synth import KBoundParams, SynthConfig, generate, recommend_k

__version__ = "0.1.0"
