"""Cross-dataset emotion label alignment and zero-shot music emotion prediction.

The pipeline: embed emotion labels with a sentence encoder (interchange
files produced by a separate extractor package), cluster the embeddings
with mean shift to align synonymous labels across datasets, train an
attention projector that maps audio features into the label-embedding
space under a cosine triplet loss with optional pairwise alignment
regularization, and predict top-k emotions for new samples against any
label space, including ones never seen in training.
"""

from .clustering import (
    ClusterModel,
    assign,
    estimate_bandwidth,
    export_cluster_graph,
    load_cluster_model,
    mean_shift,
    save_cluster_model,
)
from .data import (
    Dataset,
    EmbeddingMatrix,
    LabelSpace,
    RatingsTable,
    Sample,
    SynthSpec,
    derive_labels_mean_threshold,
    derive_labels_top_k,
    generate_synthetic,
    load_dataset,
    merge_label_spaces,
    read_embedding_matrix,
    read_ratings_csv,
    write_dataset,
    write_embedding_matrix,
)
from .diffmath import Tensor, cosine_similarity, grad_check
from .evaluate import (
    DATASET_EVAL_K,
    PredictionResult,
    evaluate,
    macro_f1,
    predict_topk,
)
from .experiment import ExperimentSpec, run_experiment, run_experiment_on
from .objectives import (
    BatchContext,
    ObjectiveConfig,
    reg_loss,
    sample_negative,
    total_loss,
    triplet_align_loss,
)
from .projector import (
    ProjectorConfig,
    ProjectorParams,
    forward,
    init_projector,
    load_checkpoint,
    project,
    save_checkpoint,
)
from .trainer import TrainConfig, TrainHistory, adamw_step, fit, plateau_step

__version__ = "0.1.0"
