"""Recurrent classifiers over sets of user writings.

Four aggregation strategies (late averaging, continual averaging,
inter-document attention, intra+inter attention) on top of a small
reverse-mode numeric core, with skip-gram embeddings, Adam training,
class-weighted loss and finite-difference gradient verification.
"""

__version__ = "0.1.0"

from .attention import (
    AttentionScorer,
    IntraScorer,
    VARIANTS,
    attend,
    context_vector,
    make_scorer,
    score,
    weighted_sum,
)
from .corpus import (
    NO_RISK,
    RISK,
    RawRecord,
    SplitSpec,
    SyntheticTruth,
    UserRecord,
    Vocab,
    build_vocab,
    encode_corpus,
    generate_synthetic,
    load_corpus,
    marker_oracle,
    preprocess_user,
    save_corpus,
    split_stratified,
    tokenize,
)
from .embeddings import (
    EmbeddingMatrix,
    embed_sequence,
    load_embeddings,
    save_embeddings,
    train_skipgram,
)
from .estimator import DocumentSetClassifier
from .gradcheck import (
    GradientCheckReport,
    compare_gradients,
    finite_difference_gradient,
    gradient_check,
    run_model_gradient_checks,
)
from .metrics import Metrics, confusion_counts, f1_score, prf1
from .mlstm import EncodeResult, MlstmCell, RnnState, encode_sequence
from .models import (
    KINDS,
    ModelBundle,
    ModelConfig,
    PredictionHead,
    build_model,
    canonical_writing_order,
    count_parameters,
    load_model,
    save_model,
)
from .tensor import NonFiniteError, ParamStore, Tensor, backward_pass, sigmoid, softmax
from .training import (
    AdamState,
    FitResult,
    TrainConfig,
    TrainingDiverged,
    UserPrediction,
    adam_step,
    class_weights,
    evaluate,
    fit,
    predict_records,
    weighted_bce,
)

__all__ = [
    "AdamState",
    "AttentionScorer",
    "DocumentSetClassifier",
    "EmbeddingMatrix",
    "EncodeResult",
    "FitResult",
    "GradientCheckReport",
    "IntraScorer",
    "KINDS",
    "Metrics",
    "MlstmCell",
    "ModelBundle",
    "ModelConfig",
    "NO_RISK",
    "NonFiniteError",
    "ParamStore",
    "PredictionHead",
    "RISK",
    "RawRecord",
    "RnnState",
    "SplitSpec",
    "SyntheticTruth",
    "TrainConfig",
    "TrainingDiverged",
    "Tensor",
    "UserPrediction",
    "UserRecord",
    "VARIANTS",
    "Vocab",
    "adam_step",
    "attend",
    "backward_pass",
    "build_model",
    "build_vocab",
    "canonical_writing_order",
    "class_weights",
    "compare_gradients",
    "confusion_counts",
    "context_vector",
    "count_parameters",
    "embed_sequence",
    "encode_corpus",
    "encode_sequence",
    "evaluate",
    "f1_score",
    "finite_difference_gradient",
    "fit",
    "generate_synthetic",
    "gradient_check",
    "load_corpus",
    "load_embeddings",
    "load_model",
    "make_scorer",
    "marker_oracle",
    "predict_records",
    "preprocess_user",
    "prf1",
    "run_model_gradient_checks",
    "save_corpus",
    "save_embeddings",
    "save_model",
    "score",
    "sigmoid",
    "softmax",
    "split_stratified",
    "tokenize",
    "train_skipgram",
    "weighted_bce",
    "weighted_sum",
]
