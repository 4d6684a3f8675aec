"""Joint visual-part / language-part embeddings for zero-shot learning.

The package learns a compatibility function between an image's bag of
visual part features and a class's bag of language parts (attributes,
word vectors, bag-of-words histograms and their noun-attribute /
multi-histogram extensions), trains it with minibatch SGD under a
fragment alignment + margin ranking objective, and evaluates zero-shot
classification and retrieval on unseen classes.
"""

from .core import (
    ConfigError,
    DataError,
    Dataset,
    FormatError,
    LanguagePart,
    LanguagePartSet,
    ModelParams,
    UsageError,
    VisualPartSet,
    ZeroShotSplit,
    ZsError,
    validate_dataset,
)
from .embedder import compatibility, embed_language_part, embed_visual_part, predict
from .langparts import (
    AttributeTable,
    Vocabulary,
    WordVectorTable,
    bow_histogram,
    build_vocabulary,
    mbow,
    nad1,
    nad2,
    nad3,
    phrase_vector,
)
from .metrics import MetricReport, evaluate, mean_auc, recall_at_k, top1_per_class
from .objective import (
    LossConfig,
    ParamGradients,
    alignment_labels,
    alignment_loss,
    gradient,
    ranking_penalty,
    total_objective,
)
from .oracle import SynthSpec, fd_gradient, generate, naive_compatibility
from .trainer import TrainConfig, TrainReport, init_params, train, validate_grid

__version__ = "0.1.0"
