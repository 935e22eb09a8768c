"""Text-to-motion retrieval: common-space training, indexing, evaluation, serving."""

from .common_space import (
    GradCheckConfig,
    GradCheckReport,
    RetrievalModel,
    TextBatch,
    TrainConfig,
    Trainer,
    cosine_similarity,
    grad_check,
    infonce_loss,
    similarity_matrix,
    triplet_loss,
)
from .data import (
    CaptionRecord,
    DatasetManifest,
    ManifestEntry,
    PaddedBatch,
    SkeletonSequence,
    SkeletonTopology,
    aggregate_body_parts,
    generate_synthetic,
    load_manifest,
    load_motion,
    pad_and_mask,
    save_manifest,
    save_motion,
    topology_preset,
)
from .encoders import (
    BiGruMotionEncoder,
    MotionTransformerEncoder,
    UpperLowerGruMotionEncoder,
    build_motion_encoder,
)
from .evaluation import (
    MetricsReport,
    RelevanceMatrix,
    build_lexical_relevance,
    dedupe_queries,
    evaluate_protocol,
    lexical_relevance,
    load_relevance,
    mean_median_rank,
    ndcg,
    rank_of_relevant,
    recall_at_k,
    save_relevance,
)
from .index import EmbeddingStore, RankedList, knn_query, load_index, save_index
from .io_utils import FormatError
from .text import (
    AffineTextEncoder,
    HashedTextEmbedder,
    LstmAggregatorTextEncoder,
    SelfContainedTextEncoder,
    SentenceEmbedding,
    TokenEmbeddingSequence,
    Vocabulary,
    tokenize,
)

__version__ = "0.1.0"
