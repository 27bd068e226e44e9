"""diartk: speaker diarization backend on precomputed segment embeddings.

From embeddings to speaker-labeled regions: pairwise similarity scoring
(cosine, two-covariance PLDA, or a sequence-aware Bi-LSTM), similarity
matrix enhancement, spectral or agglomerative clustering, and DER-based
evaluation with k-fold experiment drivers.
"""

from .core import (
    Annotation,
    EmbeddingSequence,
    ParameterError,
    Segment,
    reference_matrix,
    segment_label,
    uniform_segment,
)
from .enhance import enhance
from .evaluate import DerReport, TTestResult, der, duration_stratified_ttest, kfold_split
from .pipeline import ExperimentConfig, PipelineConfig, SystemSpec, diarize, run_experiment
from .scoring import cosine_score, fuse, logistic_normalize, plda_fit, plda_score, similarity_matrix
from .synth import CorpusConfig, SynthConfig, gen_conversation, gen_corpus

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "CorpusConfig",
    "DerReport",
    "EmbeddingSequence",
    "ExperimentConfig",
    "ParameterError",
    "PipelineConfig",
    "Segment",
    "SynthConfig",
    "SystemSpec",
    "TTestResult",
    "__version__",
    "cosine_score",
    "der",
    "diarize",
    "duration_stratified_ttest",
    "enhance",
    "fuse",
    "gen_conversation",
    "gen_corpus",
    "kfold_split",
    "logistic_normalize",
    "plda_fit",
    "plda_score",
    "reference_matrix",
    "run_experiment",
    "segment_label",
    "similarity_matrix",
    "uniform_segment",
]
