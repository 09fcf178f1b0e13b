"""needle: guide-image Monte Carlo retrieval over image corpora.

A natural-language query is turned into synthetic guide images, each guide is
embedded by several pluggable embedders, per-(guide, embedder) k-NN rankings
over a tiled corpus are fused under topic-conditioned trust weights, and user
feedback sharpens those weights over time.
"""

from .embedding import EmbedderDescriptor, EmbeddingVector, cosine_distance, normalize
from .engine import RetrievalEngine
from .generation import GeneratorDescriptor, GuideTuple, QuerySpec, refine_query
from .config import ServiceConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "EmbedderDescriptor",
    "EmbeddingVector",
    "cosine_distance",
    "normalize",
    "RetrievalEngine",
    "GeneratorDescriptor",
    "GuideTuple",
    "QuerySpec",
    "refine_query",
    "ServiceConfig",
    "load_config",
    "__version__",
]
