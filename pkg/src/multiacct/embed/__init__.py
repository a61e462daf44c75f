"""Node2Vec embeddings: biased walks, skip-gram training, pair operators."""

from .ops import OPERATORS, EmbeddingFeature, EmbeddingMatrix, batch_pair_operator, pair_operator
from .skipgram import SkipGramConfig, TrainResult, train_skipgram
from .walks import WalkConfig, WalkGraph, generate_walks, step_distribution

__all__ = [
    "OPERATORS", "EmbeddingFeature", "EmbeddingMatrix", "batch_pair_operator", "pair_operator",
    "SkipGramConfig", "TrainResult", "train_skipgram",
    "WalkConfig", "WalkGraph", "generate_walks", "step_distribution", "node2vec",
]


def node2vec(graph, walk_cfg: WalkConfig | None = None, sg_cfg: SkipGramConfig | None = None,
             weighted: bool = True, workers: int = 1) -> TrainResult:
    """Walks plus skip-gram over a :class:`~multiacct.graphcore.BipartiteGraph`."""
    walk_cfg = walk_cfg or WalkConfig()
    wg = WalkGraph.from_bipartite(graph, weighted=weighted)
    walks = generate_walks(wg, walk_cfg, workers=workers)
    return train_skipgram(walks, wg.nodes, sg_cfg)
