"""Scikit-learn-style estimator wrapping the whole pipeline.

``DisentangledKGE`` is configured like any sklearn estimator (``get_params``
/ ``set_params`` / ``clone`` work), fits on a :class:`KnowledgeGraph` or a
raw (n, 3) integer triple array, and predicts tail entities for (head,
relation) queries. Head prediction goes through inverse relation ids, as
everywhere else in the package.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from . import decoder as dec
from .data import KnowledgeGraph, TripleSet, Vocab
from .encoder import encode
from .evaluation import RankReport, evaluate
from .training import (TrainConfig, checkpoint_digest, load_checkpoint,
                       save_checkpoint, train)


def as_knowledge_graph(x) -> KnowledgeGraph:
    """Accept a KnowledgeGraph as-is or build one from an (n, 3) id array."""
    if isinstance(x, KnowledgeGraph):
        return x
    arr = np.asarray(x)
    if arr.ndim != 2 or arr.shape[1] != 3 or not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"expected a KnowledgeGraph or an (n, 3) integer array, "
                         f"got {type(x).__name__} with shape {getattr(arr, 'shape', None)}")
    if arr.min() < 0:
        raise ValueError("triple ids must be non-negative")
    entity_vocab, relation_vocab = Vocab(), Vocab()
    for e in range(int(arr[:, [0, 2]].max()) + 1):
        entity_vocab.add(f"e{e}")
    for r in range(int(arr[:, 1].max()) + 1):
        relation_vocab.add(f"r{r}")
    train_split = TripleSet([tuple(map(int, row)) for row in arr],
                            entity_vocab, relation_vocab)
    return KnowledgeGraph(train_split)


def check_queries(x, n_entities: int, n_relations_aug: int) -> np.ndarray:
    queries = np.asarray(x)
    if queries.ndim != 2 or queries.shape[1] != 2:
        raise ValueError(f"queries must be an (n, 2) array of (head, relation) ids, "
                         f"got shape {queries.shape}")
    queries = queries.astype(np.int64)
    if queries[:, 0].min() < 0 or queries[:, 0].max() >= n_entities:
        raise ValueError("head id outside the entity vocabulary")
    if queries[:, 1].min() < 0 or queries[:, 1].max() >= n_relations_aug:
        raise ValueError("relation id outside the augmented relation vocabulary")
    return queries


class DisentangledKGE(BaseEstimator):
    """Multi-component knowledge-graph embedding model.

    Parameters mirror :class:`disenkg.training.TrainConfig`; see that class
    for semantics. The interesting ones: ``n_components`` latent components
    per entity, ``mi_weight`` scaling the independence regularizer,
    ``operator`` for neighbor-message composition (sub/mult/corr/cross) and
    ``score_fn`` for the decoder (transe/distmult/conve).
    """

    def __init__(self, n_components=4, n_layers=2, component_dim=25, input_dim=None,
                 mi_weight=0.01, macro_mode="club", micro_mode="on", operator="cross",
                 score_fn="distmult", activation="tanh", scale_attention=False,
                 batch_size=128, learning_rate=1e-3, q_learning_rate=1e-3,
                 label_smoothing=0.1, epochs=200, seed=0, dropout=0.1,
                 hsic_bandwidth=None, conve_reshape_width=None, conve_kernel=3,
                 conve_filters=32, conve_dropout=0.0, conve_bias=False,
                 eval_every=10, patience=None, tie_policy="average"):
        self.n_components = n_components
        self.n_layers = n_layers
        self.component_dim = component_dim
        self.input_dim = input_dim
        self.mi_weight = mi_weight
        self.macro_mode = macro_mode
        self.micro_mode = micro_mode
        self.operator = operator
        self.score_fn = score_fn
        self.activation = activation
        self.scale_attention = scale_attention
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.q_learning_rate = q_learning_rate
        self.label_smoothing = label_smoothing
        self.epochs = epochs
        self.seed = seed
        self.dropout = dropout
        self.hsic_bandwidth = hsic_bandwidth
        self.conve_reshape_width = conve_reshape_width
        self.conve_kernel = conve_kernel
        self.conve_filters = conve_filters
        self.conve_dropout = conve_dropout
        self.conve_bias = conve_bias
        self.eval_every = eval_every
        self.patience = patience
        self.tie_policy = tie_policy

    def _config(self) -> TrainConfig:
        return TrainConfig(**self.get_params())

    def fit(self, X, y=None, log=None):
        """Train on a KnowledgeGraph (or (n, 3) triple id array)."""
        kg = as_knowledge_graph(X)
        config = self._config()
        config.validate()
        result = train(config, kg, log=log)
        self.config_ = config
        self.graph_ = kg
        self.params_ = result.params
        self.q_ = result.q
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.best_val_mrr_ = result.best_val_mrr
        self.step_ = result.step
        return self

    def _encode(self):
        cfg = self.config_
        return encode(self.graph_, self.params_, cfg.effective_components, cfg.n_layers,
                      cfg.operator, cfg.activation, cfg.attention, cfg.scale_attention,
                      training=False)

    def score_queries(self, X) -> dec.ScoreMatrix:
        """Full scoring detail for (head, relation) queries: per-component
        scores, fusion weights, raw fused scores and their probabilities."""
        check_is_fitted(self, "params_")
        queries = check_queries(X, self.graph_.n_entities, self.graph_.n_relations_aug)
        with ad.no_grad():
            encoded = self._encode()
            psis, beta, raw = dec.score_query_batch(
                encoded.components, encoded.rel_table, self.params_["rel_diag"],
                queries[:, 0], queries[:, 1], self.config_.score_config(), self.params_)
        return dec.ScoreMatrix(
            component_scores=np.stack([p.data for p in psis]),
            beta=beta.data.copy(),
            raw=raw.data.copy(),
            probabilities=dec.to_probabilities(raw.data),
        )

    def decision_function(self, X) -> np.ndarray:
        """Raw fused scores against every entity, shape (n_queries, n_entities)."""
        return self.score_queries(X).raw

    def predict(self, X) -> np.ndarray:
        """Highest-scoring tail entity id per query."""
        return np.argmax(self.decision_function(X), axis=1)

    def evaluate(self, split: str = "valid", kg: KnowledgeGraph | None = None) -> RankReport:
        check_is_fitted(self, "params_")
        return evaluate(self.params_, self.config_, kg or self.graph_, split)

    def score(self, X=None, y=None) -> float:
        """Filtered MRR on the validation split (sklearn-compatible scalar)."""
        return self.evaluate("valid").overall.mrr

    def digest(self) -> str:
        check_is_fitted(self, "params_")
        return checkpoint_digest(self.params_, self.q_, self.config_)

    def save(self, path):
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.params_, self.q_, self.config_, self.step_,
                        self.history_)

    @classmethod
    def load(cls, path, kg: KnowledgeGraph) -> "DisentangledKGE":
        """Rebuild a fitted estimator from a checkpoint plus its graph."""
        ckpt = load_checkpoint(path)
        est = cls(**{k: getattr(ckpt.config, k) for k in cls().get_params()})
        est.config_ = ckpt.config
        est.graph_ = kg
        est.params_ = ckpt.params
        est.q_ = ckpt.q
        est.history_ = ckpt.history
        est.step_ = ckpt.step
        est.best_epoch_ = None
        est.best_val_mrr_ = None
        return est
