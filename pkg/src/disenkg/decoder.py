"""Triple scoring per component and relation-adaptive fusion.

Every component scores a (head, relation) query against all candidate tails
under a pluggable score function; a softmax over component-relation affinity
then mixes the K score rows into one. Ranking always uses the raw fused
scores; the logistic squashing exists only for the training loss, and being
strictly monotone it cannot change any ranking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SCORE_FUNCTIONS = ("transe", "distmult", "conve")


class ConfigError(ValueError):
    """Invalid score-function configuration."""


@dataclass
class ScoreFunctionConfig:
    kind: str = "distmult"
    component_dim: int = 25
    # conve-only settings
    reshape_width: int | None = None
    kernel_size: int = 3
    n_filters: int = 32
    dropout: float = 0.0
    use_bias: bool = False

    def __post_init__(self):
        if self.kind not in SCORE_FUNCTIONS:
            raise ConfigError(f"unknown score function {self.kind!r}; choose from {SCORE_FUNCTIONS}")
        if self.kind == "conve":
            self.reshape_width, self.reshape_height = conve_reshape(
                self.component_dim, self.kernel_size, self.reshape_width)

    @property
    def conv_output_shape(self) -> tuple[int, int]:
        return (2 * self.reshape_width - self.kernel_size + 1,
                self.reshape_height - self.kernel_size + 1)

    @property
    def flat_dim(self) -> int:
        h, w = self.conv_output_shape
        return self.n_filters * h * w


def conve_reshape(component_dim: int, kernel_size: int,
                  width: int | None = None) -> tuple[int, int]:
    """Pick the 2-D reshape (width, height) with width * height == component_dim.

    Prefers width 10 when it divides the dimension, otherwise the smallest
    feasible factor: the stacked head/relation image (2*width x height) must
    accommodate the kernel.
    """
    def feasible(w: int) -> bool:
        h = component_dim // w
        return 2 * w >= kernel_size and h >= kernel_size

    if width is not None:
        if component_dim % width != 0:
            raise ConfigError(f"reshape width {width} does not divide component dim {component_dim}")
        if not feasible(width):
            raise ConfigError(
                f"kernel {kernel_size}x{kernel_size} does not fit the "
                f"{2 * width}x{component_dim // width} stacked image")
        return width, component_dim // width
    if component_dim % 10 == 0 and feasible(10):
        return 10, component_dim // 10
    for w in range(1, component_dim + 1):
        if component_dim % w == 0 and feasible(w):
            return w, component_dim // w
    raise ConfigError(
        f"no 2-D reshape of a {component_dim}-dim component fits a "
        f"{kernel_size}x{kernel_size} kernel")


def init_decoder_params(rng: np.random.Generator, cfg: ScoreFunctionConfig,
                        n_entities: int) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    if cfg.kind == "conve":
        fan_in = cfg.kernel_size ** 2
        fan_out = cfg.n_filters * cfg.kernel_size ** 2
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params["conve/filters"] = ad.parameter(
            rng.uniform(-limit, limit, size=(cfg.n_filters, 1, cfg.kernel_size, cfg.kernel_size)),
            "conve/filters")
        params["conve/proj"] = ad.parameter(
            ad.xavier_uniform(rng, (cfg.component_dim, cfg.flat_dim)), "conve/proj")
        if cfg.use_bias:
            params["conve/bias"] = ad.parameter(np.zeros(n_entities), "conve/bias")
    return params


def score_component(h_u: Tensor, h_r: Tensor, all_entities: Tensor,
                    cfg: ScoreFunctionConfig, params: dict[str, Tensor],
                    rng: np.random.Generator | None = None,
                    training: bool = False) -> Tensor:
    """Scores of a (B, d) query block against every row of ``all_entities``: (B, N)."""
    if cfg.kind == "transe":
        return ad.neg(ad.l1_distance_all(ad.add(h_u, h_r), all_entities))
    if cfg.kind == "distmult":
        return ad.matmul(ad.mul(h_u, h_r), ad.transpose(all_entities))
    return _conve_scores(h_u, h_r, all_entities, cfg, params, rng, training)


def _conve_scores(h_u, h_r, all_entities, cfg, params, rng, training):
    b = h_u.shape[0]
    w, h = cfg.reshape_width, cfg.reshape_height
    image = ad.concat([ad.reshape(h_u, (b, 1, w, h)), ad.reshape(h_r, (b, 1, w, h))], axis=2)
    feature = ad.relu(ad.conv2d(image, params["conve/filters"]))
    if training and cfg.dropout > 0.0:
        feature = ad.dropout(feature, cfg.dropout, rng)
    flat = ad.reshape(feature, (b, cfg.flat_dim))
    hidden = ad.relu(ad.matmul(flat, ad.transpose(params["conve/proj"])))
    if training and cfg.dropout > 0.0:
        hidden = ad.dropout(hidden, cfg.dropout, rng)
    scores = ad.matmul(hidden, ad.transpose(all_entities))
    if cfg.use_bias:
        scores = ad.add(scores, ad.outer_sum(Tensor(np.zeros(b)), params["conve/bias"]))
    return scores


def fusion_weights(components_u: list[Tensor], theta_r: Tensor, h_r: Tensor) -> Tensor:
    """Relation-conditioned mixture over components: (B, K), rows summing to 1.

    The affinity of component k is the dot product of its relation-projected
    representation with the relation embedding, sharing the same diagonal
    projection the encoder's attention uses.
    """
    b = theta_r.shape[0]
    logits = [
        ad.reshape(ad.reduce_sum(ad.mul(ad.mul(h_k, theta_r), h_r), axis=1), (b, 1))
        for h_k in components_u
    ]
    return ad.softmax(ad.concat(logits, axis=1), axis=1)


def fused_scores(component_scores: list[Tensor], beta: Tensor) -> Tensor:
    """Convex combination of the per-component score rows: (B, N), raw scale."""
    b = beta.shape[0]
    total = None
    for k, psi_k in enumerate(component_scores):
        beta_k = ad.reshape(ad.index_select(beta, 1, [k]), (b,))
        term = ad.scale_rows(psi_k, beta_k)
        total = term if total is None else ad.add(total, term)
    return total


def score_query_batch(components: list[Tensor], rel_table: Tensor, rel_diag: Tensor,
                      heads: np.ndarray, rels: np.ndarray, cfg: ScoreFunctionConfig,
                      params: dict[str, Tensor], rng: np.random.Generator | None = None,
                      training: bool = False) -> tuple[list[Tensor], Tensor, Tensor]:
    """Score a (head, relation) query batch against every entity.

    Returns (per-component scores, fusion weights, fused raw scores). This is
    the single scoring path shared by the training loss and the evaluator.
    """
    theta_q = ad.index_select(rel_diag, 0, rels)
    h_r = ad.index_select(rel_table, 0, rels)
    heads_u = [ad.index_select(c, 0, heads) for c in components]
    psis = [score_component(h_u, h_r, c_all, cfg, params, rng, training)
            for h_u, c_all in zip(heads_u, components)]
    beta = fusion_weights(heads_u, theta_q, h_r)
    return psis, beta, fused_scores(psis, beta)


@dataclass
class ScoreMatrix:
    """Materialized scores for a query batch (numpy, forward-only use)."""

    component_scores: np.ndarray  # (K, B, N)
    beta: np.ndarray              # (B, K)
    raw: np.ndarray               # (B, N)
    probabilities: np.ndarray     # (B, N), open interval (0, 1)


def to_probabilities(raw: np.ndarray) -> np.ndarray:
    """Logistic squashing clipped into the open interval (0, 1)."""
    if not np.all(np.isfinite(raw)):
        raise FloatingPointError("non-finite fused scores")
    p = 1.0 / (1.0 + np.exp(-np.clip(raw, -700, 700)))
    return np.clip(p, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)
