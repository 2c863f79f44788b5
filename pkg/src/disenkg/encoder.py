"""Multi-component entity encoder with relation-aware attention aggregation.

Each entity carries K component vectors. Layer 0 projects the learned entity
features through K distinct matrices; every further layer lets each component
aggregate messages from the entity's neighborhood (self-loop included), where
both the message content and the attention weights are shaped by a learned
per-relation diagonal projection. Components never mix inside the encoder:
separation between them is the point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import KnowledgeGraph

OPERATORS = ("sub", "mult", "corr", "cross")


@dataclass
class EncodeResult:
    """Final component states (one N x d_c tensor per component) and relation table."""

    components: list[Tensor]
    rel_table: Tensor

    @property
    def n_components(self) -> int:
        return len(self.components)


def init_encoder_params(rng: np.random.Generator, n_entities: int, n_relations_aug: int,
                        n_components: int, input_dim: int, component_dim: int,
                        n_layers: int) -> dict[str, Tensor]:
    """Xavier-initialized parameter tensors for the encoder."""
    params: dict[str, Tensor] = {}
    params["entity_features"] = ad.parameter(
        ad.xavier_uniform(rng, (n_entities, input_dim)), "entity_features")
    for k in range(n_components):
        params[f"proj/{k}"] = ad.parameter(
            ad.xavier_uniform(rng, (component_dim, input_dim)), f"proj/{k}")
    params["rel_embed"] = ad.parameter(
        ad.xavier_uniform(rng, (n_relations_aug, component_dim)), "rel_embed")
    # the diagonal of a d_c x d_c relation projection, stored as one row per relation
    diag_limit = math.sqrt(3.0 / component_dim)
    params["rel_diag"] = ad.parameter(
        rng.uniform(-diag_limit, diag_limit, size=(n_relations_aug, component_dim)), "rel_diag")
    for layer in range(n_layers):
        params[f"rel_transform/{layer}"] = ad.parameter(
            ad.xavier_uniform(rng, (component_dim, component_dim)), f"rel_transform/{layer}")
    return params


def disentangle_init(params: dict[str, Tensor], n_components: int, activation: str) -> list[Tensor]:
    """Layer-0 components: h0_k = sigma(W_k x) for every entity at once."""
    act = ad.ACTIVATIONS[activation]
    x = params["entity_features"]
    return [act(ad.matmul(x, ad.transpose(params[f"proj/{k}"]))) for k in range(n_components)]


def compose(h_src: Tensor, h_rel: Tensor, theta: Tensor, operator: str) -> Tensor:
    """Entity-relation message interaction; operands are edge-aligned matrices."""
    projected = ad.mul(theta, h_src)
    if operator == "sub":
        return ad.sub(projected, h_rel)
    if operator == "mult":
        return ad.mul(projected, h_rel)
    if operator == "corr":
        return ad.circular_correlation(projected, h_rel)
    if operator == "cross":
        return ad.add(projected, ad.mul(theta, ad.mul(h_src, h_rel)))
    raise ValueError(f"unknown composition operator {operator!r}; choose from {OPERATORS}")


def attention_weights(h_dst: Tensor, h_src: Tensor, theta: Tensor,
                      edge_dst: np.ndarray, n_entities: int,
                      scale: bool = False) -> Tensor:
    """Dot-product attention over each entity's neighborhood.

    All inputs are edge-aligned (E x d_c); the returned vector holds one
    weight per edge, normalized within each destination entity's edge group.
    """
    e_dst = ad.mul(h_dst, theta)
    e_src = ad.mul(h_src, theta)
    logits = ad.reduce_sum(ad.mul(e_dst, e_src), axis=1)
    if scale:
        logits = ad.mul_scalar(logits, 1.0 / math.sqrt(h_dst.shape[1]))
    return ad.segment_softmax(logits, edge_dst, n_entities)


def _uniform_weights(edge_dst: np.ndarray, n_entities: int) -> Tensor:
    degree = np.bincount(edge_dst, minlength=n_entities).astype(np.float64)
    return Tensor(1.0 / degree[edge_dst])


def aggregate_layer(components: list[Tensor], rel_table: Tensor, params: dict[str, Tensor],
                    kg: KnowledgeGraph, layer: int, operator: str, activation: str,
                    attention: str = "dot", scale_attention: bool = False,
                    dropout: float = 0.0, rng: np.random.Generator | None = None,
                    training: bool = False,
                    collect_alphas: list[Tensor] | None = None) -> tuple[list[Tensor], Tensor]:
    """One round of neighborhood aggregation for every component."""
    act = ad.ACTIVATIONS[activation]
    dst, src, rel = kg.edge_dst, kg.edge_src, kg.edge_rel
    theta_e = ad.index_select(params["rel_diag"], 0, rel)
    h_rel_e = ad.index_select(rel_table, 0, rel)

    new_components = []
    for h_k in components:
        h_dst_e = ad.index_select(h_k, 0, dst)
        h_src_e = ad.index_select(h_k, 0, src)
        if attention == "dot":
            alpha = attention_weights(h_dst_e, h_src_e, theta_e, dst, kg.n_entities,
                                      scale=scale_attention)
        elif attention == "uniform":
            alpha = _uniform_weights(dst, kg.n_entities)
        else:
            raise ValueError(f"unknown attention mode {attention!r}")
        if collect_alphas is not None:
            collect_alphas.append(alpha)
        messages = compose(h_src_e, h_rel_e, theta_e, operator)
        aggregated = ad.segment_sum(ad.scale_rows(messages, alpha), dst, kg.n_entities)
        if training and dropout > 0.0:
            aggregated = ad.dropout(aggregated, dropout, rng)
        new_components.append(act(aggregated))

    new_rel_table = ad.matmul(rel_table, ad.transpose(params[f"rel_transform/{layer}"]))
    return new_components, new_rel_table


def encode(kg: KnowledgeGraph, params: dict[str, Tensor], n_components: int, n_layers: int,
           operator: str = "cross", activation: str = "tanh", attention: str = "dot",
           scale_attention: bool = False, dropout: float = 0.0,
           rng: np.random.Generator | None = None, training: bool = False) -> EncodeResult:
    """Full forward pass: component init followed by ``n_layers`` aggregation rounds."""
    components = disentangle_init(params, n_components, activation)
    rel_table = params["rel_embed"]
    for layer in range(n_layers):
        components, rel_table = aggregate_layer(
            components, rel_table, params, kg, layer, operator, activation,
            attention=attention, scale_attention=scale_attention,
            dropout=dropout, rng=rng, training=training)
    return EncodeResult(components, rel_table)


def final_attention(result: EncodeResult, params: dict[str, Tensor], kg: KnowledgeGraph,
                    scale_attention: bool = False) -> list[np.ndarray]:
    """Neighbor attention per component, recomputed from the final state.

    This is the quantity used for explanations: how strongly each component
    of an entity attends to each incident edge, one array of per-edge weights
    per component.
    """
    dst, src, rel = kg.edge_dst, kg.edge_src, kg.edge_rel
    with ad.no_grad():
        theta_e = ad.index_select(params["rel_diag"], 0, rel)
        out = []
        for h_k in result.components:
            h_dst_e = ad.index_select(h_k, 0, dst)
            h_src_e = ad.index_select(h_k, 0, src)
            alpha = attention_weights(h_dst_e, h_src_e, theta_e, dst, kg.n_entities,
                                      scale=scale_attention)
            out.append(alpha.data.copy())
    return out
