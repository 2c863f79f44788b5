"""Explainability exports: which neighbors each component attends to, and how
the fusion weights split a query across components."""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import decoder as dec
from .data import DataError, KnowledgeGraph
from .encoder import encode, final_attention
from .model import DisentangledKGE


@dataclass
class ExplanationRecord:
    """Top attended neighbors per component for an entity, plus fusion
    weights when the record explains a (head, relation) query."""

    entity: str
    query_relation: str | None = None
    neighbors: list[list[tuple[str, str, float]]] = field(default_factory=list)
    beta: list[float] | None = None

    def to_dict(self) -> dict:
        return {
            "entity": self.entity,
            "query_relation": self.query_relation,
            "components": [
                [{"relation": r, "neighbor": n, "alpha": a} for r, n, a in comp]
                for comp in self.neighbors
            ],
            "beta": self.beta,
        }


def resolve_entity(kg: KnowledgeGraph, name: str) -> int:
    vocab = kg.train.entity_vocab
    if name in vocab:
        return vocab.id_of(name)
    close = difflib.get_close_matches(name, vocab.names, n=3)
    hint = f"; closest matches: {', '.join(close)}" if close else ""
    raise DataError(f"unknown entity {name!r}{hint}")


def resolve_relation(kg: KnowledgeGraph, name: str) -> int:
    vocab = kg.train.relation_vocab
    if name.endswith("^-1") and name[:-3] in vocab:
        return kg.inverse_id(vocab.id_of(name[:-3]))
    if name in vocab:
        return vocab.id_of(name)
    close = difflib.get_close_matches(name, vocab.names, n=3)
    hint = f"; closest matches: {', '.join(close)}" if close else ""
    raise DataError(f"unknown relation {name!r}{hint}")


def explain_entity(model: DisentangledKGE, entity: str | int, top_n: int = 3,
                   query_relation: str | int | None = None) -> ExplanationRecord:
    """Recompute final-layer attention and report each component's strongest
    neighbors; with a query relation, also report the fusion weights."""
    kg = model.graph_
    entity_id = entity if isinstance(entity, int) else resolve_entity(kg, entity)
    with ad.no_grad():
        encoded = model._encode()
        alphas = final_attention(encoded, model.params_, kg,
                                 model.config_.scale_attention)
    edge_idx = np.where(kg.edge_dst == entity_id)[0]
    record = ExplanationRecord(entity=kg.train.entity_vocab.name_of(entity_id))
    for alpha in alphas:
        order = edge_idx[np.argsort(-alpha[edge_idx], kind="stable")[:top_n]]
        record.neighbors.append([
            (kg.relation_name(int(kg.edge_rel[e])),
             kg.train.entity_vocab.name_of(int(kg.edge_src[e])),
             float(alpha[e]))
            for e in order
        ])

    if query_relation is not None:
        rel_id = query_relation if isinstance(query_relation, int) else \
            resolve_relation(kg, query_relation)
        with ad.no_grad():
            heads = np.array([entity_id], dtype=np.int64)
            rels = np.array([rel_id], dtype=np.int64)
            components_u = [ad.index_select(c, 0, heads) for c in encoded.components]
            theta_q = ad.index_select(model.params_["rel_diag"], 0, rels)
            h_r = ad.index_select(encoded.rel_table, 0, rels)
            beta = dec.fusion_weights(components_u, theta_q, h_r)
        record.query_relation = kg.relation_name(rel_id)
        record.beta = [float(b) for b in beta.data[0]]
    return record


def format_explanation(record: ExplanationRecord) -> str:
    lines = [f"entity: {record.entity}"]
    if record.query_relation is not None:
        lines.append(f"query relation: {record.query_relation}")
    for k, comp in enumerate(record.neighbors):
        beta_txt = f"  (beta={record.beta[k]:.3f})" if record.beta else ""
        lines.append(f"component {k}{beta_txt}")
        for rel, neigh, alpha in comp:
            lines.append(f"  {alpha:8.4f}  {rel}  ->  {neigh}")
    if record.beta is not None:
        ranked = np.argsort(-np.array(record.beta))
        lines.append("component ranking for this query: " +
                     ", ".join(f"c{k} ({record.beta[k]:.3f})" for k in ranked))
    return "\n".join(lines)
