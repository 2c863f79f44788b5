"""Filtered-ranking link-prediction evaluation.

Each query (u, r) ranks its gold tail against all entities after removing
every other entity known to complete (u, r) in any split. Ties resolve to the
average rank by default; the optimistic minimum rank is available behind a
flag but inflates metrics. Aggregates come sliced by prediction direction
(inverse-relation queries are head predictions) and by relation category.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import decoder as dec
from .autodiff import Tensor
from .data import KnowledgeGraph
from .encoder import encode
from .training import TrainConfig

# Published full-scale results, for orientation in reports only: reaching
# them needs accelerator-scale training far beyond this package's desk-scale
# test envelope.
FULL_SCALE_REFERENCE = {
    "FB15k-237": {"mrr": 0.368, "hits@10": 0.553},
    "WN18RR": {"mrr": 0.486, "mr": 1504},
}

HITS_LEVELS = (1, 3, 10)


class EvaluationError(ValueError):
    pass


def filtered_rank(scores: np.ndarray, gold: int, known_valid, policy: str = "average") -> float:
    """Rank of the gold entity after filtering other known-valid tails.

    ``scores`` holds one value per candidate entity; ``known_valid`` is every
    entity (gold included) that forms a true triple with the query.
    """
    n = scores.shape[0]
    if not 0 <= gold < n:
        raise EvaluationError(f"gold entity {gold} outside the candidate set of size {n}")
    known = np.fromiter(known_valid, dtype=np.int64)
    if gold not in known:
        raise EvaluationError(f"gold entity {gold} missing from the known-valid set")
    keep = np.ones(n, dtype=bool)
    keep[known] = False
    keep[gold] = True
    surviving = scores[keep]
    gold_score = scores[gold]
    greater = int(np.sum(surviving > gold_score))
    if policy == "min":
        return float(1 + greater)
    if policy == "average":
        equal_others = int(np.sum(surviving == gold_score)) - 1
        return 1.0 + greater + equal_others / 2.0
    raise EvaluationError(f"unknown tie policy {policy!r}")


@dataclass
class Metrics:
    """MRR / MR / Hits@k over a set of ranks."""

    mrr: float
    mr: float
    hits: dict[int, float]
    count: int

    @classmethod
    def from_ranks(cls, ranks) -> "Metrics":
        ranks = np.asarray(ranks, dtype=np.float64)
        if ranks.size == 0:
            raise EvaluationError("cannot aggregate an empty rank list")
        return cls(
            mrr=float(np.mean(1.0 / ranks)),
            mr=float(np.mean(ranks)),
            hits={k: float(np.mean(ranks <= k)) for k in HITS_LEVELS},
            count=int(ranks.size),
        )


def aggregate(ranks) -> Metrics:
    return Metrics.from_ranks(ranks)


@dataclass
class RankReport:
    overall: Metrics
    by_direction: dict[str, Metrics] = field(default_factory=dict)
    by_category: dict[str, Metrics] = field(default_factory=dict)
    by_direction_category: dict[tuple[str, str], Metrics] = field(default_factory=dict)
    ranks: np.ndarray | None = None

    def to_records(self) -> list[dict]:
        """Flat machine-readable rows, one per slice."""
        def row(scope, metrics):
            return {"slice": scope, "count": metrics.count, "mrr": metrics.mrr,
                    "mr": metrics.mr,
                    **{f"hits@{k}": v for k, v in metrics.hits.items()}}
        rows = [row("all", self.overall)]
        rows += [row(f"direction={d}", m) for d, m in self.by_direction.items()]
        rows += [row(f"category={c}", m) for c, m in self.by_category.items()]
        rows += [row(f"direction={d}/category={c}", m)
                 for (d, c), m in self.by_direction_category.items()]
        return rows


def evaluate(params: dict[str, Tensor], config: TrainConfig, kg: KnowledgeGraph,
             split: str = "valid", chunk_size: int = 512) -> RankReport:
    """Score and rank every query of a split (both directions) with filtering."""
    queries = kg.queries(split)
    if not queries:
        raise EvaluationError(f"split {split!r} is empty")
    with ad.no_grad():
        encoded = encode(kg, params, config.effective_components, config.n_layers,
                         config.operator, config.activation, config.attention,
                         config.scale_attention, training=False)
        score_cfg = config.score_config()

        # group queries by relation so each relation's projections are reused
        by_rel: dict[int, list[int]] = {}
        for qi, (_, r, _) in enumerate(queries):
            by_rel.setdefault(r, []).append(qi)
        ranks = np.empty(len(queries))
        for r, idxs in by_rel.items():
            for start in range(0, len(idxs), chunk_size):
                chunk = idxs[start:start + chunk_size]
                heads = np.array([queries[qi][0] for qi in chunk], dtype=np.int64)
                rels = np.full(len(chunk), r, dtype=np.int64)
                _, _, raw = dec.score_query_batch(
                    encoded.components, encoded.rel_table, params["rel_diag"],
                    heads, rels, score_cfg, params)
                for row, qi in enumerate(chunk):
                    u, _, gold = queries[qi]
                    ranks[qi] = filtered_rank(raw.data[row], gold,
                                              kg.known_tails[(u, r)], config.tie_policy)

    categories = kg.categories()
    directions = np.array([
        "head" if kg.is_inverse(r) else "tail" for _, r, _ in queries])
    cat_labels = np.array([
        categories[kg.original_relation(r)].category for _, r, _ in queries])

    report = RankReport(overall=Metrics.from_ranks(ranks), ranks=ranks)
    for d in ("tail", "head"):
        mask = directions == d
        if mask.any():
            report.by_direction[d] = Metrics.from_ranks(ranks[mask])
    for c in ("1-1", "1-N", "N-1", "N-N"):
        mask = cat_labels == c
        if mask.any():
            report.by_category[c] = Metrics.from_ranks(ranks[mask])
        for d in ("tail", "head"):
            both = mask & (directions == d)
            if both.any():
                report.by_direction_category[(d, c)] = Metrics.from_ranks(ranks[both])
    return report


def report_text(report: RankReport, dataset_name: str | None = None) -> str:
    """Render a report in the usual metric-columns, direction-by-category layout."""
    header = f"{'slice':<18} {'count':>7} {'MRR':>7} {'MR':>9} " + \
        " ".join(f"{'H@' + str(k):>6}" for k in HITS_LEVELS)
    lines = [header, "-" * len(header)]

    def fmt(name, m: Metrics):
        hits = " ".join(f"{m.hits[k]:>6.3f}" for k in HITS_LEVELS)
        return f"{name:<18} {m.count:>7} {m.mrr:>7.3f} {m.mr:>9.1f} {hits}"

    lines.append(fmt("all", report.overall))
    for d, m in report.by_direction.items():
        lines.append(fmt(f"{d} pred", m))
    for (d, c), m in report.by_direction_category.items():
        lines.append(fmt(f"{d} pred {c}", m))
    if dataset_name in FULL_SCALE_REFERENCE:
        ref = FULL_SCALE_REFERENCE[dataset_name]
        ref_txt = ", ".join(f"{k}={v}" for k, v in ref.items())
        lines.append("")
        lines.append(f"reference (full-scale training, not a desk-scale target): {ref_txt}")
    return "\n".join(lines)
