"""Triple datasets: vocabularies, splits, inverse/self-loop augmentation, adjacency.

The on-disk format is the usual one for link-prediction benchmarks: one fact
per line, ``head<TAB>relation<TAB>tail``, UTF-8. Ids are dense and assigned
in first-appearance order so loads are deterministic.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Malformed input files, unseen symbols, duplicate facts."""


class Vocab:
    """Bidirectional name <-> dense-id mapping."""

    def __init__(self):
        self._ids: dict[str, int] = {}
        self._names: list[str] = []

    def add(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
        return idx

    def id_of(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise DataError(f"unknown symbol {name!r}") from None

    def name_of(self, idx: int) -> str:
        return self._names[idx]

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    @property
    def names(self) -> list[str]:
        return list(self._names)


@dataclass
class TripleSet:
    """One split of integer-indexed (head, relation, tail) facts."""

    triples: list[tuple[int, int, int]] = field(default_factory=list)
    entity_vocab: Vocab = field(default_factory=Vocab)
    relation_vocab: Vocab = field(default_factory=Vocab)

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def n_entities(self) -> int:
        return len(self.entity_vocab)

    @property
    def n_relations(self) -> int:
        return len(self.relation_vocab)


def load_triples(source, entity_vocab: Vocab | None = None,
                 relation_vocab: Vocab | None = None, grow: bool = True) -> TripleSet:
    """Parse a triple file (path or iterable of lines) into a TripleSet.

    Pass the training vocabularies with ``grow=False`` when loading valid/test
    splits; an unseen entity or relation is then an error rather than a new id.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = list(source)

    ts = TripleSet(entity_vocab=entity_vocab or Vocab(),
                   relation_vocab=relation_vocab or Vocab())
    seen: set[tuple[int, int, int]] = set()
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
        h_name, r_name, t_name = parts
        if grow:
            h = ts.entity_vocab.add(h_name)
            r = ts.relation_vocab.add(r_name)
            t = ts.entity_vocab.add(t_name)
        else:
            try:
                h = ts.entity_vocab.id_of(h_name)
                r = ts.relation_vocab.id_of(r_name)
                t = ts.entity_vocab.id_of(t_name)
            except DataError as err:
                raise DataError(f"line {lineno}: {err} (not present in the training vocabulary)") from None
        triple = (h, r, t)
        if triple in seen:
            raise DataError(f"line {lineno}: duplicate triple {h_name!r} {r_name!r} {t_name!r}")
        seen.add(triple)
        ts.triples.append(triple)
    return ts


def save_triples(ts: TripleSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in ts.triples:
            fh.write(f"{ts.entity_vocab.name_of(h)}\t{ts.relation_vocab.name_of(r)}\t"
                     f"{ts.entity_vocab.name_of(t)}\n")


@dataclass
class RelationCategory:
    """Cardinality class of a relation: 1-1, 1-N, N-1 or N-N."""

    relation_id: int
    category: str
    tails_per_head: float
    heads_per_tail: float


def classify_relation(relation_id: int, train: TripleSet,
                      threshold: float = 1.5) -> RelationCategory:
    """Label a relation by its average tails-per-head and heads-per-tail ratios."""
    heads, tails, count = set(), set(), 0
    for h, r, t in train.triples:
        if r == relation_id:
            heads.add(h)
            tails.add(t)
            count += 1
    if count == 0:
        raise DataError(f"relation id {relation_id} does not appear in the training split")
    tph = count / len(heads)
    hpt = count / len(tails)
    if tph < threshold and hpt < threshold:
        category = "1-1"
    elif tph >= threshold and hpt < threshold:
        category = "1-N"
    elif tph < threshold and hpt >= threshold:
        category = "N-1"
    else:
        category = "N-N"
    return RelationCategory(relation_id, category, tph, hpt)


class KnowledgeGraph:
    """Train/valid/test splits plus the augmented relation space and adjacency.

    Relation ids after augmentation: originals in [0, R), inverses in [R, 2R)
    (``r + R`` inverts ``r``), and one shared self-loop id ``2R``. The message
    graph is built from training triples only: each fact (h, r, t) yields an
    edge into h from t under r and an edge into t from h under the inverse,
    and every entity gets one self-loop.
    """

    def __init__(self, train: TripleSet, valid: TripleSet | None = None,
                 test: TripleSet | None = None, category_threshold: float = 1.5):
        self.train = train
        self.valid = valid if valid is not None else TripleSet(
            entity_vocab=train.entity_vocab, relation_vocab=train.relation_vocab)
        self.test = test if test is not None else TripleSet(
            entity_vocab=train.entity_vocab, relation_vocab=train.relation_vocab)
        for split in (self.valid, self.test):
            if split.entity_vocab is not train.entity_vocab or \
               split.relation_vocab is not train.relation_vocab:
                raise DataError("valid/test splits must share the training vocabulary")

        self.n_entities = train.n_entities
        self.n_relations = train.n_relations
        self.n_relations_aug = 2 * self.n_relations + 1
        self.self_loop_id = 2 * self.n_relations

        n, t_cnt = self.n_entities, len(train)
        dst = np.empty(2 * t_cnt + n, dtype=np.int64)
        src = np.empty_like(dst)
        rel = np.empty_like(dst)
        for i, (h, r, t) in enumerate(train.triples):
            dst[i], src[i], rel[i] = h, t, r
            dst[t_cnt + i], src[t_cnt + i], rel[t_cnt + i] = t, h, r + self.n_relations
        dst[2 * t_cnt:] = np.arange(n)
        src[2 * t_cnt:] = np.arange(n)
        rel[2 * t_cnt:] = self.self_loop_id
        self.edge_dst, self.edge_src, self.edge_rel = dst, src, rel

        # filtered-ranking support: every known tail of each augmented query
        self.known_tails: dict[tuple[int, int], set[int]] = {}
        for split in (self.train, self.valid, self.test):
            for h, r, t in split.triples:
                self.known_tails.setdefault((h, r), set()).add(t)
                self.known_tails.setdefault((t, r + self.n_relations), set()).add(h)

        # training targets (train split only), keyed by augmented (u, r) query
        self.train_targets: dict[tuple[int, int], list[int]] = {}
        for h, r, t in train.triples:
            self.train_targets.setdefault((h, r), []).append(t)
            self.train_targets.setdefault((t, r + self.n_relations), []).append(h)

        self.category_threshold = category_threshold
        self._categories: dict[int, RelationCategory] | None = None

    @property
    def n_edges(self) -> int:
        return self.edge_dst.shape[0]

    def inverse_id(self, relation_id: int) -> int:
        return relation_id + self.n_relations

    def original_relation(self, relation_id: int) -> int:
        """Map an augmented relation id back to its original relation."""
        if relation_id == self.self_loop_id:
            raise DataError("the self-loop relation has no original counterpart")
        return relation_id - self.n_relations if relation_id >= self.n_relations else relation_id

    def is_inverse(self, relation_id: int) -> bool:
        return self.n_relations <= relation_id < self.self_loop_id

    def adjacency(self, entity_id: int) -> list[tuple[int, int]]:
        """Neighbors of an entity as (source entity, relation) pairs, self-loop included."""
        mask = self.edge_dst == entity_id
        return list(zip(self.edge_src[mask].tolist(), self.edge_rel[mask].tolist()))

    def queries(self, split: str) -> list[tuple[int, int, int]]:
        """Ranking queries for a split: (u, r, gold tail), inverses included."""
        ts = self._split(split)
        out = [(h, r, t) for h, r, t in ts.triples]
        out += [(t, r + self.n_relations, h) for h, r, t in ts.triples]
        return out

    def _split(self, name: str) -> TripleSet:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise DataError(f"unknown split {name!r}; expected train, valid or test") from None

    def categories(self) -> dict[int, RelationCategory]:
        """RelationCategory per original relation id (computed once, from train)."""
        if self._categories is None:
            self._categories = {
                r: classify_relation(r, self.train, self.category_threshold)
                for r in range(self.n_relations)
            }
        return self._categories

    def relation_name(self, relation_id: int) -> str:
        if relation_id == self.self_loop_id:
            return "<self>"
        if self.is_inverse(relation_id):
            return self.train.relation_vocab.name_of(relation_id - self.n_relations) + "^-1"
        return self.train.relation_vocab.name_of(relation_id)


def augment_and_index(train: TripleSet, valid: TripleSet | None = None,
                      test: TripleSet | None = None, **kwargs) -> KnowledgeGraph:
    return KnowledgeGraph(train, valid, test, **kwargs)


def load_dataset(directory, train_file: str = "train.txt", valid_file: str = "valid.txt",
                 test_file: str = "test.txt") -> KnowledgeGraph:
    """Load the standard three-file dataset layout from a directory."""
    train_path = os.path.join(directory, train_file)
    if not os.path.exists(train_path):
        raise DataError(f"missing training file {train_path}")
    train = load_triples(train_path)
    valid = test = None
    valid_path = os.path.join(directory, valid_file)
    test_path = os.path.join(directory, test_file)
    if os.path.exists(valid_path):
        valid = load_triples(valid_path, train.entity_vocab, train.relation_vocab, grow=False)
    if os.path.exists(test_path):
        test = load_triples(test_path, train.entity_vocab, train.relation_vocab, grow=False)
    return KnowledgeGraph(train, valid, test)


def dataset_stats(kg: KnowledgeGraph) -> str:
    """Human-readable split statistics."""
    rows = [
        ("entities", kg.n_entities),
        ("relations", kg.n_relations),
        ("relations after augmentation", kg.n_relations_aug),
        ("train triples", len(kg.train)),
        ("valid triples", len(kg.valid)),
        ("test triples", len(kg.test)),
        ("message-graph edges", kg.n_edges),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)
