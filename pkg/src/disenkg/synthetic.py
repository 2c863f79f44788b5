"""Synthetic planted-topic graphs for experiments and acceptance checks.

The generator plants a known latent structure: hub entities connect into
several topic clusters through topic-specific relations, and each cluster is
internally dense. A disentangling encoder should dedicate components to
topics, which makes these graphs a ground-truthed probe for attention
behavior (and an easy memorization benchmark).
"""

from __future__ import annotations

import numpy as np

from .data import KnowledgeGraph, TripleSet, Vocab


def planted_topic_graph(n_entities: int = 50, n_topics: int = 4, n_hubs: int = 10,
                        hub_degree: int = 3, n_intra: int = 45, seed: int = 0,
                        valid_fraction: float = 0.1):
    """Build a toy KnowledgeGraph with planted topics.

    Returns (graph, info) where info maps the planted structure back to ids:
    ``relation_topic`` (original relation id -> topic), ``entity_topic``
    (entity id -> topic, hubs get -1) and ``hub_ids``.
    """
    if n_hubs >= n_entities or (n_entities - n_hubs) % n_topics != 0:
        raise ValueError("cluster entities must divide evenly among topics")
    rng = np.random.default_rng(seed)
    cluster_size = (n_entities - n_hubs) // n_topics

    entity_vocab = Vocab()
    relation_vocab = Vocab()
    hub_ids = [entity_vocab.add(f"hub{i:02d}") for i in range(n_hubs)]
    clusters: list[list[int]] = []
    entity_topic = {h: -1 for h in hub_ids}
    for t in range(n_topics):
        ids = [entity_vocab.add(f"t{t}e{j:02d}") for j in range(cluster_size)]
        for e in ids:
            entity_topic[e] = t
        clusters.append(ids)
    relation_topic = {}
    topic_relations: list[list[int]] = []
    for t in range(n_topics):
        ids = [relation_vocab.add(f"rel_t{t}_{s}") for s in ("a", "b")]
        for r in ids:
            relation_topic[r] = t
        topic_relations.append(ids)

    triples: list[tuple[int, int, int]] = []
    seen = set()

    def emit(h, r, t):
        if h != t and (h, r, t) not in seen:
            seen.add((h, r, t))
            triples.append((h, r, t))

    for hub in hub_ids:
        for t in range(n_topics):
            targets = rng.choice(clusters[t], size=min(hub_degree, cluster_size), replace=False)
            for tail in targets:
                emit(hub, int(rng.choice(topic_relations[t])), int(tail))
    for t in range(n_topics):
        for _ in range(n_intra):
            h, tail = rng.choice(clusters[t], size=2, replace=False)
            emit(int(h), int(rng.choice(topic_relations[t])), int(tail))

    # hold out a validation slice without orphaning any symbol from train
    order = rng.permutation(len(triples))
    n_valid = int(round(valid_fraction * len(triples)))
    ent_count = np.zeros(n_entities, dtype=np.int64)
    rel_count = np.zeros(len(relation_vocab), dtype=np.int64)
    for h, r, t in triples:
        ent_count[h] += 1
        ent_count[t] += 1
        rel_count[r] += 1
    valid_idx = set()
    for i in order:
        if len(valid_idx) == n_valid:
            break
        h, r, t = triples[i]
        if ent_count[h] > 1 and ent_count[t] > 1 and rel_count[r] > 1:
            valid_idx.add(i)
            ent_count[h] -= 1
            ent_count[t] -= 1
            rel_count[r] -= 1

    train = TripleSet(entity_vocab=entity_vocab, relation_vocab=relation_vocab)
    valid = TripleSet(entity_vocab=entity_vocab, relation_vocab=relation_vocab)
    for i, triple in enumerate(triples):
        (valid if i in valid_idx else train).triples.append(triple)

    info = {
        "relation_topic": relation_topic,
        "entity_topic": entity_topic,
        "hub_ids": hub_ids,
        "n_topics": n_topics,
    }
    return KnowledgeGraph(train, valid), info


def attention_topic_purity(alphas: list[np.ndarray], kg: KnowledgeGraph,
                           relation_topic: dict[int, int], top_n: int = 3) -> list[float]:
    """Mean top-``top_n`` neighbor topic purity per component.

    ``alphas[k]`` holds one attention weight per message-graph edge. Only
    entities whose incident edges mix at least two topics count: a
    single-topic neighborhood is pure no matter what the model does.
    """
    edge_topic = np.array([
        -1 if r == kg.self_loop_id else relation_topic[kg.original_relation(int(r))]
        for r in kg.edge_rel
    ])
    purities = []
    for alpha in alphas:
        scores, n_scored = 0.0, 0
        for u in range(kg.n_entities):
            idx = np.where((kg.edge_dst == u) & (edge_topic >= 0))[0]
            if len(idx) < top_n or len(set(edge_topic[idx])) < 2:
                continue
            top = idx[np.argsort(-alpha[idx], kind="stable")[:top_n]]
            counts = np.bincount(edge_topic[top])
            scores += counts.max() / top_n
            n_scored += 1
        purities.append(scores / n_scored if n_scored else float("nan"))
    return purities
