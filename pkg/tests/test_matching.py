import itertools
import math

import numpy as np
import pytest

from oltsm.descriptor import build_index, extract_descriptor
from oltsm.graph import SemanticGraph
from oltsm.matching import (
    MatchConfig,
    descriptor_similarity,
    direction_cosine,
    euclidean_gate,
    localize,
    match_node,
    match_paths,
)

CLASSES = ["door", "sign", "pillar", "hydrant"]


def test_euclidean_gate_examples():
    sd, same = euclidean_gate([0, 0, 0], [0, 0, 0], 0.5)
    assert sd == 0.0 and same
    sd, same = euclidean_gate([0, 0, 0], [3, 4, 0], 0.5)
    assert sd == 5.0 and not same
    sd, same = euclidean_gate([0, 0, 0], [0.3, 0, 0], 0.5)
    assert same


def test_direction_cosine_examples():
    assert direction_cosine([1, 2, 3], [1, 2, 3]) == 1.0
    assert direction_cosine([1, 0, 0], [0, 1, 0]) == 0.0
    assert abs(direction_cosine([1, 1, 0], [1, 0, 0]) - 1.0 / math.sqrt(2)) < 1e-8
    # zero-vector conventions
    assert direction_cosine([0, 0, 0], [0, 0, 0]) == 1.0
    assert direction_cosine([0, 0, 0], [1, 0, 0]) == 0.0
    assert direction_cosine([1, 2, 3], [-1, -2, -3]) == -1.0


def test_descriptor_similarity_examples():
    m = np.array([[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]])
    assert descriptor_similarity(m, m) == 1.0
    assert descriptor_similarity(m, -m) == -1.0
    assert abs(descriptor_similarity([[1, 0, 0]], [[1, 1, 0]]) - 1.0 / math.sqrt(2)) < 1e-8
    assert descriptor_similarity(np.zeros((0, 3)), np.zeros((0, 3))) == 0.0
    with pytest.raises(ValueError):
        descriptor_similarity([[1, 0, 0]], [[1, 0, 0], [0, 1, 0]])


def test_descriptor_similarity_symmetry_fuzz():
    rng = np.random.default_rng(41)
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        m = rng.normal(0, 2, (n, 3))
        nn = rng.normal(0, 2, (n, 3))
        assert abs(descriptor_similarity(m, nn) - descriptor_similarity(nn, m)) < 1e-12


def chain_graph(classes, points):
    g = SemanticGraph(CLASSES)
    ids = [g.add_node(c, p) for c, p in zip(classes, points)]
    for a, b in zip(ids[:-1], ids[1:]):
        g.add_edge(a, b, np.asarray(points[b], float) - np.asarray(points[a], float))
    return g, ids


def test_match_paths_self_pairs_everything():
    g, ids = chain_graph([0, 1, 2, 1], [[0, 0, 0], [1, 0, 0], [2, 1, 0], [3, 1, 0]])
    d = extract_descriptor(g, ids[0], 3)
    pairs = match_paths(d, d)
    assert pairs == [(i, i) for i in range(d.n_paths)]


def test_match_paths_disjoint_classes():
    g1, _ = chain_graph([0, 0, 0], [[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    g2, _ = chain_graph([1, 1, 1], [[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    d1 = extract_descriptor(g1, 0, 3)
    d2 = extract_descriptor(g2, 0, 3)
    assert match_paths(d1, d2) == []


def test_match_paths_mismatched_parameters():
    g, _ = chain_graph([0, 1], [[0, 0, 0], [1, 0, 0]])
    d2 = extract_descriptor(g, 0, 2)
    d3 = extract_descriptor(g, 0, 3)
    with pytest.raises(ValueError):
        match_paths(d2, d3)


def test_match_paths_tie_broken_by_direction_cosine():
    # Two query paths share one encoding with a single db path; the pair
    # with the better-aligned directions must win.  Cross-checked against
    # a brute-force assignment over all one-to-one pairings.
    g = SemanticGraph(CLASSES)
    root = g.add_node(0, [0, 0, 0])
    up = g.add_node(1, [0, 2, 0])      # heads +y
    right = g.add_node(1, [2, 0, 0])   # heads +x
    g.add_edge(root, up, [0.0, 2.0, 0.0])
    g.add_edge(root, right, [2.0, 0.0, 0.0])
    qd = extract_descriptor(g, root, 2)
    assert qd.n_paths == 2

    db = SemanticGraph(CLASSES)
    db_root = db.add_node(0, [0, 0, 0])
    db_right = db.add_node(1, [2.1, 0.2, 0])
    db.add_edge(db_root, db_right, [2.1, 0.2, 0.0])
    dd = extract_descriptor(db, db_root, 2)

    pairs = match_paths(qd, dd)
    assert len(pairs) == 1
    qi, di = pairs[0]
    # brute force: pick the single pairing with the best cosine
    best = max(
        range(qd.n_paths),
        key=lambda i: float(
            np.dot(qd.des_d[i].ravel(), dd.des_d[0].ravel())
            / (np.linalg.norm(qd.des_d[i]) * np.linalg.norm(dd.des_d[0]))
        ),
    )
    assert qi == best
    # the +x query path is the aligned one
    assert tuple(qd.paths[qi].nodes) == (root, right)


def test_match_node_self_similarity_exact():
    rng = np.random.default_rng(43)
    g = SemanticGraph(CLASSES)
    ids = [g.add_node(int(rng.integers(len(CLASSES))), rng.normal(0, 4, 3)) for _ in range(10)]
    for i, j in itertools.combinations(ids, 2):
        if rng.random() < 0.45:
            g.add_edge(i, j, rng.normal(0, 3, 3))
    index = build_index(g, 3)
    for nid in ids:
        ranked = match_node(index.by_id[nid], index)
        assert ranked[0].db_id == nid
        assert ranked[0].score == 1.0


def test_match_node_class_absent_gives_empty_list():
    g, _ = chain_graph([0, 1, 2], [[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    q = SemanticGraph(CLASSES)
    lone = q.add_node(3, [0, 0, 0])
    qd = extract_descriptor(q, lone, 3)
    assert match_node(qd, build_index(g, 3)) == []


def test_sign_constraint_rejects_counter_oriented_paths():
    # db twin has the same classes but a reversed first hop: that pair
    # must contribute nothing, leaving score 0.
    g, ids = chain_graph([0, 1], [[0, 0, 0], [1.5, 0, 0]])
    q = extract_descriptor(g, ids[0], 2)
    g2 = SemanticGraph(CLASSES)
    a = g2.add_node(0, [0, 0, 0])
    b = g2.add_node(1, [-1.5, 0, 0])
    g2.add_edge(a, b, [-1.5, 0.0, 0.0])
    ranked = match_node(q, build_index(g2, 2))
    assert len(ranked) == 1
    assert ranked[0].score == 0.0
    assert ranked[0].diagnostics["n_matched_paths"] == 0


def test_composite_scoring_rotation_invariant_when_corotated():
    rng = np.random.default_rng(47)
    g = SemanticGraph(CLASSES)
    ids = [g.add_node(int(rng.integers(len(CLASSES))), rng.normal(0, 4, 3)) for _ in range(8)]
    for i, j in itertools.combinations(ids, 2):
        if rng.random() < 0.5:
            g.add_edge(i, j, rng.normal(0, 3, 3))
    ang = math.radians(61.0)
    rot = np.array(
        [[math.cos(ang), -math.sin(ang), 0.0], [math.sin(ang), math.cos(ang), 0.0], [0.0, 0.0, 1.0]]
    )
    g2 = SemanticGraph(CLASSES)
    for nid in ids:
        n = g.nodes[nid]
        g2.add_node(n.class_id, rot @ n.center, n.attrs, node_id=nid)
    for e in g.edges():
        g2.add_edge(e.a, e.b, rot @ e.dvec)
    idx1 = build_index(g, 3)
    idx2 = build_index(g2, 3)
    for nid in ids:
        r1 = match_node(idx1.by_id[nid], idx1)
        r2 = match_node(idx2.by_id[nid], idx2)
        assert [m.db_id for m in r1] == [m.db_id for m in r2]
        for m1, m2 in zip(r1, r2):
            assert abs(m1.score - m2.score) < 1e-9
            assert abs(
                m1.diagnostics["group_similarity"] - m2.diagnostics["group_similarity"]
            ) < 1e-9


def test_localize_self_query_accepts_with_unit_score():
    rng = np.random.default_rng(53)
    g = SemanticGraph(CLASSES)
    ids = [g.add_node(int(rng.integers(len(CLASSES))), rng.normal(0, 5, 3)) for _ in range(12)]
    for i, j in itertools.combinations(ids, 2):
        if rng.random() < 0.35:
            g.add_edge(i, j, rng.normal(0, 3, 3))
    result = localize(g, g, MatchConfig())
    assert result.accepted
    assert result.scene_score == 1.0
    assert all(m.query_id == m.db_id for m in result.matches)
    assert all(m.score == 1.0 for m in result.matches)


def test_localize_disjoint_world_rejects():
    g1, _ = chain_graph([0, 1, 0, 1], [[0, 0, 0], [1, 0, 0], [2, 0.5, 0], [3, 0, 0]])
    g2, _ = chain_graph([2, 3, 2, 3], [[0, 0, 0], [0, 1, 0], [0.5, 2, 0], [0, 3, 0]])
    result = localize(g1, g2, MatchConfig())
    assert not result.accepted
    assert result.scene_score == 0.0
    assert result.matches == []


def test_localize_empty_query_is_an_error():
    g, _ = chain_graph([0, 1], [[0, 0, 0], [1, 0, 0]])
    with pytest.raises(ValueError):
        localize(SemanticGraph(CLASSES), g, MatchConfig())


def test_match_config_validation():
    with pytest.raises(ValueError):
        MatchConfig(tau_accept=0.0)
    with pytest.raises(ValueError):
        MatchConfig(query_radius=1, path_len=3)
    with pytest.raises(ValueError):
        MatchConfig(duplicate_gate=-1.0)


def geometric_world(rng, n=20, box=12.0, connect=4.5):
    g = SemanticGraph(CLASSES)
    pts = rng.uniform(0, box, (n, 3))
    pts[:, 2] = rng.uniform(0, 2.0, n)
    ids = [g.add_node(int(rng.integers(len(CLASSES))), pts[i]) for i in range(n)]
    for i, j in itertools.combinations(range(n), 2):
        if np.linalg.norm(pts[i] - pts[j]) < connect:
            g.add_edge(ids[i], ids[j], pts[j] - pts[i])
    return g, ids, pts


def test_scene_score_degrades_monotonically_with_dropout():
    # Mean scene score over 30 seeds must be non-increasing (margin 0.02)
    # as nodes drop out of the query graph.
    drop_rates = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    means = []
    cfg = MatchConfig()
    for p_drop in drop_rates:
        scores = []
        for seed in range(30):
            rng = np.random.default_rng(1000 + seed)
            g, ids, pts = geometric_world(rng)
            index = build_index(g, cfg.path_len)
            keep = [nid for nid in ids if rng.random() >= p_drop]
            if not keep:
                scores.append(0.0)
                continue
            query = g.induced_subgraph(keep)
            result = localize(query, index, cfg)
            scores.append(result.scene_score)
        means.append(float(np.mean(scores)))
    assert means[0] == 1.0
    for lo, hi in zip(means[1:], means[:-1]):
        assert lo <= hi + 0.02, f"dropout sweep not monotone: {means}"
