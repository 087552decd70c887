"""Multi-constraint matching of scene-graph descriptors and localization.

A query node is compared against database candidates of the same class.
Candidate paths correspond when their class-sequence encodings are
equal; corresponding paths must point the same way (every per-hop
direction cosine >= 0), and surviving pairs are scored by the
normalized dot product of their stacked direction vectors.  The node
score is the matched fraction of query paths times that (clamped)
similarity, so it stays in [0, 1] and each constraint is separately
diagnosable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .descriptor import DescriptorIndex, SceneDescriptor, build_index, extract_descriptor
from .graph import SemanticGraph


@dataclass(frozen=True)
class MatchConfig:
    """Knobs for descriptor matching and localization acceptance."""

    tau_accept: float = 0.6
    duplicate_gate: float = 0.5
    path_len: int = 3
    query_radius: int = 5

    def __post_init__(self) -> None:
        if not 0.0 < self.tau_accept <= 1.0:
            raise ValueError("tau_accept must be in (0, 1]")
        if self.duplicate_gate <= 0.0:
            raise ValueError("duplicate_gate must be positive")
        if self.path_len < 2:
            raise ValueError("path_len must be >= 2")
        if self.query_radius < self.path_len - 1:
            raise ValueError("query_radius must cover path_len - 1 hops")


@dataclass
class NodeMatch:
    """One query-to-database node correspondence with diagnostics."""

    query_id: int
    db_id: int
    score: float
    diagnostics: dict = field(default_factory=dict)


@dataclass
class LocalizationResult:
    """Ranked correspondences plus the scene-level accept decision."""

    matches: list[NodeMatch]
    accepted: bool
    scene_score: float

    def payload(self, query_session: str = "") -> dict:
        return {
            "query_session": query_session,
            "accepted": self.accepted,
            "scene_score": self.scene_score,
            "matches": [
                {"q": m.query_id, "db": m.db_id, "score": m.score, "diagnostics": m.diagnostics}
                for m in self.matches
            ],
        }


def euclidean_gate(a, b, gate: float) -> tuple[float, bool]:
    """Euclidean distance between two points and the same-node verdict.

    Returns ``(distance, same)`` where ``same`` means the points are
    within ``gate`` and should be treated as one physical node.
    """
    a = np.asarray(a, dtype=np.float64).reshape(3)
    b = np.asarray(b, dtype=np.float64).reshape(3)
    sd = float(np.linalg.norm(a - b))
    return sd, sd < gate


def direction_cosine(u, v) -> float:
    """Cosine of the angle between two vectors.

    Zero-vector conventions keep the result total: two zero vectors
    (padding against padding) give 1, a single zero vector gives 0.
    Identical inputs return exactly 1.0.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    nu = float(np.dot(u, u))
    nv = float(np.dot(v, v))
    if nu == 0.0 and nv == 0.0:
        return 1.0
    if nu == 0.0 or nv == 0.0:
        return 0.0
    if np.array_equal(u, v):
        return 1.0
    if np.array_equal(u, -v):
        return -1.0
    c = float(np.dot(u, v)) / (math.sqrt(nu) * math.sqrt(nv))
    return max(-1.0, min(1.0, c))


def descriptor_similarity(m_group, n_group) -> float:
    """Normalized dot product between two aligned vector groups.

    Groups are sequences of vectors (flattened internally).  Empty
    groups score 0; identical groups score exactly 1, negated groups
    exactly -1.
    """
    m = np.asarray(m_group, dtype=np.float64).reshape(-1)
    n = np.asarray(n_group, dtype=np.float64).reshape(-1)
    if m.shape != n.shape:
        raise ValueError(f"vector groups differ in length: {m.shape} vs {n.shape}")
    if m.size == 0:
        return 0.0
    sm = float(np.dot(m, m))
    sn = float(np.dot(n, n))
    if sm == 0.0 and sn == 0.0:
        return 1.0
    if sm == 0.0 or sn == 0.0:
        return 0.0
    if np.array_equal(m, n):
        return 1.0
    if np.array_equal(m, -n):
        return -1.0
    s = float(np.dot(m, n)) / (math.sqrt(sm) * math.sqrt(sn))
    return max(-1.0, min(1.0, s))


def _pair_cosines(qflat: tuple[float, ...], dflat: tuple[float, ...], hops: int) -> list[float]:
    """Per-hop direction cosines between two flattened path vector rows."""
    out = []
    for h in range(hops):
        i = 3 * h
        ux, uy, uz = qflat[i], qflat[i + 1], qflat[i + 2]
        vx, vy, vz = dflat[i], dflat[i + 1], dflat[i + 2]
        nu = ux * ux + uy * uy + uz * uz
        nv = vx * vx + vy * vy + vz * vz
        if nu == 0.0 and nv == 0.0:
            out.append(1.0)
        elif nu == 0.0 or nv == 0.0:
            out.append(0.0)
        else:
            c = (ux * vx + uy * vy + uz * vz) / math.sqrt(nu * nv)
            out.append(max(-1.0, min(1.0, c)))
    return out


def match_paths(qd: SceneDescriptor, dd: SceneDescriptor) -> list[tuple[int, int]]:
    """Maximal one-to-one pairing of equal-encoding paths.

    Within an encoding group, competition is resolved by the best mean
    direction cosine, then canonical order.  Returned pairs are sorted
    by query path index.
    """
    if qd.path_len != dd.path_len or qd.n_classes != dd.n_classes:
        raise ValueError(
            f"descriptors not comparable: R {qd.path_len} vs {dd.path_len}, "
            f"k {qd.n_classes} vs {dd.n_classes}"
        )
    d_groups: dict[int, list[int]] = {}
    for j, code in enumerate(dd.des_s):
        d_groups.setdefault(code, []).append(j)
    qflat = qd.flat_vectors()
    dflat = dd.flat_vectors()
    hops = qd.path_len - 1
    pairs: list[tuple[int, int]] = []
    q_groups: dict[int, list[int]] = {}
    for i, code in enumerate(qd.des_s):
        q_groups.setdefault(code, []).append(i)
    for code, q_idx in q_groups.items():
        d_idx = d_groups.get(code)
        if not d_idx:
            continue
        if len(q_idx) == 1 and len(d_idx) == 1:
            pairs.append((q_idx[0], d_idx[0]))
            continue
        ranked = sorted(
            ((i, j) for i in q_idx for j in d_idx),
            key=lambda ij: (
                -sum(_pair_cosines(qflat[ij[0]], dflat[ij[1]], hops)) / hops,
                ij[0],
                ij[1],
            ),
        )
        used_q: set[int] = set()
        used_d: set[int] = set()
        for i, j in ranked:
            if i not in used_q and j not in used_d:
                pairs.append((i, j))
                used_q.add(i)
                used_d.add(j)
    pairs.sort()
    return pairs


def score_pair(qd: SceneDescriptor, dd: SceneDescriptor) -> tuple[float, dict]:
    """Composite score of one query descriptor against one candidate."""
    pairs = match_paths(qd, dd)
    qflat = qd.flat_vectors()
    dflat = dd.flat_vectors()
    hops = qd.path_len - 1
    surviving: list[tuple[int, int]] = []
    cos_sum = 0.0
    n_structural = 0
    for i, j in pairs:
        cosines = _pair_cosines(qflat[i], dflat[j], hops)
        if any(c < 0.0 for c in cosines):
            continue
        surviving.append((i, j))
        cos_sum += sum(cosines) / hops
        if len(qd.paths[i].nodes) >= 2:
            n_structural += 1
    n_query = qd.n_paths
    if not surviving or n_query == 0:
        diag = {
            "n_query_paths": n_query,
            "n_matched_paths": 0,
            "n_structural_matched": 0,
            "matched_fraction": 0.0,
            "mean_direction_cosine": 0.0,
            "group_similarity": 0.0,
        }
        return 0.0, diag
    m_flat: list[float] = []
    n_flat: list[float] = []
    for i, j in surviving:
        m_flat.extend(qflat[i])
        n_flat.extend(dflat[j])
    sim = descriptor_similarity(
        np.asarray(m_flat, dtype=np.float64), np.asarray(n_flat, dtype=np.float64)
    )
    fraction = len(surviving) / n_query
    score = fraction * max(sim, 0.0)
    diag = {
        "n_query_paths": n_query,
        "n_matched_paths": len(surviving),
        "n_structural_matched": n_structural,
        "matched_fraction": fraction,
        "mean_direction_cosine": cos_sum / len(surviving),
        "group_similarity": sim,
    }
    return score, diag


def match_node(qd: SceneDescriptor, index: DescriptorIndex, cfg: MatchConfig | None = None) -> list[NodeMatch]:
    """Rank database candidates of the query's class by composite score."""
    if cfg is None:
        cfg = MatchConfig()
    if index.path_len != qd.path_len or index.n_classes != qd.n_classes:
        raise ValueError("query descriptor and index built with different (R, k)")
    out: list[NodeMatch] = []
    for db_id in index.by_class.get(qd.root_class, []):
        score, diag = score_pair(qd, index.by_id[db_id])
        out.append(NodeMatch(query_id=qd.root, db_id=db_id, score=score, diagnostics=diag))
    out.sort(key=lambda m: (-m.score, m.db_id))
    return out


def localize(
    query_graph: SemanticGraph,
    db: SemanticGraph | DescriptorIndex,
    cfg: MatchConfig | None = None,
    query_ids=None,
) -> LocalizationResult:
    """Match every query node against the database and decide acceptance.

    Query descriptors are built over each node's ``query_radius``-hop
    neighborhood.  The scene score is the matched-fraction-weighted mean
    of the per-node top-1 scores.
    """
    if cfg is None:
        cfg = MatchConfig()
    if query_graph.n_nodes == 0:
        raise ValueError("query graph is empty")
    index = db if isinstance(db, DescriptorIndex) else build_index(db, cfg.path_len)
    roots = sorted(query_ids) if query_ids is not None else query_graph.node_ids()
    tops: list[NodeMatch] = []
    weight_sum = 0.0
    weighted = 0.0
    for root in roots:
        ball = {root} | set(query_graph.neighbors(root, cfg.query_radius))
        sub = query_graph.induced_subgraph(ball)
        qd = extract_descriptor(sub, root, cfg.path_len)
        ranked = match_node(qd, index, cfg)
        if not ranked:
            continue
        top = ranked[0]
        # A top candidate without a single structural matched path is no
        # evidence at all (isolated nodes of one class are mutually
        # indistinguishable); it contributes no correspondence.
        if top.diagnostics["n_structural_matched"] < 1:
            continue
        tops.append(top)
        frac = top.diagnostics["matched_fraction"]
        weight_sum += frac
        weighted += frac * top.score
    scene = weighted / weight_sum if weight_sum > 0.0 else 0.0
    tops.sort(key=lambda m: (-m.score, m.query_id, m.db_id))
    return LocalizationResult(matches=tops, accepted=scene >= cfg.tau_accept, scene_score=scene)
