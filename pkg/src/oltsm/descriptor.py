"""Per-node scene-graph descriptors from walk paths through the map.

Each node is described by the set of simple paths of a fixed length
``R`` (counted in nodes) rooted at it.  A path contributes two aligned
pieces: an integer encoding of its class sequence, and the sequence of
magnetic-frame direction vectors along its hops.  Dead-end paths are
padded with a reserved class symbol (index ``k``) and zero vectors so
all entries stay comparable.

Enumeration is exhaustive over all neighbors at every level; an
optional sampled mode (fixed seed) exists for very high-degree nodes
and is off by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import GraphError, SemanticGraph


@dataclass(frozen=True)
class WalkPath:
    """One rooted simple path: visited ids, padded classes, hop vectors."""

    nodes: tuple[int, ...]
    classes: tuple[int, ...]
    vectors: np.ndarray  # (R-1, 3), zero rows on padded hops

    def __post_init__(self) -> None:
        if len(self.classes) != len(self.vectors) + 1:
            raise ValueError("class sequence must be one longer than vector list")


@dataclass
class SceneDescriptor:
    """Vector group describing one root node.

    ``des_s[i]`` is the class-sequence encoding of path ``i`` and
    ``des_d[i]`` its (R-1, 3) stack of direction vectors; entries are in
    canonical order (ascending encoding, then node ids).
    """

    root: int
    root_class: int
    path_len: int
    n_classes: int
    des_s: tuple[int, ...]
    des_d: np.ndarray  # (n_paths, R-1, 3)
    paths: tuple[WalkPath, ...]
    _flat: tuple[tuple[float, ...], ...] | None = field(default=None, repr=False)

    @property
    def n_paths(self) -> int:
        return len(self.des_s)

    def flat_vectors(self) -> tuple[tuple[float, ...], ...]:
        """Per-path flattened hop vectors as python floats (match hot path)."""
        if self._flat is None:
            self._flat = tuple(tuple(float(v) for v in vecs.ravel()) for vecs in self.des_d)
        return self._flat


def encode_confidence(classes, n_classes: int) -> int:
    """Positional encoding of a class sequence, base ``n_classes + 1``.

    The padding symbol (index ``n_classes``) is part of the alphabet, so
    the code is injective over padded sequences of a fixed length.
    """
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    base = n_classes + 1
    code = 0
    for c in classes:
        c = int(c)
        if not 0 <= c <= n_classes:
            raise ValueError(f"class index {c} out of range [0, {n_classes}]")
        code = code * base + c
    return code


def enumerate_paths(g: SemanticGraph, root: int, path_len: int) -> list[WalkPath]:
    """All simple paths of exactly ``path_len`` nodes starting at ``root``.

    Paths that dead-end early are padded.  Output is in canonical order:
    ascending class encoding, then node-id tuple.
    """
    if root not in g.nodes:
        raise GraphError(f"unknown root node {root}")
    if path_len < 2:
        raise ValueError("path_len must be >= 2")
    paths: list[WalkPath] = []
    pad_class = g.n_classes

    def extend(nodes: list[int], vectors: list[np.ndarray]) -> None:
        if len(nodes) == path_len:
            paths.append(_finish(g, nodes, vectors, path_len, pad_class))
            return
        tail = nodes[-1]
        nxt = [nbr for nbr in g.neighbor_ids(tail) if nbr not in nodes]
        if not nxt:
            paths.append(_finish(g, nodes, vectors, path_len, pad_class))
            return
        for nbr in nxt:
            edge = g.edge_between(tail, nbr)
            assert edge is not None
            nodes.append(nbr)
            vectors.append(edge.oriented(tail))
            extend(nodes, vectors)
            nodes.pop()
            vectors.pop()

    extend([root], [])
    return _canonical(g, paths)


def sample_paths(
    g: SemanticGraph, root: int, path_len: int, n_walks: int, seed: int = 0
) -> list[WalkPath]:
    """Randomly walked subset of the simple paths (deduplicated, seeded)."""
    if root not in g.nodes:
        raise GraphError(f"unknown root node {root}")
    if path_len < 2:
        raise ValueError("path_len must be >= 2")
    rng = np.random.default_rng(seed)
    pad_class = g.n_classes
    found: dict[tuple[int, ...], WalkPath] = {}
    for _ in range(n_walks):
        nodes = [root]
        vectors: list[np.ndarray] = []
        while len(nodes) < path_len:
            options = [nbr for nbr in g.neighbor_ids(nodes[-1]) if nbr not in nodes]
            if not options:
                break
            nbr = options[int(rng.integers(len(options)))]
            edge = g.edge_between(nodes[-1], nbr)
            assert edge is not None
            vectors.append(edge.oriented(nodes[-1]))
            nodes.append(nbr)
        key = tuple(nodes)
        if key not in found:
            found[key] = _finish(g, nodes, vectors, path_len, pad_class)
    return _canonical(g, list(found.values()))


def _finish(
    g: SemanticGraph,
    nodes: list[int],
    vectors: list[np.ndarray],
    path_len: int,
    pad_class: int,
) -> WalkPath:
    classes = [g.nodes[nid].class_id for nid in nodes]
    classes += [pad_class] * (path_len - len(nodes))
    vecs = np.zeros((path_len - 1, 3), dtype=np.float64)
    for i, v in enumerate(vectors):
        vecs[i] = v
    return WalkPath(tuple(nodes), tuple(classes), vecs)


def _canonical(g: SemanticGraph, paths: list[WalkPath]) -> list[WalkPath]:
    return sorted(paths, key=lambda p: (encode_confidence(p.classes, g.n_classes), p.nodes))


def extract_descriptor(
    g: SemanticGraph,
    root: int,
    path_len: int = 3,
    sample_walks: int | None = None,
    seed: int = 0,
) -> SceneDescriptor:
    """Build the scene descriptor for ``root`` from its walk paths."""
    if sample_walks is None:
        paths = enumerate_paths(g, root, path_len)
    else:
        paths = sample_paths(g, root, path_len, sample_walks, seed)
    codes = tuple(encode_confidence(p.classes, g.n_classes) for p in paths)
    des_d = np.stack([p.vectors for p in paths]) if paths else np.zeros((0, path_len - 1, 3))
    return SceneDescriptor(
        root=root,
        root_class=g.nodes[root].class_id,
        path_len=path_len,
        n_classes=g.n_classes,
        des_s=codes,
        des_d=des_d,
        paths=tuple(paths),
    )


@dataclass
class DescriptorIndex:
    """Descriptors for every node of a graph, grouped by root class."""

    path_len: int
    n_classes: int
    by_id: dict[int, SceneDescriptor]
    by_class: dict[int, list[int]]


def build_index(g: SemanticGraph, path_len: int = 3) -> DescriptorIndex:
    by_id: dict[int, SceneDescriptor] = {}
    by_class: dict[int, list[int]] = {}
    for nid in g.node_ids():
        desc = extract_descriptor(g, nid, path_len)
        by_id[nid] = desc
        by_class.setdefault(desc.root_class, []).append(nid)
    return DescriptorIndex(path_len=path_len, n_classes=g.n_classes, by_id=by_id, by_class=by_class)
