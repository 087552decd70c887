"""Attributed semantic graph types and the short-term node ring.

Nodes are object landmarks (class + anchored center + open attribute
map); edges carry the relative geometry between two landmarks: rigid
distance, magnetic-frame heading and the full direction vector.  The
graph is undirected; each edge is stored once and its direction vector
is flipped when traversed against the stored orientation.

Node centers are bookkeeping only (anchored to the session origin for
export and evaluation); all matching reads the edge-relative geometry.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import canon
from .geometry import vector_heading_deg

MAP_FORMAT = "oltsm-map/1"

AttrValue = int | float | str


class GraphError(ValueError):
    """Graph structural invariant violated (missing node, self-loop, ...)."""


@dataclass
class LandmarkNode:
    """A map node: ordinal id, class index, anchored center, open attrs."""

    id: int
    class_id: int
    center: np.ndarray
    attrs: dict[str, AttrValue] = field(default_factory=dict)


@dataclass
class RelativeEdge:
    """Relative geometry between nodes ``a`` and ``b``.

    ``dvec`` points from ``a`` to ``b``; ``dis`` is its norm and ``yaw``
    its magnetic-frame heading in ``[0, 360)`` degrees.
    """

    a: int
    b: int
    dis: float
    yaw: float
    dvec: np.ndarray
    attrs: dict[str, AttrValue] = field(default_factory=dict)

    def oriented(self, from_node: int) -> np.ndarray:
        """Direction vector leaving ``from_node`` along this edge."""
        if from_node == self.a:
            return self.dvec
        if from_node == self.b:
            return -self.dvec
        raise GraphError(f"node {from_node} is not an endpoint of edge ({self.a},{self.b})")

    def other(self, node_id: int) -> int:
        if node_id == self.a:
            return self.b
        if node_id == self.b:
            return self.a
        raise GraphError(f"node {node_id} is not an endpoint of edge ({self.a},{self.b})")


class SemanticGraph:
    """Undirected attributed graph over landmark nodes.

    Node ids are dense and strictly increasing when auto-assigned;
    explicit ids are accepted (deserialization) but may not collide.
    """

    def __init__(self, class_table: list[str] | tuple[str, ...]):
        if not class_table:
            raise GraphError("class table must not be empty")
        self.class_table: tuple[str, ...] = tuple(class_table)
        self.nodes: dict[int, LandmarkNode] = {}
        self._adj: dict[int, dict[int, RelativeEdge]] = {}
        self._next_id = 0

    @property
    def n_classes(self) -> int:
        return len(self.class_table)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return sum(len(nbrs) for nbrs in self._adj.values()) // 2

    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def add_node(
        self,
        class_id: int,
        center,
        attrs: dict[str, AttrValue] | None = None,
        node_id: int | None = None,
    ) -> int:
        if not 0 <= class_id < self.n_classes:
            raise GraphError(f"class_id {class_id} out of range [0, {self.n_classes})")
        center = np.asarray(center, dtype=np.float64)
        if center.shape != (3,) or not np.all(np.isfinite(center)):
            raise GraphError("node center must be a finite 3-vector")
        if node_id is None:
            node_id = self._next_id
        elif node_id in self.nodes:
            raise GraphError(f"duplicate node id {node_id}")
        self.nodes[node_id] = LandmarkNode(node_id, class_id, center, dict(attrs or {}))
        self._adj[node_id] = {}
        self._next_id = max(self._next_id, node_id + 1)
        return node_id

    def add_edge(self, a: int, b: int, dvec, attrs: dict[str, AttrValue] | None = None) -> RelativeEdge:
        """Insert or replace the edge between ``a`` and ``b``.

        Distance and heading are derived from ``dvec`` (oriented a->b).
        """
        if a not in self.nodes or b not in self.nodes:
            raise GraphError(f"edge endpoints must exist, got ({a},{b})")
        if a == b:
            raise GraphError(f"self-loop on node {a}")
        dvec = np.asarray(dvec, dtype=np.float64)
        if dvec.shape != (3,) or not np.all(np.isfinite(dvec)):
            raise GraphError("dvec must be a finite 3-vector")
        edge = RelativeEdge(
            a=a,
            b=b,
            dis=float(np.linalg.norm(dvec)),
            yaw=vector_heading_deg(dvec),
            dvec=dvec.copy(),
            attrs=dict(attrs or {}),
        )
        self._adj[a][b] = edge
        self._adj[b][a] = edge
        return edge

    def remove_node(self, node_id: int) -> None:
        if node_id not in self.nodes:
            raise GraphError(f"unknown node id {node_id}")
        for nbr in list(self._adj[node_id]):
            del self._adj[nbr][node_id]
        del self._adj[node_id]
        del self.nodes[node_id]

    def edge_between(self, a: int, b: int) -> RelativeEdge | None:
        if a not in self.nodes or b not in self.nodes:
            raise GraphError(f"unknown node in pair ({a},{b})")
        return self._adj[a].get(b)

    def neighbor_ids(self, node_id: int) -> list[int]:
        if node_id not in self.nodes:
            raise GraphError(f"unknown node id {node_id}")
        return sorted(self._adj[node_id])

    def edges(self) -> list[RelativeEdge]:
        """Unique edges, ordered by unordered endpoint pair."""
        seen: dict[tuple[int, int], RelativeEdge] = {}
        for a, nbrs in self._adj.items():
            for b, edge in nbrs.items():
                seen[(min(a, b), max(a, b))] = edge
        return [seen[k] for k in sorted(seen)]

    def neighbors(self, node_id: int, max_hops: int = 1) -> dict[int, int]:
        """BFS ball of radius ``max_hops`` around ``node_id``, root excluded.

        Returns ``{node_id: hop_distance}`` in deterministic
        (hop, ascending id) order.
        """
        if node_id not in self.nodes:
            raise GraphError(f"unknown node id {node_id}")
        if max_hops < 1:
            raise GraphError("max_hops must be >= 1")
        out: dict[int, int] = {}
        frontier = [node_id]
        visited = {node_id}
        for hop in range(1, max_hops + 1):
            nxt: list[int] = []
            for nid in frontier:
                for nbr in sorted(self._adj[nid]):
                    if nbr not in visited:
                        visited.add(nbr)
                        nxt.append(nbr)
            nxt.sort()
            for nbr in nxt:
                out[nbr] = hop
            if not nxt:
                break
            frontier = nxt
        return out

    def induced_subgraph(self, ids) -> "SemanticGraph":
        """Snapshot subgraph over ``ids`` and the edges among them."""
        ids = sorted(set(ids))
        for nid in ids:
            if nid not in self.nodes:
                raise GraphError(f"unknown node id {nid}")
        sub = SemanticGraph(self.class_table)
        keep = set(ids)
        for nid in ids:
            n = self.nodes[nid]
            sub.add_node(n.class_id, n.center, n.attrs, node_id=nid)
        for nid in ids:
            for nbr, edge in self._adj[nid].items():
                if nbr in keep and nid < nbr:
                    sub.add_edge(edge.a, edge.b, edge.dvec, edge.attrs)
        return sub


class ShortTermGraph:
    """Ring of the most recently associated node ids (FIFO, capacity 5).

    Re-associating a member refreshes its recency; pushing past capacity
    evicts the member whose last association is oldest.
    """

    def __init__(self, capacity: int = 5):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._ring: deque[int] = deque()

    def __len__(self) -> int:
        return len(self._ring)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._ring

    @property
    def ids(self) -> list[int]:
        """Members ordered oldest to newest."""
        return list(self._ring)

    def push(self, node_id: int) -> int | None:
        """Record an association; returns the evicted id, if any."""
        if node_id in self._ring:
            self._ring.remove(node_id)
        self._ring.append(node_id)
        if len(self._ring) > self.capacity:
            return self._ring.popleft()
        return None

    def replace(self, old_id: int, new_id: int) -> None:
        """Swap a member id in place (merge bookkeeping); dedupes."""
        if old_id not in self._ring:
            return
        members = [new_id if nid == old_id else nid for nid in self._ring]
        self._ring.clear()
        for nid in members:
            if nid in self._ring:
                self._ring.remove(nid)
            self._ring.append(nid)

    def subgraph(self, g: SemanticGraph) -> SemanticGraph:
        return g.induced_subgraph([nid for nid in self._ring if nid in g.nodes])


# --- serialization ---------------------------------------------------------


def map_payload(g: SemanticGraph) -> dict:
    edges = []
    for e in g.edges():
        # Derive dis/yaw from the dvec as it will appear in the file, so
        # a decode/encode cycle is a byte-level fixed point.
        dvec = [canon.round_float(float(v)) for v in e.dvec]
        arr = np.asarray(dvec)
        edges.append(
            {
                "a": e.a,
                "b": e.b,
                "dis": float(np.linalg.norm(arr)),
                "yaw": vector_heading_deg(arr),
                "dvec": dvec,
                "attrs": e.attrs,
            }
        )
    return {
        "format": MAP_FORMAT,
        "class_table": list(g.class_table),
        "nodes": [
            {
                "id": n.id,
                "cls": n.class_id,
                "center": [float(v) for v in n.center],
                "attrs": n.attrs,
            }
            for n in (g.nodes[i] for i in sorted(g.nodes))
        ],
        "edges": edges,
    }


def dumps_map(g: SemanticGraph) -> str:
    """Canonical serialization: sorted keys, 9 significant digits."""
    return canon.dumps(map_payload(g), digits=9) + "\n"


def loads_map(text: str) -> SemanticGraph:
    """Load a map; ``dvec`` is authoritative, dis/yaw are re-derived.

    Stored dis/yaw values are validated against the re-derived ones at a
    tolerance compatible with the 9-digit file format.
    """
    try:
        payload = canon.loads(text)
    except ValueError as exc:
        raise canon.DataFormatError(f"map file is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != MAP_FORMAT:
        raise canon.DataFormatError(f"expected format {MAP_FORMAT!r}")
    try:
        g = SemanticGraph(payload["class_table"])
        for nd in payload["nodes"]:
            g.add_node(nd["cls"], nd["center"], nd.get("attrs") or {}, node_id=nd["id"])
        for ed in payload["edges"]:
            edge = g.add_edge(ed["a"], ed["b"], ed["dvec"], ed.get("attrs") or {})
            if abs(edge.dis - float(ed["dis"])) > 1e-5 * max(1.0, edge.dis):
                raise canon.DataFormatError(
                    f"edge ({ed['a']},{ed['b']}) dis {ed['dis']} inconsistent with dvec"
                )
            dyaw = abs(edge.yaw - float(ed["yaw"])) % 360.0
            if min(dyaw, 360.0 - dyaw) > 1e-3:
                raise canon.DataFormatError(
                    f"edge ({ed['a']},{ed['b']}) yaw {ed['yaw']} inconsistent with dvec"
                )
    except (KeyError, TypeError) as exc:
        raise canon.DataFormatError(f"malformed map payload: {exc!r}") from exc
    except GraphError as exc:
        raise canon.DataFormatError(f"invalid map content: {exc}") from exc
    return g


def save_map(g: SemanticGraph, path) -> int:
    """Write the canonical map file; returns the byte count written."""
    data = dumps_map(g).encode("utf-8")
    Path(path).write_bytes(data)
    return len(data)


def load_map(path) -> SemanticGraph:
    return loads_map(Path(path).read_text(encoding="utf-8"))
