"""Frame-by-frame map building with hierarchical memory management.

Each detection frame is filtered (confidence, static classes), its
surviving observations are expressed in the magnetic frame and
associated to the short-term graph by class plus gated distance.
Unmatched observations become new nodes wired to everything co-visible
in the frame; the hierarchy update then matches those fresh nodes
against the working graph (the long-term neighborhood around the
short-term members) and either merges them into existing landmarks or
inserts them into the long-term graph.

Robot motion between frames is absorbed by anchored bookkeeping: node
centers live in a session-anchored magnetic frame (origin = robot pose
at the first frame) and the mapper dead-reckons its own displacement
from re-observed landmarks, which is the same relative-vector chaining
that :func:`oltsm.geometry.propagate_landmark` performs for a single
landmark pair, telescoped across the session.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import canon, descriptor, matching
from .geometry import Extrinsics, Point3, body_to_magnetic, camera_to_body, normalize_yaw_deg
from .graph import SemanticGraph, ShortTermGraph

log = logging.getLogger(__name__)

STREAM_SCHEMA_HINT = (
    'header {"session","extrinsics":{"R":[9],"T":[3]},"classes":[...]} then '
    'frames {"t","yaw_deg","obs":[{"cls","conf","center_cam":[x,y,z],"color"?}]}'
)


class StreamFormatError(canon.DataFormatError):
    """Detection stream line does not match the JSONL schema."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"stream line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class ObjectObservation:
    """One detected object in one frame (camera-frame center)."""

    class_id: int
    confidence: float
    center_cam: Point3
    color: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.class_id < 0:
            raise ValueError(f"class_id {self.class_id} must be >= 0")


@dataclass(frozen=True)
class DetectionFrame:
    t: float
    yaw_deg: float
    observations: tuple[ObjectObservation, ...]


@dataclass(frozen=True)
class StreamHeader:
    session: str
    extrinsics: Extrinsics
    classes: tuple[str, ...]


@dataclass(frozen=True)
class AssociationConfig:
    """Mapping thresholds; defaults follow the shipped corridor setup."""

    gate_distance: float = 1.0
    min_confidence: float = 0.5
    static_class_allowlist: frozenset[int] | None = None
    edge_max_distance: float = 10.0
    tau_map: float = 0.8
    hierarchy_stride: int = 1
    wg_radius: int = 3
    stg_capacity: int = 5
    lost_recovery: bool = True
    #: bound on robot travel between consecutive frames, used only to
    #: widen the search for the displacement-correcting bridge pair
    max_frame_motion: float = 1.0

    def __post_init__(self) -> None:
        if self.gate_distance <= 0.0:
            raise ValueError("gate_distance must be positive")
        if self.max_frame_motion < 0.0:
            raise ValueError("max_frame_motion must be non-negative")
        if self.edge_max_distance < self.gate_distance:
            raise ValueError("edge_max_distance must be >= gate_distance")
        if not 0.0 < self.tau_map <= 1.0:
            raise ValueError("tau_map must be in (0, 1]")
        if self.hierarchy_stride < 1 or self.wg_radius < 1 or self.stg_capacity < 1:
            raise ValueError("stride, radius and capacity must be >= 1")


@dataclass
class FrameReport:
    """What one frame did to the map.

    ``assignments[i]`` is the final node id for observation ``i`` (after
    any same-frame merge) or ``None`` if it was filtered out.
    """

    frame_index: int
    t: float
    new_nodes: list[int] = field(default_factory=list)
    matched: list[tuple[int, int]] = field(default_factory=list)
    new_edges: list[tuple[int, int]] = field(default_factory=list)
    dropped: list[tuple[int, str]] = field(default_factory=list)
    inserted: list[int] = field(default_factory=list)
    merged: list[tuple[int, int]] = field(default_factory=list)
    assignments: list[int | None] = field(default_factory=list)


@dataclass
class HierarchyReport:
    inserted: list[int] = field(default_factory=list)
    merged: list[tuple[int, int]] = field(default_factory=list)


def build_working_graph(ltg: SemanticGraph, stg_ids, radius: int = 3) -> SemanticGraph:
    """Working graph: BFS balls in the long-term graph around STG roots.

    Roots are the STG members that already exist in the long-term
    graph; members still pending contribute nothing.
    """
    keep: set[int] = set()
    for root in stg_ids:
        if root in ltg.nodes:
            keep.add(root)
            keep.update(ltg.neighbors(root, radius))
    return ltg.induced_subgraph(keep)


class TopologicalMapper:
    """Single-writer mapping state over one detection stream."""

    def __init__(
        self,
        class_table,
        extrinsics: Extrinsics,
        assoc: AssociationConfig | None = None,
        match_cfg: matching.MatchConfig | None = None,
    ):
        self.assoc = assoc or AssociationConfig()
        self.match_cfg = match_cfg or matching.MatchConfig()
        self.extrinsics = extrinsics
        self.graph = SemanticGraph(class_table)
        self.ltg_ids: set[int] = set()
        self.stg = ShortTermGraph(self.assoc.stg_capacity)
        self._pending: list[int] = []
        self._pending_obs_mag: dict[int, np.ndarray] = {}
        self._obs_count: dict[int, int] = {}
        self._merged_into: dict[int, int] = {}
        self._disp = np.zeros(3)
        self._frame_index = 0
        self._last_t: float | None = None
        self._frame_had_assoc = False

    # -- public views ------------------------------------------------------

    def ltg_view(self) -> SemanticGraph:
        """Snapshot of the long-term graph (pending nodes excluded)."""
        return self.graph.induced_subgraph(self.ltg_ids)

    def working_graph(self) -> SemanticGraph:
        return build_working_graph(self.ltg_view(), self.stg.ids, self.assoc.wg_radius)

    def canonical_id(self, node_id: int) -> int:
        """Resolve a node id through any merges it went through."""
        while node_id in self._merged_into:
            node_id = self._merged_into[node_id]
        return node_id

    @property
    def merge_remap(self) -> dict[int, int]:
        """Raw merge history (old id -> immediate replacement)."""
        return dict(self._merged_into)

    # -- frame processing ----------------------------------------------------

    def process_frame(self, frame: DetectionFrame) -> FrameReport:
        if self.extrinsics is None:
            raise ValueError("session extrinsics not loaded")
        if self._last_t is not None and frame.t <= self._last_t:
            raise ValueError(f"out-of-order frame timestamp {frame.t} after {self._last_t}")
        self._last_t = frame.t
        report = FrameReport(frame_index=self._frame_index, t=frame.t)
        report.assignments = [None] * len(frame.observations)
        yaw = normalize_yaw_deg(frame.yaw_deg)

        kept: list[int] = []
        obs_mag: dict[int, np.ndarray] = {}
        for i, obs in enumerate(frame.observations):
            if obs.confidence < self.assoc.min_confidence:
                report.dropped.append((i, "confidence"))
                continue
            allow = self.assoc.static_class_allowlist
            if allow is not None and obs.class_id not in allow:
                report.dropped.append((i, "class"))
                continue
            if obs.class_id >= self.graph.n_classes:
                raise ValueError(f"observation class {obs.class_id} outside class table")
            body = camera_to_body(obs.center_cam, self.extrinsics)
            obs_mag[i] = body_to_magnetic(body, yaw).as_array()
            kept.append(i)

        stg_members = [nid for nid in self.stg.ids if nid in self.graph.nodes]
        matched = self._associate(frame, kept, obs_mag, stg_members, report)

        # Refine the dead-reckoned displacement from every association.
        if matched:
            corrections = [self.graph.nodes[nid].center - obs_mag[i] for i, nid in matched]
            self._disp = np.mean(corrections, axis=0)
            self._frame_had_assoc = True
        else:
            self._frame_had_assoc = False

        for i, nid in matched:
            node = self.graph.nodes[nid]
            n = self._obs_count.get(nid, 1)
            node.center = (node.center * n + obs_mag[i] + self._disp) / (n + 1)
            self._obs_count[nid] = n + 1
            obs = frame.observations[i]
            if obs.color is not None and "color" not in node.attrs:
                node.attrs["color"] = obs.color
            report.assignments[i] = nid

        observed: list[tuple[int, int]] = list(matched)
        for i in kept:
            if report.assignments[i] is not None:
                continue
            obs = frame.observations[i]
            attrs = {"color": obs.color} if obs.color is not None else None
            nid = self.graph.add_node(obs.class_id, obs_mag[i] + self._disp, attrs)
            self._obs_count[nid] = 1
            self._pending.append(nid)
            self._pending_obs_mag[nid] = obs_mag[i]
            report.new_nodes.append(nid)
            report.assignments[i] = nid
            observed.append((i, nid))

        self._wire_new_edges(report, obs_mag, observed)

        observed.sort(key=lambda pair: pair[0])
        for _, nid in observed:
            self.stg.push(nid)

        if self._pending and self._frame_index % self.assoc.hierarchy_stride == 0:
            hier = self.update_hierarchy()
            report.inserted = hier.inserted
            report.merged = hier.merged
            report.assignments = [
                None if nid is None else self.canonical_id(nid) for nid in report.assignments
            ]
        self._frame_index += 1
        return report

    def _associate(
        self,
        frame: DetectionFrame,
        kept: list[int],
        obs_mag: dict[int, np.ndarray],
        stg_members: list[int],
        report: FrameReport,
    ) -> list[tuple[int, int]]:
        """Greedy one-to-one association of observations to STG nodes.

        A first pass finds the single best bridge pair to correct the
        displacement estimate; the second pass assigns with the
        corrected anchor positions.
        """
        gate = self.assoc.gate_distance

        def candidate_pairs(disp: np.ndarray, radius: float) -> list[tuple[float, int, int]]:
            out = []
            for i in kept:
                cls = frame.observations[i].class_id
                anchored = obs_mag[i] + disp
                for nid in stg_members:
                    node = self.graph.nodes[nid]
                    if node.class_id != cls:
                        continue
                    sd, same = matching.euclidean_gate(anchored, node.center, radius)
                    if same:
                        out.append((sd, i, nid))
            out.sort()
            return out

        def greedy(pairs: list[tuple[float, int, int]]) -> list[tuple[int, int]]:
            matched: list[tuple[int, int]] = []
            used_obs: set[int] = set()
            used_node: set[int] = set()
            for _, i, nid in pairs:
                if i in used_obs or nid in used_node:
                    continue
                matched.append((i, nid))
                used_obs.add(i)
                used_node.add(nid)
            matched.sort()
            return matched

        if not kept or not stg_members:
            return []
        # The stale displacement is off by up to one frame of motion.  A
        # bridge pair inside a widened radius proposes the correction, but
        # a single coincident pair cannot distinguish robot motion from a
        # different landmark, so a correction beyond the strict gate is
        # only accepted when at least two corrected pairs agree.
        matched = greedy(candidate_pairs(self._disp, gate))
        for _, bi, bn in candidate_pairs(self._disp, gate + self.assoc.max_frame_motion)[:5]:
            cand_disp = self.graph.nodes[bn].center - obs_mag[bi]
            corrected = greedy(candidate_pairs(cand_disp, gate))
            if len(corrected) >= max(2, len(matched) + 1):
                matched = corrected
                break
        report.matched = matched
        return matched

    def _wire_new_edges(
        self,
        report: FrameReport,
        obs_mag: dict[int, np.ndarray],
        observed: list[tuple[int, int]],
    ) -> None:
        """Connect each new node to the frame's co-visible nodes."""
        new_set = set(report.new_nodes)
        done: set[tuple[int, int]] = set()
        for i, nid in observed:
            if nid not in new_set:
                continue
            for j, other in observed:
                if other == nid:
                    continue
                key = (min(nid, other), max(nid, other))
                if key in done:
                    continue
                dvec = obs_mag[j] - obs_mag[i]
                if float(np.linalg.norm(dvec)) > self.assoc.edge_max_distance:
                    continue
                self.graph.add_edge(nid, other, dvec)
                done.add(key)
                report.new_edges.append((nid, other))

    # -- hierarchy -----------------------------------------------------------

    def update_hierarchy(self) -> HierarchyReport:
        """Resolve pending nodes against the working graph.

        Pending nodes that match an existing landmark (descriptor score
        over tau_map, or center proximity inside the duplicate gate when
        the displacement estimate is fresh) are merged; the rest are
        inserted into the long-term graph.  If the frame produced no
        associations and nothing matched the working graph, a global
        pass over the whole long-term graph recovers from being lost.
        """
        report = HierarchyReport()
        if not self._pending:
            return report
        ltg = self.ltg_view()
        wg = build_working_graph(ltg, self.stg.ids, self.assoc.wg_radius)
        wg_index = descriptor.build_index(wg, self.match_cfg.path_len) if wg.n_nodes else None
        # Decide every merge against the pre-merge graph, then apply:
        # applying early merges would splice long-term structure into the
        # remaining pendings' neighborhoods and corrupt their descriptors.
        decisions: list[tuple[int, int | None]] = [
            (pid, self._find_merge_target(pid, wg, wg_index)) for pid in self._pending
        ]
        unresolved: list[int] = []
        for pid, target in decisions:
            if target is not None:
                self._merge(pid, target, report)
            else:
                unresolved.append(pid)

        lost = (
            self.assoc.lost_recovery
            and not self._frame_had_assoc
            and not report.merged
            and unresolved
            and ltg.n_nodes > 0
        )
        if lost:
            full_index = descriptor.build_index(ltg, self.match_cfg.path_len)
            recovery: list[tuple[int, int | None]] = []
            for pid in unresolved:
                qd = self._pending_descriptor(pid)
                ranked = matching.match_node(qd, full_index, self.match_cfg)
                if ranked and ranked[0].score >= self.assoc.tau_map and (
                    ranked[0].diagnostics["n_structural_matched"] > 0
                ):
                    recovery.append((pid, ranked[0].db_id))
                else:
                    recovery.append((pid, None))
            unresolved = []
            reseated = False
            for pid, target in recovery:
                if target is None:
                    unresolved.append(pid)
                    continue
                if not reseated and pid in self._pending_obs_mag:
                    self._disp = self.graph.nodes[target].center - self._pending_obs_mag[pid]
                    reseated = True
                    log.info("lost-recovery reseated displacement via node %d", target)
                if pid in self._pending_obs_mag:
                    self.graph.nodes[pid].center = self._pending_obs_mag[pid] + self._disp
                self._merge(pid, target, report)
            if reseated:
                for pid in unresolved:
                    if pid in self._pending_obs_mag:
                        self.graph.nodes[pid].center = self._pending_obs_mag[pid] + self._disp

        for pid in unresolved:
            self.ltg_ids.add(pid)
            report.inserted.append(pid)
        self._pending.clear()
        self._pending_obs_mag.clear()
        return report

    def _pending_descriptor(self, pid: int) -> descriptor.SceneDescriptor:
        ball = {pid} | set(self.graph.neighbors(pid, self.match_cfg.query_radius))
        sub = self.graph.induced_subgraph(ball)
        return descriptor.extract_descriptor(sub, pid, self.match_cfg.path_len)

    def _find_merge_target(
        self,
        pid: int,
        wg: SemanticGraph,
        wg_index: descriptor.DescriptorIndex | None,
    ) -> int | None:
        if wg_index is None:
            return None
        qd = self._pending_descriptor(pid)
        ranked = matching.match_node(qd, wg_index, self.match_cfg)
        # A match built purely from padded paths carries no structure
        # (any two isolated same-class nodes look identical); such
        # vacuous scores must not drive a merge.
        if ranked and ranked[0].score >= self.assoc.tau_map and (
            ranked[0].diagnostics["n_structural_matched"] > 0
        ):
            return ranked[0].db_id
        # Center-proximity dedup is only trustworthy while the anchored
        # displacement is confirmed by this frame's associations.
        if self._frame_had_assoc:
            node = self.graph.nodes[pid]
            best: tuple[float, int] | None = None
            for wid in wg.node_ids():
                cand = wg.nodes[wid]
                if cand.class_id != node.class_id:
                    continue
                sd, same = matching.euclidean_gate(node.center, cand.center, self.match_cfg.duplicate_gate)
                if same and (best is None or sd < best[0]):
                    best = (sd, wid)
            if best is not None:
                return best[1]
        return None

    def _merge(self, pid: int, target: int, report: HierarchyReport) -> None:
        """Fold a pending node into an existing landmark."""
        pnode = self.graph.nodes[pid]
        tnode = self.graph.nodes[target]
        sd, close = matching.euclidean_gate(pnode.center, tnode.center, self.match_cfg.duplicate_gate)
        n_p = self._obs_count.pop(pid, 1)
        n_t = self._obs_count.get(target, 1)
        if close:
            tnode.center = (tnode.center * n_t + pnode.center * n_p) / (n_t + n_p)
        self._obs_count[target] = n_t + n_p
        tnode.attrs = {**pnode.attrs, **tnode.attrs}
        for nbr in list(self.graph.neighbor_ids(pid)):
            edge = self.graph.edge_between(pid, nbr)
            assert edge is not None
            if nbr != target:
                self.graph.add_edge(target, nbr, edge.oriented(pid))
        self.graph.remove_node(pid)
        self.stg.replace(pid, target)
        self._merged_into[pid] = target
        self._pending_obs_mag.pop(pid, None)
        report.merged.append((pid, target))

    # -- relocalization --------------------------------------------------------

    def relocalize(
        self, ltg: SemanticGraph | descriptor.DescriptorIndex | None = None
    ) -> matching.LocalizationResult:
        """Localize the STG subgraph against a long-term graph.

        ``ltg`` defaults to this mapper's own long-term graph; pass
        another session's map (or a prebuilt descriptor index) to
        localize across sessions.
        """
        stg_ids = [nid for nid in self.stg.ids if nid in self.graph.nodes]
        if not stg_ids:
            raise ValueError("not enough context: short-term graph is empty")
        query = self.graph.induced_subgraph(stg_ids)
        if ltg is None:
            ltg = self.ltg_view()
        if isinstance(ltg, SemanticGraph) and ltg.n_nodes == 0:
            return matching.LocalizationResult(matches=[], accepted=False, scene_score=0.0)
        return matching.localize(query, ltg, self.match_cfg)


# --- stream ingestion --------------------------------------------------------


def parse_header(line: str, line_no: int = 1) -> StreamHeader:
    try:
        payload = canon.loads(line)
    except ValueError as exc:
        raise StreamFormatError(line_no, f"invalid JSON: {exc}") from exc
    try:
        r = np.asarray(payload["extrinsics"]["R"], dtype=np.float64).reshape(3, 3)
        t = payload["extrinsics"]["T"]
        ext = Extrinsics(r, Point3(float(t[0]), float(t[1]), float(t[2])))
        classes = tuple(str(c) for c in payload["classes"])
        session = str(payload["session"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise StreamFormatError(line_no, f"bad header ({exc!r}); expected {STREAM_SCHEMA_HINT}") from exc
    if not classes:
        raise StreamFormatError(line_no, "class table must not be empty")
    return StreamHeader(session=session, extrinsics=ext, classes=classes)


def parse_frame(line: str, line_no: int) -> DetectionFrame:
    try:
        payload = canon.loads(line)
    except ValueError as exc:
        raise StreamFormatError(line_no, f"invalid JSON: {exc}") from exc
    try:
        obs = tuple(
            ObjectObservation(
                class_id=int(o["cls"]),
                confidence=float(o["conf"]),
                center_cam=Point3(*(float(v) for v in o["center_cam"])),
                color=o.get("color"),
            )
            for o in payload["obs"]
        )
        return DetectionFrame(t=float(payload["t"]), yaw_deg=float(payload["yaw_deg"]), observations=obs)
    except (KeyError, TypeError, ValueError) as exc:
        raise StreamFormatError(line_no, f"bad frame ({exc!r}); expected {STREAM_SCHEMA_HINT}") from exc


def read_stream(path) -> tuple[StreamHeader, list[DetectionFrame]]:
    """Parse a JSONL detection stream; malformed lines fail hard."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise StreamFormatError(1, "empty stream")
    header = parse_header(lines[0], 1)
    frames: list[DetectionFrame] = []
    last_t: float | None = None
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        frame = parse_frame(line, line_no)
        if last_t is not None and frame.t <= last_t:
            raise StreamFormatError(line_no, f"timestamp {frame.t} not increasing (previous {last_t})")
        last_t = frame.t
        frames.append(frame)
    return header, frames


def write_stream(path, header: StreamHeader, frames) -> None:
    """Write a detection stream (full float precision, deterministic)."""
    rows = [
        {
            "session": header.session,
            "extrinsics": {
                "R": [float(v) for v in np.asarray(header.extrinsics.rotation).ravel()],
                "T": [header.extrinsics.translation.x, header.extrinsics.translation.y,
                      header.extrinsics.translation.z],
            },
            "classes": list(header.classes),
        }
    ]
    for frame in frames:
        obs_rows = []
        for o in frame.observations:
            row = {
                "cls": o.class_id,
                "conf": o.confidence,
                "center_cam": [o.center_cam.x, o.center_cam.y, o.center_cam.z],
            }
            if o.color is not None:
                row["color"] = o.color
            obs_rows.append(row)
        rows.append({"t": frame.t, "yaw_deg": frame.yaw_deg, "obs": obs_rows})
    text = "\n".join(canon.dumps(r, digits=None) for r in rows) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def map_stream(
    header: StreamHeader,
    frames,
    assoc: AssociationConfig | None = None,
    match_cfg: matching.MatchConfig | None = None,
) -> tuple[TopologicalMapper, list[FrameReport]]:
    """Run the mapper over a whole parsed stream."""
    mapper = TopologicalMapper(header.classes, header.extrinsics, assoc, match_cfg)
    reports = [mapper.process_frame(frame) for frame in frames]
    return mapper, reports
