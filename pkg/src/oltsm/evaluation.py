"""Offline measurement of localization quality, storage and timing.

A localization experiment replays a query stream with a fresh mapper
and, every ``stride`` frames, localizes the short-term graph against a
database map.  Each per-node top-1 correspondence is labeled correct or
wrong through the simulator's ground truth, yielding a scored label
list from which precision-recall curves, their area, and the per-window
success rate are computed.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import descriptor, matching
from .graph import SemanticGraph
from .mapping import AssociationConfig, DetectionFrame, FrameReport, StreamHeader, TopologicalMapper
from .simulator import GroundTruth


@dataclass(frozen=True)
class PrPoint:
    threshold: float
    precision: float
    recall: float


@dataclass
class WindowResult:
    """One relocalization attempt during a query replay."""

    frame_index: int
    t: float
    result: matching.LocalizationResult


@dataclass
class TimingReport:
    """Wall-clock stats (ms per call) for the localization stages."""

    stages: dict[str, dict[str, float]] = field(default_factory=dict)

    def payload(self) -> dict:
        return {"stages": self.stages}


# --- labeling ------------------------------------------------------------------


def node_landmark_map(reports: list[FrameReport], gt: GroundTruth) -> dict[int, int | None]:
    """Majority-vote mapping from map node ids to world landmark ids.

    Observation-to-node assignments come from the mapper's frame
    reports; observation-to-landmark truth from the simulator.  Nodes
    born only from distractors map to ``None``.
    """
    obs_lm = gt.obs_landmark()
    votes: dict[int, dict[int | None, int]] = {}
    for rep in reports:
        for obs_idx, node_id in enumerate(rep.assignments):
            if node_id is None:
                continue
            lm = obs_lm.get((rep.frame_index, obs_idx))
            tally = votes.setdefault(node_id, {})
            tally[lm] = tally.get(lm, 0) + 1
    out: dict[int, int | None] = {}
    for node_id, tally in votes.items():
        best = sorted(tally.items(), key=lambda kv: (-kv[1], -1 if kv[0] is None else kv[0]))
        out[node_id] = best[0][0]
    return out


def resolve_assignments(reports: list[FrameReport], remap: dict[int, int]) -> list[FrameReport]:
    """Rewrite report assignments through a merge remap (old -> final)."""

    def final(nid: int | None) -> int | None:
        while nid in remap:
            nid = remap[nid]
        return nid

    for rep in reports:
        rep.assignments = [final(nid) for nid in rep.assignments]
    return reports


def score_correspondences(
    windows: list[WindowResult],
    query_landmarks: dict[int, int | None],
    db_landmarks: dict[int, int | None],
) -> list[tuple[float, int]]:
    """Label every per-node top-1 match: (score, 1 if correct else 0)."""
    labeled: list[tuple[float, int]] = []
    for w in windows:
        for m in w.result.matches:
            q_lm = query_landmarks.get(m.query_id)
            db_lm = db_landmarks.get(m.db_id)
            correct = q_lm is not None and db_lm is not None and q_lm == db_lm
            labeled.append((m.score, 1 if correct else 0))
    return labeled


# --- precision / recall ------------------------------------------------------------


def pr_curve(labeled: list[tuple[float, int]]) -> list[PrPoint]:
    """Precision-recall over all decision thresholds.

    Thresholds are the sorted unique scores (descending); a leading
    anchor point at recall 0 carries the no-positives-predicted
    convention precision = 1.  Recall uses the ground-truth positive
    count as denominator (0 recall when there are no positives).
    """
    if not labeled:
        raise ValueError("pr_curve needs at least one labeled score")
    total_pos = sum(lab for _, lab in labeled)
    ordered = sorted(labeled, key=lambda sl: -sl[0])
    points = [PrPoint(float("inf"), 1.0, 0.0)]
    tp = 0
    fp = 0
    i = 0
    n = len(ordered)
    while i < n:
        thr = ordered[i][0]
        while i < n and ordered[i][0] == thr:
            if ordered[i][1]:
                tp += 1
            else:
                fp += 1
            i += 1
        precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
        recall = tp / total_pos if total_pos > 0 else 0.0
        points.append(PrPoint(thr, precision, recall))
    return points


def auc(curve: list[PrPoint]) -> float:
    """Trapezoidal area under the curve over the recall axis."""
    if len(curve) < 2:
        raise ValueError("degenerate curve: need at least two points")
    area = 0.0
    for lo, hi in zip(curve[:-1], curve[1:]):
        area += 0.5 * (lo.precision + hi.precision) * (hi.recall - lo.recall)
    return area


def success_rate(window_labels: list[tuple[float, bool]], tau: float) -> float:
    """Fraction of windows accepted (scene score >= tau) AND correct."""
    if not window_labels:
        raise ValueError("success_rate needs at least one window")
    ok = sum(1 for scene, correct in window_labels if scene >= tau and correct)
    return ok / len(window_labels)


def map_storage_bytes(path) -> int:
    """Exact byte count of a serialized map file."""
    return os.path.getsize(path)


def pr_csv(curve: list[PrPoint]) -> str:
    from .canon import format_float

    lines = ["threshold,precision,recall"]
    for p in curve:
        thr = "inf" if p.threshold == float("inf") else format_float(p.threshold)
        lines.append(f"{thr},{format_float(p.precision)},{format_float(p.recall)}")
    return "\n".join(lines) + "\n"


# --- experiment driver ------------------------------------------------------------


def replay_query_session(
    header: StreamHeader,
    frames: list[DetectionFrame],
    db: SemanticGraph | descriptor.DescriptorIndex,
    assoc: AssociationConfig | None = None,
    match_cfg: matching.MatchConfig | None = None,
    stride: int = 10,
    collect_timing: bool = False,
    timing_warmup: int = 10,
) -> tuple[list[WindowResult], list[FrameReport], TopologicalMapper, TimingReport | None]:
    """Map a query stream and relocalize against ``db`` every ``stride`` frames."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    cfg = match_cfg or matching.MatchConfig()
    index = db if isinstance(db, descriptor.DescriptorIndex) else descriptor.build_index(db, cfg.path_len)
    mapper = TopologicalMapper(header.classes, header.extrinsics, assoc, cfg)
    windows: list[WindowResult] = []
    reports: list[FrameReport] = []
    desc_times: list[float] = []
    match_times: list[float] = []
    total_times: list[float] = []
    for i, frame in enumerate(frames):
        reports.append(mapper.process_frame(frame))
        if (i + 1) % stride != 0 or len(mapper.stg) == 0:
            continue
        if collect_timing:
            stg_ids = [nid for nid in mapper.stg.ids if nid in mapper.graph.nodes]
            query = mapper.graph.induced_subgraph(stg_ids)
            t0 = time.perf_counter()
            descs = [
                descriptor.extract_descriptor(query, nid, cfg.path_len) for nid in query.node_ids()
            ]
            t1 = time.perf_counter()
            for qd in descs:
                matching.match_node(qd, index, cfg)
            t2 = time.perf_counter()
            n = max(len(descs), 1)
            desc_times.append((t1 - t0) / n * 1e3)
            match_times.append((t2 - t1) / n * 1e3)
        t0 = time.perf_counter()
        result = mapper.relocalize(index)
        total_times.append((time.perf_counter() - t0) * 1e3)
        windows.append(WindowResult(frame_index=i, t=frame.t, result=result))
    resolve_assignments(reports, mapper.merge_remap)
    timing = None
    if collect_timing:
        timing = TimingReport(
            stages={
                "descriptor_extraction": _stats(desc_times, timing_warmup),
                "graph_matching": _stats(match_times, timing_warmup),
                "total": _stats(total_times, timing_warmup),
            }
        )
    return windows, reports, mapper, timing


def _stats(samples: list[float], warmup: int) -> dict[str, float]:
    body = samples[warmup:] if len(samples) > warmup else samples
    if not body:
        return {"median_ms": 0.0, "p95_ms": 0.0, "n": 0}
    arr = np.asarray(body)
    return {
        "median_ms": float(np.median(arr)),
        "p95_ms": float(np.percentile(arr, 95)),
        "n": len(body),
    }


def window_labels(
    windows: list[WindowResult],
    query_landmarks: dict[int, int | None],
    db_landmarks: dict[int, int | None],
) -> list[tuple[float, bool]]:
    """Per-window (scene_score, rank-1 correct) pairs for success rates."""
    out: list[tuple[float, bool]] = []
    for w in windows:
        if not w.result.matches:
            out.append((w.result.scene_score, False))
            continue
        top = w.result.matches[0]
        q_lm = query_landmarks.get(top.query_id)
        db_lm = db_landmarks.get(top.db_id)
        out.append((w.result.scene_score, q_lm is not None and q_lm == db_lm))
    return out
