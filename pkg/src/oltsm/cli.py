"""Command-line front-end: simulate, map, localize, eval, pipeline.

Every run writes a manifest (resolved config, seed, input hashes) next
to its primary output; re-running from a manifest reproduces the
outputs byte for byte.  Exit codes: 0 success, 1 usage error, 2
data/format error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import sys
from pathlib import Path

from . import canon, descriptor, evaluation, matching, simulator
from .canon import DataFormatError
from .graph import load_map, save_map
from .mapping import AssociationConfig, map_stream, read_stream
from .matching import MatchConfig

MANIFEST_FORMAT = "oltsm-manifest/1"
ASSIGN_FORMAT = "oltsm-assign/1"
REPORT_FORMAT = "oltsm-report/1"
SUMMARY_FORMAT = "oltsm-summary/1"
TIMING_FORMAT = "oltsm-timing/1"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1, not argparse's default 2
        raise UsageError(f"{message}\n{self.format_usage()}")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def _write_json(path: Path, payload: dict, digits: int | None = 9) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canon.dumps(payload, digits=digits) + "\n", encoding="utf-8")


def _read_json(path: Path, expected_format: str) -> dict:
    try:
        payload = canon.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != expected_format:
        raise DataFormatError(f"{path}: expected format {expected_format!r}")
    return payload


def _write_manifest(path: Path, subcommand: str, config: dict, inputs: list[str], outputs: list[str]) -> None:
    payload = {
        "format": MANIFEST_FORMAT,
        "subcommand": subcommand,
        "config": config,
        "inputs": {p: _sha256(Path(p)) for p in inputs},
        "outputs": sorted(outputs),
    }
    _write_json(path, payload)


def _check_manifest_inputs(manifest: dict) -> None:
    for p, digest in manifest.get("inputs", {}).items():
        path = Path(p)
        if not path.exists():
            raise DataFormatError(f"manifest input missing: {p}")
        if _sha256(path) != digest:
            raise DataFormatError(f"manifest input changed since recording: {p}")


# --- config plumbing -----------------------------------------------------------


def _add_world_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--template", default="corridor", choices=["corridor", "hospital", "random"])
    p.add_argument("--length", type=float, default=70.0)
    p.add_argument("--width", type=float, default=8.0)
    p.add_argument("--landmarks", type=int, default=100)
    p.add_argument("--min-separation", type=float, default=1.2)


def _add_traj_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--speed", type=float, default=0.5)
    p.add_argument("--rate-hz", type=float, default=10.0)
    p.add_argument("--lateral-offset", type=float, default=0.0)
    p.add_argument("--heading-offset", type=float, default=0.0)


def _add_pert_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--p-drop", type=float, default=0.0)
    p.add_argument("--p-confuse", type=float, default=0.0)
    p.add_argument("--sigma-center", type=float, default=0.0)
    p.add_argument("--sigma-yaw", type=float, default=0.0)
    p.add_argument("--n-dynamic", type=int, default=0)


def _add_assoc_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gate-distance", type=float, default=1.0)
    p.add_argument("--min-confidence", type=float, default=0.5)
    p.add_argument("--edge-max-distance", type=float, default=10.0)
    p.add_argument("--tau-map", type=float, default=0.8)
    p.add_argument("--hierarchy-stride", type=int, default=1)
    p.add_argument(
        "--static-classes",
        default=None,
        help="comma-separated class ids kept as landmarks (default: all)",
    )


def _add_match_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau-accept", type=float, default=0.6)
    p.add_argument("--duplicate-gate", type=float, default=0.5)
    p.add_argument("--path-len", type=int, default=3)
    p.add_argument("--query-radius", type=int, default=5)


def _usage_guard(factory, *args, **kwargs):
    """Config-domain errors from flag values are usage errors, not bugs."""
    try:
        return factory(*args, **kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _assoc_from_cfg(cfg: dict) -> AssociationConfig:
    allow = cfg.get("static_classes")
    allowlist = None
    if allow is not None:
        if isinstance(allow, str):
            allow = [int(c) for c in allow.split(",") if c.strip() != ""]
        allowlist = frozenset(int(c) for c in allow)
    return _usage_guard(
        AssociationConfig,
        gate_distance=cfg["gate_distance"],
        min_confidence=cfg["min_confidence"],
        static_class_allowlist=allowlist,
        edge_max_distance=cfg["edge_max_distance"],
        tau_map=cfg["tau_map"],
        hierarchy_stride=cfg["hierarchy_stride"],
    )


def _match_from_cfg(cfg: dict) -> MatchConfig:
    return _usage_guard(
        MatchConfig,
        tau_accept=cfg["tau_accept"],
        duplicate_gate=cfg["duplicate_gate"],
        path_len=cfg["path_len"],
        query_radius=cfg["query_radius"],
    )


def _world_from_cfg(cfg: dict, seed: int) -> simulator.World:
    spec = _usage_guard(
        simulator.WorldSpec,
        template=cfg["template"],
        length=cfg["length"],
        width=cfg["width"],
        n_landmarks=cfg["landmarks"],
        min_separation=cfg["min_separation"],
        seed=seed,
    )
    return simulator.generate_world(spec)


def _traj_from_cfg(cfg: dict, prefix: str = "") -> simulator.TrajectorySpec:
    return _usage_guard(
        simulator.TrajectorySpec,
        speed=cfg["speed"],
        rate_hz=cfg["rate_hz"],
        lateral_offset=cfg.get(prefix + "lateral_offset", 0.0),
        heading_offset_deg=cfg.get(prefix + "heading_offset", 0.0),
    )


def _pert_from_cfg(cfg: dict, prefix: str = "") -> simulator.PerturbationSpec:
    return _usage_guard(
        simulator.PerturbationSpec,
        p_drop=cfg.get(prefix + "p_drop", 0.0),
        p_confuse=cfg.get(prefix + "p_confuse", 0.0),
        sigma_center=cfg.get(prefix + "sigma_center", 0.0),
        sigma_yaw=cfg.get(prefix + "sigma_yaw", 0.0),
        n_dynamic=int(cfg.get(prefix + "n_dynamic", 0)),
    )


# --- runners ------------------------------------------------------------------


def _run_simulate(cfg: dict) -> list[str]:
    world = _world_from_cfg(cfg, cfg["seed"])
    traj = _traj_from_cfg(cfg)
    pert = _pert_from_cfg(cfg)
    session = simulator.generate_session(
        world, traj, pert, seed=cfg["seed"] + 1, session=cfg["session"]
    )
    stream_path = Path(cfg["out"])
    gt_path = Path(cfg["gt"])
    stream_path.parent.mkdir(parents=True, exist_ok=True)
    session.save(stream_path, gt_path)
    return [str(stream_path), str(gt_path)]


def _assignments_payload(session: str, reports) -> dict:
    return {
        "format": ASSIGN_FORMAT,
        "session": session,
        "frames": [
            {"frame_idx": rep.frame_index, "assignments": rep.assignments} for rep in reports
        ],
    }


def _load_assignments(path: Path):
    payload = _read_json(path, ASSIGN_FORMAT)
    out = []
    for fr in payload["frames"]:
        out.append((fr["frame_idx"], fr["assignments"]))
    return payload["session"], out


def _run_map(cfg: dict) -> list[str]:
    header, frames = read_stream(cfg["input"])
    assoc = _assoc_from_cfg(cfg)
    match_cfg = _match_from_cfg(cfg)
    mapper, reports = map_stream(header, frames, assoc, match_cfg)
    evaluation.resolve_assignments(reports, mapper.merge_remap)
    out_path = Path(cfg["out"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_map(mapper.ltg_view(), out_path)
    outputs = [str(out_path)]
    if cfg.get("assignments"):
        _write_json(Path(cfg["assignments"]), _assignments_payload(header.session, reports))
        outputs.append(cfg["assignments"])
    return outputs


def _run_localize(cfg: dict) -> list[str]:
    db = load_map(cfg["map"])
    header, frames = read_stream(cfg["input"])
    assoc = _assoc_from_cfg(cfg)
    match_cfg = _match_from_cfg(cfg)
    windows, reports, _, timing = evaluation.replay_query_session(
        header,
        frames,
        db,
        assoc,
        match_cfg,
        stride=cfg["stride"],
        collect_timing=bool(cfg.get("timing_out")),
    )
    report_payload = {
        "format": REPORT_FORMAT,
        "query_session": header.session,
        "db_map": _sha256(Path(cfg["map"])),
        "windows": [
            {"frame": w.frame_index, "t": w.t, **w.result.payload(header.session)}
            for w in windows
        ],
    }
    out_path = Path(cfg["out"])
    _write_json(out_path, report_payload)
    outputs = [str(out_path)]
    if cfg.get("assignments"):
        _write_json(Path(cfg["assignments"]), _assignments_payload(header.session, reports))
        outputs.append(cfg["assignments"])
    if cfg.get("timing_out") and timing is not None:
        _write_json(Path(cfg["timing_out"]), {"format": TIMING_FORMAT, **timing.payload()})
        outputs.append(cfg["timing_out"])
    return outputs


def _node_landmarks_from_files(assign_path: Path, gt_path: Path) -> dict[int, int | None]:
    _, frames = _load_assignments(assign_path)
    gt = simulator.load_ground_truth(gt_path)
    obs_lm = gt.obs_landmark()
    votes: dict[int, dict[int | None, int]] = {}
    for frame_idx, assignments in frames:
        for obs_idx, node_id in enumerate(assignments):
            if node_id is None:
                continue
            lm = obs_lm.get((frame_idx, obs_idx))
            tally = votes.setdefault(node_id, {})
            tally[lm] = tally.get(lm, 0) + 1
    out: dict[int, int | None] = {}
    for node_id, tally in votes.items():
        best = sorted(tally.items(), key=lambda kv: (-kv[1], -1 if kv[0] is None else kv[0]))
        out[node_id] = best[0][0]
    return out


def _run_eval(cfg: dict) -> list[str]:
    report = _read_json(Path(cfg["report"]), REPORT_FORMAT)
    query_lms = _node_landmarks_from_files(Path(cfg["query_assign"]), Path(cfg["query_gt"]))
    db_lms = _node_landmarks_from_files(Path(cfg["db_assign"]), Path(cfg["db_gt"]))
    labeled: list[tuple[float, int]] = []
    win_labels: list[tuple[float, bool]] = []
    for w in report["windows"]:
        matches = w["matches"]
        for m in matches:
            q_lm = query_lms.get(m["q"])
            db_lm = db_lms.get(m["db"])
            correct = q_lm is not None and db_lm is not None and q_lm == db_lm
            labeled.append((m["score"], 1 if correct else 0))
        if matches:
            top = matches[0]
            q_lm = query_lms.get(top["q"])
            correct = q_lm is not None and q_lm == db_lms.get(top["db"])
            win_labels.append((w["scene_score"], correct))
        else:
            win_labels.append((w["scene_score"], False))
    outputs: list[str] = []
    if labeled:
        curve = evaluation.pr_curve(labeled)
        auc_value = evaluation.auc(curve)
        csv_text = evaluation.pr_csv(curve)
        rate = evaluation.success_rate(win_labels, cfg["tau"])
    else:
        auc_value = None
        csv_text = "threshold,precision,recall\n"
        rate = None
    csv_path = Path(cfg["out_csv"])
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(csv_text, encoding="utf-8")
    outputs.append(str(csv_path))
    timing = None
    if cfg.get("timing_in"):
        timing = _read_json(Path(cfg["timing_in"]), TIMING_FORMAT)["stages"]
    summary = {
        "format": SUMMARY_FORMAT,
        "auc": auc_value,
        "success_rate": rate,
        "storage_bytes": evaluation.map_storage_bytes(cfg["map"]),
        "timing": timing,
        "n_windows": len(win_labels),
        "n_labeled": len(labeled),
        "tau": cfg["tau"],
    }
    _write_json(Path(cfg["out_summary"]), summary)
    outputs.append(cfg["out_summary"])
    return outputs


def _simulate_pipeline_session(args) -> simulator.Session:
    world, traj_cfg, pert_cfg, seed, name, prefix = args
    traj = _traj_from_cfg(traj_cfg, prefix)
    pert = _pert_from_cfg(pert_cfg, prefix)
    return simulator.generate_session(world, traj, pert, seed=seed, session=name)


def _run_pipeline(cfg: dict) -> list[str]:
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    world = _world_from_cfg(cfg, seed)
    jobs = int(cfg.get("jobs", 1))
    tasks = [
        (world, cfg, cfg, seed + 1, "map", ""),
        (world, cfg, cfg, seed + 2, "query", "q_"),
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=2) as pool:
            map_session, query_session = list(pool.map(_simulate_pipeline_session, tasks))
    else:
        map_session, query_session = (_simulate_pipeline_session(t) for t in tasks)

    paths = {
        "map_stream": out_dir / "map_stream.jsonl",
        "map_gt": out_dir / "map_gt.json",
        "query_stream": out_dir / "query_stream.jsonl",
        "query_gt": out_dir / "query_gt.json",
        "map": out_dir / "map.json",
        "map_assign": out_dir / "map.assign.json",
        "report": out_dir / "report.json",
        "query_assign": out_dir / "query.assign.json",
        "csv": out_dir / "pr.csv",
        "summary": out_dir / "summary.json",
    }
    map_session.save(paths["map_stream"], paths["map_gt"])
    query_session.save(paths["query_stream"], paths["query_gt"])

    map_cfg = dict(cfg)
    map_cfg.update({"input": str(paths["map_stream"]), "out": str(paths["map"]),
                    "assignments": str(paths["map_assign"])})
    _run_map(map_cfg)

    loc_cfg = dict(cfg)
    loc_cfg.update(
        {
            "map": str(paths["map"]),
            "input": str(paths["query_stream"]),
            "out": str(paths["report"]),
            "assignments": str(paths["query_assign"]),
            "stride": cfg["query_stride"],
            "timing_out": str(out_dir / "timing.json") if cfg.get("timing") else None,
        }
    )
    _run_localize(loc_cfg)

    eval_cfg = dict(cfg)
    eval_cfg.update(
        {
            "report": str(paths["report"]),
            "query_assign": str(paths["query_assign"]),
            "db_assign": str(paths["map_assign"]),
            "query_gt": str(paths["query_gt"]),
            "db_gt": str(paths["map_gt"]),
            "map": str(paths["map"]),
            "out_csv": str(paths["csv"]),
            "out_summary": str(paths["summary"]),
            "timing_in": loc_cfg["timing_out"],
            "tau": cfg["tau_accept"],
        }
    )
    _run_eval(eval_cfg)
    outputs = [str(p) for p in paths.values()]
    if loc_cfg["timing_out"]:
        outputs.append(loc_cfg["timing_out"])
    return outputs


# --- argument parsing ------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="oltsm", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)

    p_sim = sub.add_parser("simulate", help="generate a synthetic detection stream")
    p_sim.add_argument("--out", required=True, help="stream JSONL output path")
    p_sim.add_argument("--gt", required=True, help="ground truth JSON output path")
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--session", default="session")
    _add_world_args(p_sim)
    _add_traj_args(p_sim)
    _add_pert_args(p_sim)
    p_sim.add_argument("--from-manifest", default=None)

    p_map = sub.add_parser("map", help="build a map from a detection stream")
    p_map.add_argument("--in", dest="input", required=False)
    p_map.add_argument("--out", required=False)
    p_map.add_argument("--assignments", default=None)
    _add_assoc_args(p_map)
    _add_match_args(p_map)
    p_map.add_argument("--from-manifest", default=None)

    p_loc = sub.add_parser("localize", help="localize a query stream against a map")
    p_loc.add_argument("--map", required=False)
    p_loc.add_argument("--in", dest="input", required=False)
    p_loc.add_argument("--out", required=False)
    p_loc.add_argument("--assignments", default=None)
    p_loc.add_argument("--stride", type=int, default=10)
    p_loc.add_argument("--timing-out", default=None)
    _add_assoc_args(p_loc)
    _add_match_args(p_loc)
    p_loc.add_argument("--from-manifest", default=None)

    p_eval = sub.add_parser("eval", help="score a localization report against ground truth")
    p_eval.add_argument("--report", required=False)
    p_eval.add_argument("--query-assign", required=False)
    p_eval.add_argument("--db-assign", required=False)
    p_eval.add_argument("--query-gt", required=False)
    p_eval.add_argument("--db-gt", required=False)
    p_eval.add_argument("--map", required=False)
    p_eval.add_argument("--out-csv", required=False)
    p_eval.add_argument("--out-summary", required=False)
    p_eval.add_argument("--tau", type=float, default=0.6)
    p_eval.add_argument("--timing-in", default=None)
    p_eval.add_argument("--from-manifest", default=None)

    p_pipe = sub.add_parser("pipeline", help="simulate, map, localize and eval in one run")
    p_pipe.add_argument("--out-dir", required=False)
    p_pipe.add_argument("--seed", type=int, required=False)
    p_pipe.add_argument("--query-stride", type=int, default=10)
    p_pipe.add_argument("--jobs", type=int, default=1)
    p_pipe.add_argument("--timing", action="store_true")
    _add_world_args(p_pipe)
    _add_traj_args(p_pipe)
    p_pipe.add_argument("--q-p-drop", type=float, default=0.0)
    p_pipe.add_argument("--q-p-confuse", type=float, default=0.0)
    p_pipe.add_argument("--q-sigma-center", type=float, default=0.0)
    p_pipe.add_argument("--q-sigma-yaw", type=float, default=0.0)
    p_pipe.add_argument("--q-n-dynamic", type=int, default=0)
    p_pipe.add_argument("--q-lateral-offset", type=float, default=0.0)
    p_pipe.add_argument("--q-heading-offset", type=float, default=0.0)
    _add_assoc_args(p_pipe)
    _add_match_args(p_pipe)
    p_pipe.add_argument("--from-manifest", default=None)
    return parser


_REQUIRED = {
    "simulate": ["out", "gt", "seed"],
    "map": ["input", "out"],
    "localize": ["map", "input", "out"],
    "eval": ["report", "query_assign", "db_assign", "query_gt", "db_gt", "map",
             "out_csv", "out_summary"],
    "pipeline": ["out_dir", "seed"],
}

_RUNNERS = {
    "simulate": _run_simulate,
    "map": _run_map,
    "localize": _run_localize,
    "eval": _run_eval,
    "pipeline": _run_pipeline,
}

_INPUT_KEYS = {
    "simulate": [],
    "map": ["input"],
    "localize": ["map", "input"],
    "eval": ["report", "query_assign", "db_assign", "query_gt", "db_gt", "map"],
    "pipeline": [],
}

_MANIFEST_NAME = {
    "simulate": lambda cfg: Path(cfg["out"]).with_suffix(".manifest.json"),
    "map": lambda cfg: Path(cfg["out"]).with_suffix(".manifest.json"),
    "localize": lambda cfg: Path(cfg["out"]).with_suffix(".manifest.json"),
    "eval": lambda cfg: Path(cfg["out_summary"]).with_suffix(".manifest.json"),
    "pipeline": lambda cfg: Path(cfg["out_dir"]) / "manifest.json",
}


def _cfg_from_args(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("subcommand", "from_manifest")}
    if cfg.get("static_classes") is not None and isinstance(cfg["static_classes"], str):
        cfg["static_classes"] = [int(c) for c in cfg["static_classes"].split(",") if c.strip()]
    return cfg


def run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand is None:
            raise UsageError(parser.format_usage())
        sub = args.subcommand
        if args.from_manifest:
            manifest = _read_json(Path(args.from_manifest), MANIFEST_FORMAT)
            if manifest["subcommand"] != sub:
                raise DataFormatError(
                    f"manifest records a {manifest['subcommand']!r} run, not {sub!r}"
                )
            cfg = manifest["config"]
            if sub == "pipeline" and getattr(args, "out_dir", None):
                cfg = _rebase_pipeline_cfg(cfg, args.out_dir)
            _check_manifest_inputs(manifest)
        else:
            cfg = _cfg_from_args(args)
            missing = [k for k in _REQUIRED[sub] if cfg.get(k) is None]
            if missing:
                raise UsageError(
                    "missing required arguments: "
                    + ", ".join("--" + m.replace("_", "-") for m in missing)
                )
        outputs = _RUNNERS[sub](cfg)
        inputs = [cfg[k] for k in _INPUT_KEYS[sub]]
        _write_manifest(_MANIFEST_NAME[sub](cfg), sub, cfg, inputs, outputs)
        return EXIT_OK
    except UsageError as exc:
        print(f"oltsm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError, NotADirectoryError, json.JSONDecodeError) as exc:
        print(f"oltsm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # invariant violations and bugs
        print(f"oltsm: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def _rebase_pipeline_cfg(cfg: dict, new_out_dir: str) -> dict:
    cfg = dict(cfg)
    cfg["out_dir"] = new_out_dir
    return cfg


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
