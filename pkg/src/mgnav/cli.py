"""``mgnav`` command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
The output directory comes from ``--output-dir``, else ``$MGNAV_OUTPUT_DIR``,
else the config's ``[run] output_dir``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import episode as ep
from . import simworld as sw
from .config import ConfigError, RunConfig, defaults_table, load_config, override, to_ini
from .smg import GraphError, build_graph, load_graph, save_graph, validate_graph

log = logging.getLogger("mgnav")

OUTPUT_ENV = "MGNAV_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or inputs the user must fix."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# helpers


def _output_dir(args, cfg: RunConfig) -> Path:
    out = args.output_dir or os.environ.get(OUTPUT_ENV) or cfg.run.output_dir
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = override(cfg, "run", seed=args.seed)
    d, r = getattr(args, "d", None), getattr(args, "r", None)
    cfg = override(cfg, "graph", d=d, r=r)
    if getattr(args, "scenes", None) is not None or getattr(args, "episodes", None) is not None:
        cfg = override(cfg, "suite", n_scenes=args.scenes, episodes_per_scene=args.episodes)
    return cfg


def _save_config(cfg: RunConfig, out: Path) -> None:
    (out / "config.ini").write_text(to_ini(cfg), encoding="utf-8")


def _scene(cfg: RunConfig, scene_file: str | None) -> sw.Scene:
    if scene_file:
        if not Path(scene_file).is_file():
            raise UsageError(f"scene file not found: {scene_file}")
        return sw.load_scene(scene_file)
    return sw.generate_scene(replace(cfg.scene, seed=cfg.run.seed))


def _variant(name: str) -> ep.Variant:
    for variants in ep.PRESETS.values():
        for v in variants:
            if v.name == name:
                return v
    names = sorted({v.name for vs in ep.PRESETS.values() for v in vs})
    raise UsageError(f"unknown variant {name!r}; choose from {', '.join(names)}")


def _graph_for(cfg: RunConfig, scene: sw.Scene, graph_file: str | None):
    if graph_file:
        if not Path(graph_file).is_file():
            raise UsageError(f"graph file not found: {graph_file}")
        return load_graph(graph_file)
    tour = sw.generate_tour(scene, cfg.suite.coverage, cfg.run.seed)
    return build_graph(tour, cfg.graph)


# --------------------------------------------------------------------------
# subcommands


def cmd_build_graph(args) -> int:
    cfg = _config(args)
    out = _output_dir(args, cfg)
    scene = _scene(cfg, args.scene)
    graph = _graph_for(cfg, scene, None)
    path = Path(args.out) if args.out else out / f"graph-s{scene.params.seed}.json"
    save_graph(graph, path)
    _save_config(cfg, out)
    print(f"nodes={len(graph)} edges={len(graph.edges)} -> {path}")
    return EXIT_OK


def cmd_run_episode(args) -> int:
    cfg = _config(args)
    out = _output_dir(args, cfg)
    variant = _variant(args.variant)
    scene = _scene(cfg, args.scene)
    seed = scene.params.seed
    suite = ep.sample_episodes(scene, seed, args.index + 1, goal_kind=cfg.suite.goal_kind,
                               min_geodesic=cfg.suite.min_geodesic, max_steps=cfg.suite.max_steps,
                               success_radius=cfg.suite.success_radius)
    spec = suite[args.index]
    graph = None
    if not variant.policy_only:
        graph = _graph_for(cfg, scene, args.graph)
    adapter = ep.AdapterParams.from_seed(cfg.run.seed, c_g=sw.DEFAULT_SENSOR.grid_channels) \
        if variant.use_adapter else None
    if variant.obstacles:
        keep = [(spec.start.x, spec.start.y), (spec.goal.x, spec.goal.y)]
        scene = sw.inject_obstacles(scene, variant.obstacles, seed=variant.obstacles, keep_clear=keep)
    loop = replace(cfg.loop, retrieval_mode=variant.retrieval_mode)
    res = ep.run_episode(spec, graph, adapter, scene, loop, cfg.policy,
                         policy_only=variant.policy_only, record_trajectory=True)
    doc = {"variant": variant.name, "spec": spec.to_dict(), **res.to_record(),
           "trajectory": [[p.x, p.y, p.yaw] for p in res.trajectory], "event_log": res.events}
    path = out / f"episode-{spec.spec_id}-{variant.name}.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")
    _save_config(cfg, out)
    print(f"{spec.spec_id} {variant.name}: success={res.success} steps={res.steps} "
          f"p={res.path_length:.2f} l={res.geodesic:.2f} termination={res.termination} -> {path}")
    return EXIT_OK


def cmd_run_benchmark(args) -> int:
    cfg = _config(args)
    out = _output_dir(args, cfg)
    preset = args.preset or cfg.run.preset
    if preset == "all":
        seen, variants = set(), []
        for vs in ep.PRESETS.values():
            for v in vs:
                if v.name not in seen:
                    seen.add(v.name)
                    variants.append(v)
    elif preset in ep.PRESETS:
        variants = list(ep.PRESETS[preset])
    else:
        raise UsageError(f"unknown preset {preset!r}; choose from {', '.join(list(ep.PRESETS) + ['all'])}")
    workers = args.workers if args.workers is not None else ep.default_workers()
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    scfg = cfg.suite_config()
    records = ep.run_benchmark(scfg, variants, workers)
    rows = ep.summarize(records, variants)
    ep.write_jsonl(records, out / "results.jsonl")
    table = ep.format_table(rows)
    (out / "summary.txt").write_text(table, encoding="utf-8")
    (out / "summary.json").write_text(json.dumps(rows, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    _save_config(cfg, out)
    print(table, end="")
    return EXIT_OK


def cmd_inject_obstacles(args) -> int:
    cfg = _config(args)
    out = _output_dir(args, cfg)
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    scene = _scene(cfg, args.scene)
    try:
        keep = [tuple(float(v) for v in pt.split(",")) for pt in args.keep or ()]
    except ValueError:
        keep = [()]
    if any(len(k) != 2 for k in keep):
        raise UsageError("--keep expects x,y pairs")
    trapped = sw.inject_obstacles(scene, args.count, seed=args.obstacle_seed, keep_clear=keep)
    path = Path(args.out) if args.out else out / f"scene-s{scene.params.seed}-obs{args.count}.json"
    sw.save_scene(trapped, path)
    _save_config(cfg, out)
    added = int(trapped.occupancy.sum() - scene.occupancy.sum())
    print(f"obstacles={args.count} blocked_cells_added={added} -> {path}")
    return EXIT_OK


def cmd_dump_graph(args) -> int:
    if not Path(args.graph).is_file():
        raise UsageError(f"graph file not found: {args.graph}")
    graph = load_graph(args.graph)
    validate_graph(graph)
    c = graph.centers[:, :2]
    lines = [f"nodes: {len(graph)}", f"edges: {len(graph.edges)}",
             f"params: d={graph.params.d} r={graph.params.r}"]
    if len(graph) > 1:
        dist = np.hypot(c[:, None, 0] - c[None, :, 0], c[:, None, 1] - c[None, :, 1])
        np.fill_diagonal(dist, np.inf)
        nn = dist.min(axis=1)
        lines.append(f"min pairwise center distance: {nn.min():.3f} (d = {graph.params.d})")
        lines.append(f"nearest-neighbour spacing: mean {nn.mean():.3f} max {nn.max():.3f}")
    adj = graph.adjacency
    lines.append("node  x       y       keyframes objects  neighbours")
    for n in graph.nodes:
        n_obj = sum(len(v) for v in n.objects.values())
        nb = " ".join(str(v) for v in adj[n.id])
        lines.append(f"{n.id:<5d} {n.center[0]:<7.2f} {n.center[1]:<7.2f} {len(n.keyframes):<9d} "
                     f"{n_obj:<8d} {nb}")
    print("\n".join(lines))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file (defaults used for missing keys)")
    p.add_argument("--output-dir", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
    p.add_argument("--seed", type=int, help="global seed (scene, tour and adapter)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mgnav", description="Memory-guided navigation in a synthetic world.")
    parser.add_argument("--print-defaults", action="store_true", help="print the defaults table and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("build-graph", help="generate a scene, tour it and build the memory graph")
    _common(p)
    p.add_argument("--scene", help="scene file (default: generate from config)")
    p.add_argument("--d", type=float, help="node spacing (m)")
    p.add_argument("--r", type=float, help="region radius (m)")
    p.add_argument("--out", help="graph file path")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("run-episode", help="run one seeded episode and write its trajectory")
    _common(p)
    p.add_argument("--scene", help="scene file (default: generate from config)")
    p.add_argument("--graph", help="graph file (default: build from the scene)")
    p.add_argument("--index", type=int, default=0, help="episode index within the scene (default 0)")
    p.add_argument("--variant", default="graph+adapter", help="variant name (default graph+adapter)")
    p.set_defaults(func=cmd_run_episode)

    p = sub.add_parser("run-benchmark", help="run an ablation preset over the seeded suite")
    _common(p)
    p.add_argument("--preset", help="component, retrieval, sparsity, robustness or all")
    p.add_argument("--workers", type=int, help="worker processes (default: available cores)")
    p.add_argument("--scenes", type=int, help="number of scenes")
    p.add_argument("--episodes", type=int, help="episodes per scene")
    p.set_defaults(func=cmd_run_benchmark)

    p = sub.add_parser("inject-obstacles", help="add random rectangular obstacles to a scene")
    _common(p)
    p.add_argument("--scene", help="scene file (default: generate from config)")
    p.add_argument("--count", type=int, default=10, help="number of obstacles (default 10)")
    p.add_argument("--obstacle-seed", type=int, default=0)
    p.add_argument("--keep", action="append", metavar="X,Y", help="point to keep clear (repeatable)")
    p.add_argument("--out", help="scene file path")
    p.set_defaults(func=cmd_inject_obstacles)

    p = sub.add_parser("dump-graph", help="print a human-readable graph report")
    p.add_argument("graph", help="graph file")
    p.set_defaults(func=cmd_dump_graph)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_defaults:
        for sec, key, val in defaults_table():
            print(f"[{sec}] {key} = {val}")
        return EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        print("mgnav: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, UsageError) as e:
        print(f"mgnav: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (GraphError, ValueError, RuntimeError, OSError, KeyError) as e:
        print(f"mgnav: {args.command} failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - anything else is still a runtime failure
        log.debug("unhandled error", exc_info=True)
        print(f"mgnav: {args.command} failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
