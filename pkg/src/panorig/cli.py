"""Command line entry point: ``panorig generate|calibrate|sweep|merge|netsim``.

Bad configuration or input exits with 2. A failing numerical step exits
with 3 and names the offending camera pair on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .bundle import atomic_path, atomic_write_text, read_bundle, write_bundle
from .errors import MissingPose, PanorigError
from .graph import read_nodes, write_graph, write_nodes
from .netcap import ChannelSpec, frame_set_bytes, frame_rate_bound, simulate_session
from .pairwise import SolverConfig
from .pipeline import (
    SWEEP_RATIOS,
    Capture,
    calibrate,
    camera_colors,
    format_report,
    format_sweep_csv,
    merge_clouds,
    sweep,
    write_ply,
)
from .rigsim import PRESETS, NoiseSpec, RigSpec, Room, generate_scene

log = logging.getLogger("panorig")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
DEFAULT_SEED = 7


class ConfigError(Exception):
    pass


def _build(cls, values, what):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"{what} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {what}: {exc}") from exc


@dataclass
class PipelineConfig:
    """Everything a run needs; loaded from JSON and overridden by flags."""

    bundle: str | None = None  # scene bundle directory; otherwise generate in memory
    preset: str = "kinect-like"
    seed: int = DEFAULT_SEED
    rig: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)  # overrides on top of the preset
    room: dict = field(default_factory=dict)
    density: float = 6000.0
    ratio: float = 3.0
    ratios: list = field(default_factory=lambda: list(SWEEP_RATIOS))
    pair_solver: dict = field(default_factory=dict)
    graph_solver: dict = field(default_factory=dict)
    jacobians: str = "numeric"
    channel: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> PipelineConfig:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return _build(cls, data, "config")

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.jacobians not in ("numeric", "analytic"):
            raise ConfigError("jacobians must be 'numeric' or 'analytic'")
        ratios = [float(r) for r in self.ratios]
        if not ratios or any(r < 1 for r in ratios) or ratios != sorted(ratios):
            raise ConfigError("ratios must be non-empty, >= 1 and sorted ascending")
        if self.ratio < 1:
            raise ConfigError("ratio must be >= 1")
        if self.density <= 0:
            raise ConfigError("density must be positive")

    def rig_spec(self) -> RigSpec:
        return _build(RigSpec, self.rig, "rig")

    def noise_spec(self) -> NoiseSpec:
        base = asdict(PRESETS[self.preset](self.seed))
        merged = {**base, **self.noise}
        merged["seed"] = self.seed if "seed" not in self.noise else self.noise["seed"]
        return _build(NoiseSpec, merged, "noise")

    def room_spec(self) -> Room:
        return _build(Room, self.room, "room")

    def solver(self, which: str) -> SolverConfig:
        return _build(SolverConfig, getattr(self, which), which)

    def channel_spec(self) -> ChannelSpec:
        return _build(ChannelSpec, self.channel, "channel")


def _config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    for name in ("bundle", "preset", "seed", "ratio", "jacobians"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "ratios", None) is not None:
        cfg.ratios = args.ratios
    if getattr(args, "cameras", None) is not None:
        cfg.rig = {**cfg.rig, "n_cameras": args.cameras}
    cfg.validate()
    return cfg


def _scene(cfg: PipelineConfig):
    return generate_scene(cfg.rig_spec(), cfg.noise_spec(), cfg.density, cfg.room_spec())


def _capture(cfg: PipelineConfig) -> Capture:
    if cfg.bundle:
        try:
            return read_bundle(cfg.bundle)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load bundle {cfg.bundle}: {exc}") from exc
    return Capture.from_scene(_scene(cfg))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_ratios(text: str) -> list:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad ratio list {text!r}") from exc


# --- subcommands ---------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _config_from_args(args)
    scene = _scene(cfg)
    out = write_bundle(args.out, scene)
    print(f"wrote {scene.n}-camera bundle to {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config_from_args(args)
    capture = _capture(cfg)
    log.info("calibrating %d cameras at ratio %g", capture.n, cfg.ratio)
    res = calibrate(capture, cfg.ratio, cfg.solver("pair_solver"), cfg.solver("graph_solver"), cfg.jacobians)
    report = format_report(res)
    if args.out:
        out = _out_dir(args)
        with atomic_path(out / "poses.txt") as tmp:
            write_nodes(tmp, res.optimized.poses())
        with atomic_path(out / "initial_poses.txt") as tmp:
            write_nodes(tmp, res.initial.poses())
        with atomic_path(out / "graph.txt") as tmp:
            write_graph(tmp, res.optimized)
        atomic_write_text(out / "report.txt", report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    capture = _capture(cfg)
    log.info("sweeping %d ratios over %d cameras", len(cfg.ratios), capture.n)
    rows = sweep(capture, cfg.ratios, cfg.solver("pair_solver"), cfg.solver("graph_solver"), cfg.jacobians)
    text = format_sweep_csv(rows)
    if args.out:
        atomic_write_text(_out_dir(args) / "sweep.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_merge(args) -> int:
    cfg = _config_from_args(args)
    if not cfg.bundle:
        raise ConfigError("merge needs --bundle")
    capture = _capture(cfg)
    try:
        nodes = read_nodes(args.poses)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read poses {args.poses}: {exc}") from exc
    poses = []
    for k in range(1, capture.n + 1):
        if k not in nodes:
            raise MissingPose(f"no pose for camera {k} in {args.poses}")
        poses.append(nodes[k])
    points, cams = merge_clouds(capture.depth_maps, poses)
    colors = camera_colors(capture.n)[cams] if len(cams) else np.zeros((0, 3), np.uint8)
    out = _out_dir(args) / "merged.ply"
    with atomic_path(out) as tmp:
        write_ply(tmp, points, colors)
    print(f"wrote {len(points)} points to {out}")
    return EXIT_OK


def cmd_netsim(args) -> int:
    cfg = _config_from_args(args)
    overrides = {
        "bandwidth_bps": args.bandwidth,
        "loss_rate": args.loss,
        "latency": args.latency,
        "mtu": args.mtu,
        "retries": args.retries,
    }
    channel_values = {**cfg.channel, **{k: v for k, v in overrides.items() if v is not None}}
    channel_values.setdefault("seed", cfg.seed)
    channel = _build(ChannelSpec, channel_values, "channel")
    n_cameras = args.cameras or cfg.rig_spec().n_cameras
    bytes_per_set = frame_set_bytes(args.width, args.height, n_cameras)
    stats = simulate_session(n_cameras, args.frames, bytes_per_set // n_cameras, channel)
    print(stats.table())
    print(f"frame rate bound {frame_rate_bound(bytes_per_set, channel):.1f} fps")
    return EXIT_OK


# --- argument parsing ----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="panorig", description="Panoramic RGB-D rig calibration toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scene=True):
        sp.add_argument("--config", help="JSON pipeline config")
        sp.add_argument("--seed", type=int, help=f"scene / channel seed (default {DEFAULT_SEED})")
        if scene:
            sp.add_argument("--preset", choices=sorted(PRESETS), help="noise preset (default kinect-like)")
            sp.add_argument("--cameras", type=int, help="number of cameras in the ring")

    g = sub.add_parser("generate", help="write a synthetic scene bundle")
    common(g)
    g.add_argument("--out", required=True, help="bundle directory")
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("calibrate", help="calibrate one scene at one match ratio")
    common(c)
    c.add_argument("--bundle", help="scene bundle (default: generate in memory)")
    c.add_argument("--ratio", type=float, help="match distance ratio (default 3)")
    c.add_argument("--jacobians", choices=("numeric", "analytic"))
    c.add_argument("--out", help="directory for poses.txt, graph.txt and report.txt")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("sweep", help="calibrate across match ratios, CSV on stdout")
    common(s)
    s.add_argument("--bundle", help="scene bundle (default: generate in memory)")
    s.add_argument("--ratios", type=_parse_ratios, help="comma separated, ascending")
    s.add_argument("--jacobians", choices=("numeric", "analytic"))
    s.add_argument("--out", help="directory for sweep.csv")
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("merge", help="merge all depth maps into one PLY cloud")
    common(m, scene=False)
    m.add_argument("--bundle", required=True)
    m.add_argument("--poses", required=True, help="NODE file, e.g. poses.txt from calibrate")
    m.add_argument("--out", required=True, help="directory for merged.ply")
    m.set_defaults(func=cmd_merge)

    n = sub.add_parser("netsim", help="simulate streaming frame sets over the capture network")
    common(n, scene=False)
    n.add_argument("--cameras", type=int, help="sender count (default 12)")
    n.add_argument("--frames", type=int, default=10, help="frame sets to send")
    n.add_argument("--width", type=int, default=640)
    n.add_argument("--height", type=int, default=480)
    n.add_argument("--bandwidth", type=float, help="link bits per second (default 1e9)")
    n.add_argument("--loss", type=float, help="datagram loss probability")
    n.add_argument("--latency", type=float, help="one-way latency in seconds")
    n.add_argument("--mtu", type=int)
    n.add_argument("--retries", type=int, help="resend rounds per incomplete set")
    n.set_defaults(func=cmd_netsim)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"panorig: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPose as exc:
        print(f"panorig: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PanorigError as exc:
        pair = getattr(exc, "pair", None)
        where = f" (pair {pair[0]}-{pair[1]})" if pair else ""
        print(f"panorig: {type(exc).__name__}{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"panorig: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
