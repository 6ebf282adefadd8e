"""Command-line interface.

Subcommands cover the whole toolkit: ``modulate``/``demod`` for the
signal chain, ``leakage`` for the audibility audit, ``field``/
``layout-rank``/``sweep`` for the transmitter geometry, and
``attack-sim``/``scan-replay``/``rsa`` for the protocol and world model.
Report-producing commands also render a matplotlib figure next to the
delimited/JSON output (disable with ``--no-figure``).

Exit codes: 0 success, 1 validation/config error, 2 runtime failure.
Config values may be overridden from the environment with the
``METASONIC_`` prefix, e.g. ``METASONIC_SEED=7`` or
``METASONIC_ATTACK__WINDOW_S=5``.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, acoustics, field as fieldmod, plots, sim
from .attack import AttackConfig, run_attack
from .feedback import (AbruptFilterParams, CommandRecorder, LogReplaySource,
                       feedback_round, load_scan_log)
from .signals import (NonlinearCoeffs, correlation, modulate,
                      read_wav, recover_baseband, write_wav)

ENV_PREFIX = "METASONIC_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SignalsConfig:
    sample_rate_hz: int = 192_000
    carrier_hz: float = 40_200.0
    depth: float = 1.0
    a1: float = 1.0
    a2: float = 0.1
    cutoff_hz: float = 8_000.0


@dataclass(frozen=True)
class FeedbackConfig:
    delta_db_threshold: float = 20.0
    ramp_window: int = 3
    strong_floor_dbm: float = -65.0

    def filter_params(self) -> AbruptFilterParams:
        return AbruptFilterParams(self.delta_db_threshold, self.ramp_window,
                                  self.strong_floor_dbm)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    outdir: str = "."
    verbosity: int = 0
    signals: SignalsConfig = field(default_factory=SignalsConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    feedback: FeedbackConfig = field(default_factory=FeedbackConfig)


_SECTION_TYPES = {"signals": SignalsConfig, "attack": AttackConfig, "feedback": FeedbackConfig}
_GLOBAL_KEYS = {"seed": int, "outdir": str, "verbosity": int}


def _env_overrides() -> dict:
    out: dict = {}
    for key, raw in os.environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower()
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if "__" in path:
            section, name = path.split("__", 1)
            out.setdefault(section, {})[name] = value
        else:
            out[path] = value
    return out


def _build_section(section_name: str, data: dict, source: str):
    cls = _SECTION_TYPES[section_name]
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{source}: section '{section_name}': unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: section '{section_name}': {exc}") from None


def load_config(path=None) -> RunConfig:
    """Load a run configuration (strict: unknown keys are rejected).

    Environment variables with the ``METASONIC_`` prefix override file
    values; with no path, defaults plus environment overrides apply.
    """
    data: dict = {}
    source = str(path) if path else "<defaults>"
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc})") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    for section, override in _env_overrides().items():
        if isinstance(override, dict):
            data.setdefault(section, {}).update(override)
        else:
            data[section] = override
    unknown = set(data) - set(_GLOBAL_KEYS) - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")
    kwargs: dict = {}
    for key, caster in _GLOBAL_KEYS.items():
        if key in data:
            try:
                kwargs[key] = caster(data[key])
            except (TypeError, ValueError):
                raise ConfigError(f"{source}: key '{key}' must be {caster.__name__}") from None
    for section in _SECTION_TYPES:
        if section in data:
            if not isinstance(data[section], dict):
                raise ConfigError(f"{source}: section '{section}' must be an object")
            kwargs[section] = _build_section(section, data[section], source)
    return RunConfig(**kwargs)


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits 1 on usage errors (not argparse's 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _default_out(args, name: str) -> Path:
    outdir = Path(getattr(args, "outdir", "."))
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir / name


def _figure_path(args, out_path: Path) -> Path | None:
    if getattr(args, "no_figure", False):
        return None
    if getattr(args, "figure", None):
        return Path(args.figure)
    return out_path.with_suffix(".png")


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _coeffs(args, cfg: RunConfig) -> NonlinearCoeffs:
    a1 = cfg.signals.a1 if args.a1 is None else args.a1
    a2 = cfg.signals.a2 if args.a2 is None else args.a2
    return NonlinearCoeffs(a1=a1, a2=a2)


# --- subcommand handlers ----------------------------------------------------


def _cmd_modulate(args) -> int:
    cfg = load_config(args.config)
    wf = read_wav(args.infile)
    carrier = cfg.signals.carrier_hz if args.carrier_hz is None else args.carrier_hz
    depth = cfg.signals.depth if args.depth is None else args.depth
    out = modulate(wf, carrier, depth)
    write_wav(args.out, out)
    print(f"modulated {args.infile} onto {carrier:g} Hz (depth {depth:g}) -> {args.out}")
    return 0


def _cmd_demod(args) -> int:
    cfg = load_config(args.config)
    wf = read_wav(args.infile)
    cutoff = cfg.signals.cutoff_hz if args.cutoff_hz is None else args.cutoff_hz
    coeffs = _coeffs(args, cfg)
    recovered = recover_baseband(wf, coeffs, cutoff)
    write_wav(args.out, recovered)
    corr = None
    reference = None
    if args.reference:
        reference = read_wav(args.reference)
        if reference.sample_rate_hz != recovered.sample_rate_hz:
            raise ConfigError("reference sample rate differs from input")
        if reference.samples.size != recovered.samples.size:
            raise ConfigError("reference length differs from input")
        corr = correlation(recovered, reference)
    report_path = Path(args.report) if args.report else Path(args.out).with_suffix(".report.json")
    _write_json(report_path, {
        "schema": "demod-report/1",
        "input": str(args.infile),
        "output": str(args.out),
        "a1": coeffs.a1,
        "a2": coeffs.a2,
        "cutoff_hz": cutoff,
        "correlation": corr,
        "degenerate": bool(recovered.meta.get("degenerate", False)),
    })
    fig = _figure_path(args, report_path)
    if fig:
        plots.save_demod_figure(recovered, fig, reference)
    if corr is not None:
        print(f"recovered baseband correlation vs reference: {corr:.6f}")
    print(f"report -> {report_path}")
    return 0


def _parse_directions(raw: str):
    directions = tuple(d.strip() for d in raw.split(",") if d.strip())
    for d in directions:
        if d not in acoustics.DIRECTIONS:
            raise ConfigError(f"unknown direction {d!r}; expected subset of {acoustics.DIRECTIONS}")
    return directions


def _cmd_leakage(args) -> int:
    wf = read_wav(args.infile)
    profile = (acoustics.load_profile_dir(args.profile_dir)
               if args.profile_dir else acoustics.default_insertion_loss())
    report = acoustics.leakage_report(wf, profile, args.full_scale_db_spl,
                                      _parse_directions(args.directions))
    out = Path(args.out) if args.out else _default_out(args, "leakage_report.json")
    _write_json(out, report.to_dict())
    fig = _figure_path(args, out)
    if fig:
        plots.save_leakage_figure(report, fig)
    failing = sum(1 for rows in report.directions.values() for b in rows if not b.passed)
    print(f"leakage audit: {'PASS' if report.passed else 'FAIL'} "
          f"({failing} failing bands) -> {out}")
    return 0


def _mask_from_args(args):
    if getattr(args, "no_mask", False):
        return None
    return fieldmod.ObstructionMask(
        open_disk_center=(0.0, 0.0),
        open_disk_diameter_m=args.mask_diameter_mm * 1e-3,
        blocked_attenuation_db=args.mask_attenuation_db)


def _cmd_field(args) -> int:
    if args.layout:
        layout = fieldmod.load_layout_json(args.layout)
    else:
        by_name = {l.name: l for l in fieldmod.builtin_layouts()}
        if args.builtin not in by_name:
            raise ConfigError(f"unknown builtin layout {args.builtin!r}; known: {sorted(by_name)}")
        layout = by_name[args.builtin]
    half = args.extent_mm * 1e-3 / 2.0
    axis = np.linspace(-half, half, args.grid_n)
    xs, ys = np.meshgrid(axis, axis)
    pts = np.column_stack([xs.ravel(), ys.ravel(),
                           np.full(xs.size, args.plane_z_mm * 1e-3)])
    grid = fieldmod.array_field(layout, args.freq_hz, pts, mask=_mask_from_args(args))
    out = Path(args.out) if args.out else _default_out(args, "field.csv")
    fieldmod.field_to_csv(out, grid)
    fig = _figure_path(args, out)
    if fig:
        plots.save_field_figure(grid, fig)
    print(f"field of {layout.name} at z={args.plane_z_mm:g} mm ({grid.points.shape[0]} points) -> {out}")
    return 0


def _cmd_layout_rank(args) -> int:
    if args.layout_dir:
        paths = sorted(Path(args.layout_dir).glob("*.json"))
        if len(paths) < 2:
            raise ConfigError(f"{args.layout_dir}: need at least two layout JSON files")
        layouts = [fieldmod.load_layout_json(p) for p in paths]
    else:
        layouts = fieldmod.builtin_layouts()
    mask = _mask_from_args(args)
    if mask is None:
        raise ConfigError("layout-rank requires the aperture mask (drop --no-mask)")
    rows = fieldmod.rank_layouts(layouts, args.freq_hz, args.range_mm * 1e-3, mask)
    out = Path(args.out) if args.out else _default_out(args, "layout_rank.csv")
    with open(out, "w", newline="") as fh:
        import csv as _csv

        writer = _csv.writer(fh)
        writer.writerow(["rank", "name", "planarity_rad", "on_axis_spl_db"])
        for i, r in enumerate(rows, start=1):
            writer.writerow([i, r.name, f"{r.planarity_rad:.9f}", f"{r.on_axis_spl_db:.9f}"])
    fig = _figure_path(args, out)
    if fig:
        plots.save_rank_figure(rows, fig)
    for i, r in enumerate(rows, start=1):
        print(f"{i}. {r.name}: planarity {r.planarity_rad:.4f} rad, "
              f"on-axis {r.on_axis_spl_db:+.2f} dB")
    print(f"ranking -> {out}")
    return 0


def _cmd_sweep(args) -> int:
    table = (fieldmod.load_sweep_table_csv(args.table)
             if args.table else fieldmod.DEFAULT_ENHANCEMENT_TABLE)
    best = fieldmod.sweep_parameters(table)
    print(f"{best.n_speakers} speakers, {best.range_mm:g} mm, "
          f"{best.carrier_hz:g} Hz, {best.max_spl_db:g} dB")
    if args.out:
        _write_json(args.out, {
            "schema": "sweep-best/1",
            "n_speakers": best.n_speakers,
            "range_mm": best.range_mm,
            "carrier_hz": best.carrier_hz,
            "max_spl_db": best.max_spl_db,
        })
    return 0


def _cmd_attack_sim(args) -> int:
    cfg = load_config(args.config)
    script = sim.load_environment_script(args.env)
    seed = cfg.seed if args.seed is None else args.seed
    env = sim.Environment(script)
    report = run_attack(cfg.attack, env, seed=seed,
                        filter_params=cfg.feedback.filter_params())
    out = Path(args.out) if args.out else _default_out(args, "attack_report.json")
    Path(out).write_text(report.to_json())
    if args.events:
        sim.write_event_log(args.events, env.event_log)
    fig = _figure_path(args, out)
    if fig:
        plots.save_attack_figure(report, fig)
    state = "confirmed" if report.success else ("aborted" if report.aborted else "not confirmed")
    targets = ", ".join(report.target_bssids) or "-"
    print(f"attack {state}; targets: {targets}; angles tried: {len(report.angle_results)}; "
          f"report -> {out}")
    return 0


def _cmd_scan_replay(args) -> int:
    cfg = load_config(args.config)
    snapshots = load_scan_log(args.log)
    source = LogReplaySource(snapshots)
    recorder = CommandRecorder()
    window = cfg.attack.window_s if args.window_s is None else args.window_s
    outcome = feedback_round(source, recorder, window, cfg.feedback.filter_params())
    out = Path(args.out) if args.out else _default_out(args, "feedback_outcome.json")
    _write_json(out, outcome.to_dict())
    state = "success" if outcome.success else ("aborted" if outcome.aborted else "failure")
    print(f"feedback round: {state}; targets: {', '.join(sorted(outcome.target_ids)) or '-'}; "
          f"outcome -> {out}")
    return 0


def _parse_distances(raw: str) -> list:
    if ":" in raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise ConfigError("distance range must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ConfigError("bad distance range")
        out = []
        d = start
        while d <= stop + 1e-9:
            out.append(round(d, 6))
            d += step
        return out
    return [float(p) for p in raw.split(",") if p.strip()]


def _cmd_rsa(args) -> int:
    cfg = load_config(args.config)
    script = sim.load_environment_script(args.env)
    distances = _parse_distances(args.distances) if args.distances else list(sim.DEFAULT_RSA_DISTANCES)
    seed = cfg.seed if args.seed is None else args.seed
    estimate = sim.estimate_rsa(script, cfg.attack, distances, trials=args.trials, seed=seed)
    out = Path(args.out) if args.out else _default_out(args, "rsa.csv")
    sim.rsa_rows_to_csv(out, estimate)
    fig = _figure_path(args, out)
    if fig:
        plots.save_rsa_figure(estimate, fig)
    rsa = "below grid" if estimate.rsa_m is None else f"{estimate.rsa_m:g} m"
    print(f"RSA = {rsa} over {len(distances)} distances x {args.trials} trials -> {out}")
    return 0


# --- parser wiring ----------------------------------------------------------


def _add_common(p, config=True, outdir=True):
    if config:
        p.add_argument("--config", metavar="JSON",
                       help="run configuration file (strict JSON; env prefix METASONIC_)")
    if outdir:
        p.add_argument("--outdir", default=".", metavar="DIR",
                       help="directory for default output paths")


def _add_figure_flags(p):
    p.add_argument("--figure", metavar="PNG", help="explicit figure path")
    p.add_argument("--no-figure", action="store_true", help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metasonic",
                     description="Simulation toolkit for ultrasonic voice-command "
                                 "injection studies.",
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("modulate", help="WAV baseband -> modulated ultrasound WAV",
                       formatter_class=fmt)
    p.add_argument("--in", dest="infile", required=True, metavar="WAV", help="baseband input")
    p.add_argument("--out", required=True, metavar="WAV", help="modulated output (float32)")
    p.add_argument("--carrier-hz", type=float, default=None, help="carrier frequency in Hz")
    p.add_argument("--depth", type=float, default=None, help="modulation depth in (0, 1]")
    _add_common(p, outdir=False)
    p.set_defaults(handler=_cmd_modulate)

    p = sub.add_parser("demod", help="modulated WAV -> recovered baseband + report",
                       formatter_class=fmt)
    p.add_argument("--in", dest="infile", required=True, metavar="WAV")
    p.add_argument("--out", required=True, metavar="WAV", help="recovered baseband output")
    p.add_argument("--reference", metavar="WAV", help="original baseband for correlation")
    p.add_argument("--report", metavar="JSON", help="report path (default: <out>.report.json)")
    p.add_argument("--a1", type=float, default=None, help="linear mic coefficient")
    p.add_argument("--a2", type=float, default=None, help="quadratic mic coefficient")
    p.add_argument("--cutoff-hz", type=float, default=None, help="receiver low-pass cutoff in Hz")
    _add_figure_flags(p)
    _add_common(p, outdir=False)
    p.set_defaults(handler=_cmd_demod)

    p = sub.add_parser("leakage", help="WAV + shield profile -> audibility audit JSON",
                       formatter_class=fmt)
    p.add_argument("--in", dest="infile", required=True, metavar="WAV", help="source waveform")
    p.add_argument("--profile-dir", metavar="DIR",
                   help="front/side/back.csv curves (default: shipped profile)")
    p.add_argument("--full-scale-db-spl", type=float, default=94.0,
                   help="SPL assigned to a full-scale sine, dB")
    p.add_argument("--directions", default="front,side,back", help="comma list of directions")
    p.add_argument("--out", metavar="JSON", help="report path")
    _add_figure_flags(p)
    _add_common(p, config=False)
    p.set_defaults(handler=_cmd_leakage)

    p = sub.add_parser("field", help="layout -> complex pressure grid CSV",
                       formatter_class=fmt)
    p.add_argument("--layout", metavar="JSON", help="layout file (positions in mm)")
    p.add_argument("--builtin", default="grid_2x6", help="builtin layout name when no --layout")
    p.add_argument("--freq-hz", type=float, default=40_200.0, help="frequency in Hz")
    p.add_argument("--plane-z-mm", type=float, default=18.0, help="evaluation plane height, mm")
    p.add_argument("--extent-mm", type=float, default=22.5, help="square plane width, mm")
    p.add_argument("--grid-n", type=int, default=41, help="points per plane axis")
    p.add_argument("--mask-diameter-mm", type=float, default=22.5, help="open-disk diameter, mm")
    p.add_argument("--mask-attenuation-db", type=float, default=40.0,
                   help="attenuation of blocked elements, dB")
    p.add_argument("--no-mask", action="store_true", help="disable the aperture mask")
    p.add_argument("--out", metavar="CSV", help="field CSV path")
    _add_figure_flags(p)
    _add_common(p, config=False)
    p.set_defaults(handler=_cmd_field)

    p = sub.add_parser("layout-rank", help="rank candidate layouts by plane-wave quality",
                       formatter_class=fmt)
    p.add_argument("--layout-dir", metavar="DIR", help="directory of layout JSON files "
                                                       "(default: the six shipped layouts)")
    p.add_argument("--freq-hz", type=float, default=40_200.0, help="frequency in Hz")
    p.add_argument("--range-mm", type=float, default=18.0, help="array-to-aperture range, mm")
    p.add_argument("--mask-diameter-mm", type=float, default=22.5, help="open-disk diameter, mm")
    p.add_argument("--mask-attenuation-db", type=float, default=40.0,
                   help="attenuation of blocked elements, dB")
    p.add_argument("--out", metavar="CSV", help="ranking CSV path")
    _add_figure_flags(p)
    _add_common(p, config=False)
    p.set_defaults(handler=_cmd_layout_rank, no_mask=False)

    p = sub.add_parser("sweep", help="pick the best transmitter configuration from a table",
                       formatter_class=fmt)
    p.add_argument("--table", metavar="CSV",
                   help="n_speakers,range_mm,carrier_hz,max_spl_db rows (default: bundled table)")
    p.add_argument("--out", metavar="JSON", help="optionally write the best row as JSON")
    p.set_defaults(handler=_cmd_sweep)

    p = sub.add_parser("attack-sim", help="run a scripted end-to-end attack session",
                       formatter_class=fmt)
    p.add_argument("--env", required=True, metavar="JSON", help="environment script")
    p.add_argument("--seed", type=int, default=None, help="session seed (fixes all randomness)")
    p.add_argument("--out", metavar="JSON", help="attack report path")
    p.add_argument("--events", metavar="JSONL", help="also write the world event log")
    _add_figure_flags(p)
    _add_common(p)
    p.set_defaults(handler=_cmd_attack_sim)

    p = sub.add_parser("scan-replay", help="run one feedback round over a recorded scan log",
                       formatter_class=fmt)
    p.add_argument("--log", required=True, metavar="JSONL", help="scan log (t/ssid/bssid/rssi)")
    p.add_argument("--window-s", type=float, default=None, help="settle window, seconds")
    p.add_argument("--out", metavar="JSON", help="outcome path")
    _add_common(p)
    p.set_defaults(handler=_cmd_scan_replay)

    p = sub.add_parser("rsa", help="estimate the range of successful attack over distances",
                       formatter_class=fmt)
    p.add_argument("--env", required=True, metavar="JSON", help="environment template")
    p.add_argument("--distances", metavar="SPEC",
                   help="start:stop:step or comma list, meters (default: 5.35..9.85 by 0.5)")
    p.add_argument("--trials", type=int, default=200, help="transmissions per distance (>= 30)")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--out", metavar="CSV", help="per-distance table path")
    _add_figure_flags(p)
    _add_common(p)
    p.set_defaults(handler=_cmd_rsa)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_help(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not hasattr(args, "handler"):
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.handler(args)
    except (ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - unexpected failure path
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
