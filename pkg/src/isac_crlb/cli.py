"""Command-line entry point: config parsing, subcommands, table emission.

Subcommands: `crb` (single-scene bound report), `pareto` (trade-off sweep),
`sequential` (per-split design comparison), `sweep` (Monte-Carlo sweeps),
`validate` (numerical self-checks).

The config file is INI-style with strict schema validation: unknown sections
or keys are errors, so typos in physics parameters cannot pass silently. An
empty (or absent) config runs on the built-in full-scale defaults.

CSV output is bit-stable for a fixed (config, seed): fixed column order,
9 significant digits, LF endings, and unresolved values emitted as empty
cells next to explicit flag columns. JSON output carries the same rows plus
flags and run metadata.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (ExperimentConfig, RunRecord, aggregate,
                          desk_scenario, run_experiment)
from .fisher import crb_extract, strided_subcarriers
from .optimizer import SolverConfig, uniform_beamformer
from .scenario import (NoiseModel, Scenario, ThresholdSet, dbm_to_watts,
                       derive_bp_params, derive_ms_params, effective_slots,
                       full_symbol_grid)
from .sequential import loss as deviation_loss


class ConfigError(Exception):
    """Malformed or schema-violating configuration."""


# -- schema ---------------------------------------------------------------------

def _positive(x):
    return x > 0


def _non_negative(x):
    return x >= 0


def _fraction_list(xs):
    return all(0.0 <= x <= 1.0 for x in xs)


# key -> (type tag, default, validator or None)
_SCHEMA = {
    "system": {
        "n_bs": ("int", 64, _positive),
        "n_ue": ("int", 16, _positive),
        "carrier_hz": ("float", 28e9, _positive),
        "bandwidth_hz": ("float", 120e6, _positive),
        "n_subcarriers": ("int", 1024, _positive),
        "n_slots": ("int", 16, _positive),
        "symbols_per_slot": ("int", 100, _positive),
        "power_budget_dbm": ("float", -20.0, None),
        "power_budget_watts": ("float", None, _positive),
        "clock_bias_s": ("float", 1e-6, None),
        "orientation_offset_deg": ("float", 110.0, None),
        "bs_orientation_deg": ("float", 0.0, None),
    },
    "noise": {
        "psd_dbm_hz": ("float", -173.0, None),
        "noise_figure_db": ("float", 10.0, None),
        "path_loss_exponent": ("float", 3.5, _positive),
        "shadow_sigma_db": ("float", 8.0, _non_negative),
        "shadowing": ("bool", False, None),
        "rcs_ue_m2": ("float", 10.0, _positive),
        "rcs_pt_m2": ("float", 10.0, _positive),
    },
    "thresholds": {
        "ms_peb_ue_m": ("float", 0.5, _positive),
        "bp_peb_ue_m": ("float", 0.1, _positive),
        "bp_veb_ue_mps": ("float", 10.0, _positive),
        "bp_peb_pt_m": ("float", 0.2, _positive),
        "ms_peb_pt_m": ("float", 1.0, _positive),
        "w_ms_peb_ue": ("float", 1.0, _non_negative),
        "w_bp_peb_ue": ("float", 1.0, _non_negative),
        "w_bp_veb_ue": ("float", 1.0, _non_negative),
        "w_bp_peb_pt": ("float", 1.0, _non_negative),
        "w_ms_peb_pt": ("float", 1.0, _non_negative),
    },
    "geometry": {
        "ue_position": ("vec2", None, None),
        "pt_positions": ("vec2list", None, None),
        "num_targets": ("int", 2, _non_negative),
        "ue_speed_mps": ("float", 10.0, _non_negative),
        "ue_heading_deg": ("float", 115.0, None),
        "range_min_m": ("float", 5.0, _positive),
        "range_max_m": ("float", 100.0, _positive),
        "sector_deg": ("float", 60.0, _positive),
    },
    "experiment": {
        "sweep": ("str", "num_targets", None),
        "sweep_values": ("floatlist", (1.0, 2.0, 3.0, 4.0), None),
        "realizations": ("int", 20, _positive),
        "master_seed": ("int", 0, None),
        "designs": ("strlist", ("full_ms", "full_bp"), None),
        "decimation": ("int", 64, _positive),
        "beamformer": ("str", "p1", None),
        "two_sided_loss": ("bool", False, None),
    },
    "solver": {
        "mode": ("str", "codebook", None),
        "max_iters": ("int", 300, _positive),
        "step_init": ("float", 0.1, _positive),
        "tolerance": ("float", 1e-6, _positive),
        "restarts": ("int", 8, _positive),
        "rho_grid": ("floatlist", tuple(np.round(np.linspace(0, 1, 21), 6)),
                     _fraction_list),
        "seed": ("int", 0, None),
        "per_slot_weights": ("bool", False, None),
    },
}


def _convert(raw: str, kind: str, where: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "str":
            return raw.strip()
        if kind == "floatlist":
            return tuple(float(t) for t in raw.replace(";", ",").split(",") if t.strip())
        if kind == "strlist":
            return tuple(t.strip() for t in raw.split(",") if t.strip())
        if kind == "vec2":
            parts = [float(t) for t in raw.split(",")]
            if len(parts) != 2:
                raise ValueError(raw)
            return tuple(parts)
        if kind == "vec2list":
            out = []
            for chunk in raw.split(";"):
                if not chunk.strip():
                    continue
                parts = [float(t) for t in chunk.split(",")]
                if len(parts) != 2:
                    raise ValueError(chunk)
                out.append(tuple(parts))
            return tuple(out)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {where} = {raw!r} as {kind}") from exc
    raise ConfigError(f"unknown type tag {kind}")


def parse_config(path: str | os.PathLike | None) -> dict:
    """Validated settings dict; every key present (defaults fill the gaps)."""
    settings = {sec: {k: spec[1] for k, spec in keys.items()}
                for sec, keys in _SCHEMA.items()}
    settings["_config_text"] = ""
    if path is None:
        return settings

    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    settings["_config_text"] = text
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(
                    f"unknown key '{key}' in section [{section}]")
            kind, _, validator = _SCHEMA[section][key]
            value = _convert(raw, kind, f"[{section}] {key}")
            if validator is not None and not validator(value):
                raise ConfigError(f"invalid value for [{section}] {key}: {raw}")
            settings[section][key] = value

    if settings["experiment"]["sweep"] not in ("num_targets", "speed", "rho",
                                               "alpha"):
        raise ConfigError("experiment sweep must be one of "
                          "num_targets/speed/rho/alpha")
    if settings["experiment"]["beamformer"] not in ("p1", "uniform"):
        raise ConfigError("experiment beamformer must be 'p1' or 'uniform'")
    if settings["geometry"]["range_min_m"] >= settings["geometry"]["range_max_m"]:
        raise ConfigError("geometry range_min_m must be below range_max_m")
    return settings


_FULL_SCALE = {"n_bs": 64, "n_ue": 16, "n_subcarriers": 1024, "n_slots": 16,
               "symbols_per_slot": 100, "power_budget_dbm": -20.0,
               "power_budget_watts": None}


def build_scenario(settings: dict, full_scale: bool = False) -> Scenario:
    sysc = dict(settings["system"])
    if full_scale:
        sysc.update(_FULL_SCALE)
    geo = settings["geometry"]
    noi = settings["noise"]
    if sysc["power_budget_watts"] is not None:
        budget = sysc["power_budget_watts"]
    else:
        budget = dbm_to_watts(sysc["power_budget_dbm"])

    k = geo["num_targets"]
    if geo["pt_positions"] is not None:
        pts = np.asarray(geo["pt_positions"], dtype=float)
        k = pts.shape[0]
    else:
        # deterministic fan of targets in front of the broadside
        radius = 35.0 + 10.0 * np.arange(k)
        ang = (np.linspace(-0.7, 0.7, k) if k else np.empty(0)) \
            + math.radians(sysc["bs_orientation_deg"])
        pts = np.column_stack([radius * np.cos(ang), radius * np.sin(ang)]) \
            if k else np.empty((0, 2))
    if geo["ue_position"] is not None:
        ue = np.asarray(geo["ue_position"], dtype=float)
    else:
        ang = math.radians(sysc["bs_orientation_deg"]) + 0.25
        ue = 40.0 * np.array([math.cos(ang), math.sin(ang)])
    heading = math.radians(geo["ue_heading_deg"])
    vel = geo["ue_speed_mps"] * np.array([math.cos(heading),
                                          math.sin(heading)])
    return Scenario(
        ue_position=ue, ue_velocity=vel, pt_positions=pts,
        bs_orientation_rad=math.radians(sysc["bs_orientation_deg"]),
        n_bs=sysc["n_bs"], n_ue=sysc["n_ue"], carrier_hz=sysc["carrier_hz"],
        bandwidth_hz=sysc["bandwidth_hz"],
        n_subcarriers=sysc["n_subcarriers"], n_slots=sysc["n_slots"],
        symbols_per_slot=sysc["symbols_per_slot"], power_budget_watts=budget,
        clock_bias_s=sysc["clock_bias_s"],
        orientation_offset_rad=math.radians(sysc["orientation_offset_deg"]),
        noise=NoiseModel(psd_dbm_hz=noi["psd_dbm_hz"],
                         noise_figure_db=noi["noise_figure_db"],
                         path_loss_exponent=noi["path_loss_exponent"],
                         shadow_sigma_db=noi["shadow_sigma_db"]),
        rcs_ue_m2=noi["rcs_ue_m2"], rcs_pt_m2=noi["rcs_pt_m2"],
        shadowing=noi["shadowing"])


def build_experiment(settings: dict, args, designs=None, sweep=None,
                     sweep_values=None) -> ExperimentConfig:
    scenario = build_scenario(settings, args.full_scale)
    exp = settings["experiment"]
    sol = settings["solver"]
    thr = settings["thresholds"]
    geo = settings["geometry"]
    solver = SolverConfig(
        mode=sol["mode"], max_iters=sol["max_iters"],
        step_init=sol["step_init"], tolerance=sol["tolerance"],
        restarts=sol["restarts"], rho_grid=tuple(sol["rho_grid"]),
        seed=sol["seed"], per_slot_weights=sol["per_slot_weights"])
    thresholds = ThresholdSet(
        ms_peb_ue_m=thr["ms_peb_ue_m"], bp_peb_ue_m=thr["bp_peb_ue_m"],
        bp_veb_ue_mps=thr["bp_veb_ue_mps"], bp_peb_pt_m=thr["bp_peb_pt_m"],
        ms_peb_pt_m=thr["ms_peb_pt_m"], w_ms_peb_ue=thr["w_ms_peb_ue"],
        w_bp_peb_ue=thr["w_bp_peb_ue"], w_bp_veb_ue=thr["w_bp_veb_ue"],
        w_bp_peb_pt=thr["w_bp_peb_pt"], w_ms_peb_pt=thr["w_ms_peb_pt"])
    decimation = scenario.n_subcarriers if args.exact else exp["decimation"]
    master_seed = args.seed if args.seed is not None else exp["master_seed"]
    return ExperimentConfig(
        base_scenario=scenario,
        sweep_variable=sweep or exp["sweep"],
        sweep_values=tuple(sweep_values if sweep_values is not None
                           else exp["sweep_values"]),
        realizations=exp["realizations"], master_seed=master_seed,
        designs=tuple(designs if designs is not None else exp["designs"]),
        decimation=decimation, solver=solver, thresholds=thresholds,
        beamformer_policy=exp["beamformer"],
        range_bounds=(geo["range_min_m"], geo["range_max_m"]),
        sector_rad=math.radians(geo["sector_deg"]),
        two_sided=exp["two_sided_loss"])


# -- table emission ----------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}" if math.isfinite(value) else ""
    return str(value)


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(c, "")) for c in columns))
    path.write_bytes(("\n".join(lines) + "\n").encode())


def _jsonable(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, (tuple, list, np.ndarray)):
        return [_jsonable(v) for v in value]
    return value


def write_json(path: Path, payload: dict) -> None:
    path.write_bytes((json.dumps(payload, indent=2, sort_keys=True,
                                 default=_jsonable) + "\n").encode())


def _metadata(args, settings, seed) -> dict:
    return {
        "version": __version__,
        "seed": seed,
        "config_hash": hashlib.sha256(
            settings["_config_text"].encode()).hexdigest(),
        "format": args.format,
    }


def _record_row(rec: RunRecord) -> dict:
    return {
        "sweep_value": rec.sweep_value, "realization": rec.realization,
        "design": rec.design, "peb_ue": rec.peb_ue, "veb_ue": rec.veb_ue,
        "peb_pt_median": rec.peb_pt_median, "loss": rec.loss,
        "rho_star": rec.rho_star, "singular_ue_pos": rec.singular_ue_pos,
        "singular_ue_vel": rec.singular_ue_vel,
        "singular_pt_count": rec.singular_pt_count,
        "n_targets": rec.n_targets, "l_eff": rec.l_eff,
        "failed": rec.failed, "error": rec.error.replace(",", ";"),
    }


_RECORD_COLUMNS = ["sweep_value", "realization", "design", "peb_ue", "veb_ue",
                   "peb_pt_median", "loss", "rho_star", "singular_ue_pos",
                   "singular_ue_vel", "singular_pt_count", "n_targets",
                   "l_eff", "failed", "error"]

_SUMMARY_COLUMNS = ["sweep_value", "design", "n_runs", "n_failed",
                    "peb_ue_median", "peb_ue_mean_resolved", "peb_ue_p10",
                    "peb_ue_p90", "peb_ue_n_resolved", "veb_ue_median",
                    "veb_ue_mean_resolved", "veb_ue_p10", "veb_ue_p90",
                    "veb_ue_n_resolved", "peb_pt_median_median",
                    "peb_pt_median_mean_resolved", "peb_pt_median_p10",
                    "peb_pt_median_p90", "peb_pt_median_n_resolved",
                    "loss_median", "loss_mean_resolved", "loss_p10",
                    "loss_p90", "loss_n_resolved", "singular_pt_runs",
                    "singular_vel_runs"]


class _OutputSink:
    """Collects output files so that failed runs leave nothing behind."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.written: list[Path] = []

    def csv(self, name, columns, rows):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / f"{name}.csv"
        write_csv(path, columns, rows)
        self.written.append(path)
        return path

    def json(self, name, payload):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / f"{name}.json"
        write_json(path, payload)
        self.written.append(path)
        return path

    def cleanup(self):
        for path in self.written:
            try:
                path.unlink()
            except OSError:
                pass


# -- subcommands --------------------------------------------------------------------

def _cmd_crb(args, settings, sink: _OutputSink) -> int:
    scenario = build_scenario(settings, args.full_scale)
    decimation = scenario.n_subcarriers if args.exact \
        else settings["experiment"]["decimation"]
    subcarriers = strided_subcarriers(scenario.n_subcarriers,
                                      min(decimation, scenario.n_subcarriers))
    n_slots = effective_slots(scenario)
    grid = full_symbol_grid(n_slots, scenario.symbols_per_slot)
    bf = uniform_beamformer(scenario)
    from .fisher import StageInformation

    rows = []
    for modality, params in (("ms", derive_ms_params(scenario)),
                             ("bp", derive_bp_params(scenario))):
        stage = StageInformation(params, scenario, grid, subcarriers)
        rep = crb_extract(stage.eta(bf))
        rows.append({
            "modality": modality, "peb_ue": rep.peb_ue, "veb_ue": rep.veb_ue,
            "peb_pt_median": float(np.median(rep.peb_pt)) if rep.peb_pt.size
            else math.nan,
            "singular_ue_pos": rep.singular_ue_pos,
            "singular_ue_vel": rep.singular_ue_vel,
            "singular_pt_count": int(np.sum(rep.singular_pt)),
            "condition_number": rep.condition_number,
            "raw_trace": rep.raw_trace_position, "l_eff": n_slots,
        })
    columns = ["modality", "peb_ue", "veb_ue", "peb_pt_median",
               "singular_ue_pos", "singular_ue_vel", "singular_pt_count",
               "condition_number", "raw_trace", "l_eff"]
    if args.format == "json":
        sink.json("crb", {"metadata": _metadata(args, settings, None),
                          "columns": columns, "rows": rows})
    else:
        sink.csv("crb", columns, rows)
    return 0


def _cmd_pareto(args, settings, sink: _OutputSink) -> int:
    sweep_values = None
    if settings["experiment"]["sweep"] == "alpha":
        sweep_values = settings["experiment"]["sweep_values"]
    cfg = build_experiment(settings, args, designs=("p1",), sweep="alpha",
                           sweep_values=sweep_values or (0.0, 0.25, 0.5,
                                                         0.75, 1.0))
    records = run_experiment(cfg, threads=args.threads)
    columns = ["alpha", "realization", "objective", "crb_trace_ms",
               "crb_trace_bp", "peb_ue_ms", "peb_ue_bp", "veb_ue_bp",
               "energy_ue", "energy_pt_max", "failed"]
    rows = []
    for rec in records:
        row = {"alpha": rec.sweep_value, "realization": rec.realization,
               "failed": rec.failed}
        row.update({k: rec.extras.get(k, math.nan) for k in columns[2:-1]})
        rows.append(row)
    if args.format == "json":
        sink.json("pareto", {"metadata": _metadata(args, settings,
                                                   cfg.master_seed),
                             "columns": columns, "rows": rows})
    else:
        sink.csv("pareto", columns, rows)
    return 0


def _cmd_sequential(args, settings, sink: _OutputSink) -> int:
    sweep_values = None
    if settings["experiment"]["sweep"] == "rho":
        sweep_values = settings["experiment"]["sweep_values"]
    cfg = build_experiment(
        settings, args,
        designs=("full_ms", "full_bp", "shared_seq", "separate_seq"),
        sweep="rho",
        sweep_values=sweep_values or (0.1, 0.3, 0.5, 0.7, 0.9))
    records = run_experiment(cfg, threads=args.threads)

    rows = []
    for summary in aggregate(records):
        key = (summary["sweep_value"], summary["design"])
        walls = [r.wall_ms for r in records
                 if (r.sweep_value, r.design) == key and not r.failed]
        rows.append({
            "rho": summary["sweep_value"], "design": summary["design"],
            "peb_ue": summary["peb_ue_median"],
            "veb_ue": summary["veb_ue_median"],
            "peb_pt_median": summary["peb_pt_median_median"],
            "loss": summary["loss_median"],
            "wall_ms": float(np.median(walls)) if walls else math.nan,
        })
    columns = ["rho", "design", "peb_ue", "veb_ue", "peb_pt_median", "loss",
               "wall_ms"]
    if args.format == "json":
        payload = {"metadata": _metadata(args, settings, cfg.master_seed),
                   "columns": columns, "rows": rows,
                   "records": [_record_row(r) | {"wall_ms": r.wall_ms}
                               for r in records]}
        sink.json("sequential", payload)
    else:
        sink.csv("sequential", columns, rows)
    return 0


def _cmd_sweep(args, settings, sink: _OutputSink) -> int:
    cfg = build_experiment(settings, args)
    records = run_experiment(cfg, threads=args.threads)
    record_rows = [_record_row(r) for r in records]
    summary_rows = aggregate(records)
    if args.format == "json":
        payload = {"metadata": _metadata(args, settings, cfg.master_seed),
                   "record_columns": _RECORD_COLUMNS,
                   "records": [_record_row(r) | {"wall_ms": r.wall_ms,
                                                 "seed": list(r.seed)}
                               for r in records],
                   "summary_columns": _SUMMARY_COLUMNS,
                   "summary": summary_rows}
        sink.json("sweep", payload)
    else:
        sink.csv("sweep_records", _RECORD_COLUMNS, record_rows)
        sink.csv("sweep_summary", _SUMMARY_COLUMNS, summary_rows)
    return 0


def _cmd_validate(args, settings, sink: _OutputSink) -> int:
    from .diagnostics import run_self_checks

    results = run_self_checks(seed=args.seed or 0)
    all_ok = True
    for name, ok, detail in results:
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'}  {name} ({detail})")
    print(f"{'all checks passed' if all_ok else 'SELF-CHECK FAILURES'}")
    return 0 if all_ok else 2


_COMMANDS = {"crb": _cmd_crb, "pareto": _cmd_pareto,
             "sequential": _cmd_sequential, "sweep": _cmd_sweep,
             "validate": _cmd_validate}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isac-crlb",
        description="Error-bound analysis and sequential beamformer design "
                    "for joint round-trip sensing and downlink positioning.")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="INI config file (strict schema)")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed override")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: ISAC_CRLB_THREADS or 1)")
    parser.add_argument("--exact", action="store_true",
                        help="disable subcarrier decimation")
    parser.add_argument("--full-scale", action="store_true",
                        help="force the full-scale system sizes")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if args.threads is None:
        env = os.environ.get("ISAC_CRLB_THREADS", "1")
        try:
            args.threads = max(1, int(env))
        except ValueError:
            print(f"error: bad ISAC_CRLB_THREADS value {env!r}",
                  file=sys.stderr)
            return 1

    try:
        settings = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    sink = _OutputSink(Path(args.out))
    try:
        code = _COMMANDS[args.command](args, settings, sink)
    except ConfigError as exc:
        sink.cleanup()
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - map to exit code
        sink.cleanup()
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 2
    if args.verbose and sink.written:
        for path in sink.written:
            print(f"wrote {path}")
    return code


def main() -> None:
    sys.exit(run_cli())
