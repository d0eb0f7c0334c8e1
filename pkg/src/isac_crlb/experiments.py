"""Seeded Monte-Carlo harness and parameter sweeps.

Each (sweep value, realization) pair gets its own RNG stream derived from the
master seed, so records are reproducible and independent of execution order
and thread count. Individual realization failures are recorded, never fatal.

The headline aggregate is the median: unresolved realizations produce
unbounded values that would destroy a mean, which is therefore reported only
over the resolved subset together with its count.
"""

from __future__ import annotations

import dataclasses
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fisher import FimMatrix, StageInformation, crb_extract, strided_subcarriers
from .optimizer import (OptimizationOutcome, SolverConfig, illumination_energies,
                        solve_greedy_fms, solve_p1, solve_p2_separate,
                        solve_p3_shared, uniform_beamformer, _solve_beamformer)
from .scenario import (NoiseModel, Scenario, ThresholdSet, dbm_to_watts,
                       derive_bp_params, derive_ms_params, effective_slots,
                       full_symbol_grid)
from .sequential import SequentialEvaluator, loss as deviation_loss, ms_stage_loss
from .signal_model import Beamformer
from .velocity import TwoEpochConfig, extended_ms_veb, snapshot_ms_veb

VALID_DESIGNS = ("full_ms", "full_bp", "shared_seq", "separate_seq", "p1",
                 "snapshot_ms", "extended_ms")
VALID_SWEEPS = ("num_targets", "speed", "rho", "alpha")


def desk_scenario(num_targets: int = 2, *, n_bs: int = 16, n_ue: int = 4,
                  n_slots: int = 8, symbols_per_slot: int = 10,
                  n_subcarriers: int = 1024, power_budget_dbm: float = 50.0,
                  path_loss_exponent: float = 3.5, speed: float = 10.0,
                  heading_rad: float = 2.0, **overrides) -> Scenario:
    """Small configuration sized for interactive runs and tests.

    The raised transmit power is desk-scale calibration: with the small
    arrays and short frame it keeps the round-trip echoes (which decay with
    twice the one-way exponent) informative while the downlink bounds stay
    near their accuracy thresholds. Geometry defaults are deterministic
    placeholders that samplers usually replace.
    """
    radius = 35.0 + 10.0 * np.arange(num_targets)
    angles = np.linspace(-0.7, 0.7, num_targets) if num_targets else np.empty(0)
    pts = np.column_stack([radius * np.cos(angles),
                           radius * np.sin(angles)]) if num_targets else ()
    vel = speed * np.array([math.cos(heading_rad), math.sin(heading_rad)])
    kwargs = dict(
        ue_position=(40.0, 10.0), ue_velocity=vel, pt_positions=pts,
        n_bs=n_bs, n_ue=n_ue, n_slots=n_slots,
        symbols_per_slot=symbols_per_slot, n_subcarriers=n_subcarriers,
        power_budget_watts=dbm_to_watts(power_budget_dbm),
        noise=NoiseModel(path_loss_exponent=path_loss_exponent))
    kwargs.update(overrides)
    return Scenario(**kwargs)


def full_scale_scenario(num_targets: int = 2, **overrides) -> Scenario:
    """Headline configuration: 64/16 antennas, 1024 subcarriers, 16x100
    pilot frame, -20 dBm budget, urban path-loss exponent."""
    return desk_scenario(num_targets, n_bs=64, n_ue=16, n_slots=16,
                         symbols_per_slot=100, n_subcarriers=1024,
                         power_budget_dbm=-20.0, path_loss_exponent=3.5,
                         **overrides)


@dataclass
class ExperimentConfig:
    """One sweep: base scene, the variable to vary, and what to run."""

    base_scenario: Scenario
    sweep_variable: str = "num_targets"
    sweep_values: tuple = (1, 2, 3, 4)
    realizations: int = 20
    master_seed: int = 0
    designs: tuple = ("full_ms", "full_bp")
    decimation: int = 64                       # subcarrier subset size
    solver: SolverConfig = field(default_factory=SolverConfig)
    thresholds: ThresholdSet = field(default_factory=ThresholdSet)
    beamformer_policy: str = "p1"              # "p1" | "uniform"
    range_bounds: tuple = (5.0, 100.0)
    sector_rad: float = math.radians(60.0)
    two_sided: bool = False

    def __post_init__(self):
        if self.sweep_variable not in VALID_SWEEPS:
            raise ValueError(f"unknown sweep variable '{self.sweep_variable}'")
        unknown = set(self.designs) - set(VALID_DESIGNS)
        if unknown:
            raise ValueError(f"unknown designs {sorted(unknown)}")
        if self.realizations < 1:
            raise ValueError("need at least one realization")
        if not len(self.sweep_values):
            raise ValueError("sweep values must be non-empty")
        if self.beamformer_policy not in ("p1", "uniform"):
            raise ValueError("beamformer policy must be 'p1' or 'uniform'")


@dataclass
class RunRecord:
    """One (sweep value, realization, design) outcome."""

    sweep_value: float
    realization: int
    design: str
    peb_ue: float = math.nan
    veb_ue: float = math.nan
    peb_pt: tuple = ()
    loss: float = math.nan
    rho_star: float = math.nan
    wall_ms: float = 0.0
    singular_ue_pos: bool = False
    singular_ue_vel: bool = False
    singular_pt_count: int = 0
    n_targets: int = 0
    l_eff: int = 0
    seed: tuple = ()
    failed: bool = False
    error: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def peb_pt_median(self) -> float:
        return float(np.median(self.peb_pt)) if len(self.peb_pt) else math.nan


def sample_scenario(base: Scenario, rng, num_targets: int | None = None,
                    speed: float | None = None,
                    range_bounds: tuple = (5.0, 100.0),
                    sector_rad: float = math.radians(60.0)) -> Scenario:
    """Random UE/target placement in a range annulus and angular sector in
    front of the BS broadside; velocity heading uniform."""
    k = base.num_targets if num_targets is None else int(num_targets)
    spd = base.ue_speed_mps if speed is None else float(speed)
    lo, hi = range_bounds

    def draw_position():
        r = rng.uniform(lo, hi)
        ang = base.bs_orientation_rad + rng.uniform(-sector_rad, sector_rad)
        return base.bs_position + r * np.array([math.cos(ang), math.sin(ang)])

    # UE state first, targets after: sweeps over the target count then share
    # the UE draw realization-by-realization (common random numbers)
    ue = draw_position()
    heading = rng.uniform(0.0, 2.0 * np.pi)
    vel = spd * np.array([math.cos(heading), math.sin(heading)])
    pts = []
    for _ in range(k):
        p = draw_position()
        while np.linalg.norm(p - ue) < 1.0:    # avoid degenerate overlap
            p = draw_position()
        pts.append(p)
    return dataclasses.replace(
        base, ue_position=ue, ue_velocity=vel,
        pt_positions=np.asarray(pts).reshape(k, 2),
        rcs_pt_m2=np.broadcast_to(np.atleast_1d(base.rcs_pt_m2)[:1], (k,)).copy())


def _zero_bounds(num_targets: int):
    from .fisher import shared_position_layout
    return crb_extract(FimMatrix.zeros(shared_position_layout(num_targets)))


class _RealizationContext:
    """Scene, channel parameters, and lazily solved beamformers shared by all
    designs of one realization."""

    def __init__(self, cfg: ExperimentConfig, scenario: Scenario, rng):
        self.cfg = cfg
        self.scenario = scenario
        self.ms_params = derive_ms_params(scenario, rng)
        self.bp_params = derive_bp_params(scenario, rng)
        self.subcarriers = strided_subcarriers(
            scenario.n_subcarriers,
            min(cfg.decimation, scenario.n_subcarriers))
        self.l_eff = effective_slots(scenario)
        self.full_grid = full_symbol_grid(self.l_eff,
                                          scenario.symbols_per_slot)
        self._beams: dict = {}

    def beamformer(self, alpha: float) -> Beamformer:
        """Trade-off beamformer for the requested weighting, or the uniform
        pattern under the 'uniform' policy."""
        key = round(float(alpha), 6)
        if key not in self._beams:
            if self.cfg.beamformer_policy == "uniform":
                self._beams[key] = uniform_beamformer(self.scenario)
            else:
                out = solve_p1(self.scenario, alpha, self.cfg.solver,
                               ms_params=self.ms_params,
                               bp_params=self.bp_params,
                               subcarriers=self.subcarriers)
                self._beams[key] = out.beamformers[0]
        return self._beams[key]

    def stage(self, modality: str, grid) -> StageInformation:
        params = self.ms_params if modality == "ms" else self.bp_params
        return StageInformation(params, self.scenario, grid, self.subcarriers)

    def evaluator(self, rho: float) -> SequentialEvaluator:
        from .optimizer import _make_policy
        policy = _make_policy(self.scenario, rho, self.l_eff)
        return SequentialEvaluator(
            self.scenario, self.ms_params, self.bp_params, policy,
            self.l_eff, self.cfg.thresholds, self.subcarriers,
            two_sided=self.cfg.two_sided)


def _sequential_cfg(cfg: ExperimentConfig, rho: float | None) -> SolverConfig:
    if rho is None:
        return cfg.solver
    return dataclasses.replace(cfg.solver, rho_grid=(float(rho),))


def _fill_from_report(rec: RunRecord, report) -> None:
    rec.peb_ue = report.peb_ue
    rec.veb_ue = report.veb_ue
    rec.peb_pt = tuple(float(b) for b in report.peb_pt)
    rec.singular_ue_pos = bool(report.singular_ue_pos)
    rec.singular_ue_vel = bool(report.singular_ue_vel)
    rec.singular_pt_count = int(np.sum(report.singular_pt))


def _run_design(cxt: _RealizationContext, design: str, rec: RunRecord,
                rho: float | None, alpha: float | None) -> None:
    cfg = cxt.cfg
    thresholds = cfg.thresholds
    two_sided = cfg.two_sided

    if design == "p1":
        a = 0.5 if alpha is None else float(alpha)
        out = solve_p1(cxt.scenario, a, cfg.solver, ms_params=cxt.ms_params,
                       bp_params=cxt.bp_params, subcarriers=cxt.subcarriers)
        bf = out.beamformers[0]
        rep_ms = crb_extract(cxt.stage("ms", cxt.full_grid).eta(bf))
        rep_bp = crb_extract(cxt.stage("bp", cxt.full_grid).eta(bf))
        _fill_from_report(rec, rep_bp)
        rec.loss = out.objective
        energies = illumination_energies(bf, cxt.scenario)
        rec.extras = {
            "alpha": a, "objective": out.objective,
            "crb_trace_ms": rep_ms.raw_trace_position,
            "crb_trace_bp": rep_bp.raw_trace_uv,
            "peb_ue_ms": rep_ms.peb_ue, "peb_ue_bp": rep_bp.peb_ue,
            "veb_ue_bp": rep_bp.veb_ue,
            "energy_ue": float(energies[0]),
            "energy_pt_max": float(energies[1:].max()) if energies.size > 1 else 0.0,
        }
        return

    if design in ("snapshot_ms", "extended_ms"):
        bf = cxt.beamformer(0.0)
        epochs = TwoEpochConfig.from_scenario(cxt.scenario)
        fn = snapshot_ms_veb if design == "snapshot_ms" else extended_ms_veb
        veb = fn(cxt.scenario, epochs, bf, cxt.subcarriers)
        rec.veb_ue = veb
        rec.singular_ue_vel = not math.isfinite(veb)
        return

    if design == "full_ms":
        if rho is None:
            bf = cxt.beamformer(0.0)
            prior = cxt.stage("ms", cxt.full_grid).eta(bf)
        else:
            ev = cxt.evaluator(rho)
            if cfg.beamformer_policy == "uniform" or not ev.ms_grid:
                bf = uniform_beamformer(cxt.scenario)
            else:
                bf = solve_greedy_fms(cxt.scenario, rho, cfg.solver,
                                      ms_params=cxt.ms_params,
                                      bp_params=cxt.bp_params,
                                      subcarriers=cxt.subcarriers,
                                      thresholds=thresholds,
                                      two_sided=two_sided)
            prior = ev.prior(bf)
        report = crb_extract(prior)
        _fill_from_report(rec, report)
        rec.loss = deviation_loss(report, report, thresholds, two_sided)
        return

    if design == "full_bp":
        zero = _zero_bounds(cxt.scenario.num_targets)
        if rho is None:
            bf = cxt.beamformer(1.0)
            like = cxt.stage("bp", cxt.full_grid).eta(bf)
        else:
            ev = cxt.evaluator(rho)
            if not ev.bp_grid:
                report = _zero_bounds(cxt.scenario.num_targets)
                _fill_from_report(rec, report)
                rec.loss = deviation_loss(zero, report, thresholds, two_sided)
                return
            if cfg.beamformer_policy == "uniform":
                bf = uniform_beamformer(cxt.scenario)
            else:
                def objective(f_mat):
                    rep = crb_extract(ev.likelihood(f_mat))
                    return deviation_loss(zero, rep, thresholds, two_sided)
                f_mat, _, _, _, _ = _solve_beamformer(objective, cxt.scenario,
                                                      cfg.solver)
                bf = Beamformer(f_mat, cxt.scenario.per_subcarrier_budget_w)
            like = ev.likelihood(bf)
        report = crb_extract(like)
        _fill_from_report(rec, report)
        rec.loss = deviation_loss(zero, report, thresholds, two_sided)
        return

    if design in ("shared_seq", "separate_seq"):
        solver_cfg = _sequential_cfg(cfg, rho)
        solve = solve_p3_shared if design == "shared_seq" else solve_p2_separate
        out: OptimizationOutcome = solve(
            cxt.scenario, solver_cfg, ms_params=cxt.ms_params,
            bp_params=cxt.bp_params, subcarriers=cxt.subcarriers,
            thresholds=thresholds, two_sided=two_sided)
        rec.rho_star = out.rho_star
        rec.loss = out.objective
        ev = cxt.evaluator(out.rho_star)
        f_ms = out.beamformers[0].matrix
        f_bp = out.beamformers[-1].matrix
        result = ev.evaluate(f_ms, f_bp)
        _fill_from_report(rec, result.bounds_posterior)
        rec.extras = {"loss_ms_stage": ms_stage_loss(result.bounds_ms,
                                                     thresholds, two_sided)}
        return

    raise ValueError(f"unknown design '{design}'")


def _run_realization(cfg: ExperimentConfig, sweep_idx: int,
                     realization: int) -> list[RunRecord]:
    # the stream depends on the realization only: sweep points share draws,
    # so trend comparisons across sweep values are paired
    value = cfg.sweep_values[sweep_idx]
    seed = (cfg.master_seed, realization)
    rng = np.random.default_rng(seed)
    num_targets = int(value) if cfg.sweep_variable == "num_targets" else None
    speed = float(value) if cfg.sweep_variable == "speed" else None
    scenario = sample_scenario(cfg.base_scenario, rng, num_targets, speed,
                               cfg.range_bounds, cfg.sector_rad)
    rho = float(value) if cfg.sweep_variable == "rho" else None
    alpha = float(value) if cfg.sweep_variable == "alpha" else None

    records = []
    cxt = None
    for design in cfg.designs:
        rec = RunRecord(sweep_value=float(value), realization=realization,
                        design=design, n_targets=scenario.num_targets,
                        seed=seed)
        t0 = time.perf_counter()
        try:
            if cxt is None:
                cxt = _RealizationContext(cfg, scenario, rng)
            rec.l_eff = cxt.l_eff
            _run_design(cxt, design, rec, rho, alpha)
        except Exception as exc:  # noqa: BLE001 - recorded, never fatal
            rec.failed = True
            rec.error = f"{type(exc).__name__}: {exc}"
        rec.wall_ms = 1e3 * (time.perf_counter() - t0)
        records.append(rec)
    return records


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> list[RunRecord]:
    """All (sweep value, realization, design) records, in deterministic order.

    Realizations are independent tasks; results are collected into a fixed
    (sweep, realization, design) ordering so the output does not depend on
    the thread count.
    """
    tasks = [(si, r) for si in range(len(cfg.sweep_values))
             for r in range(cfg.realizations)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(
                lambda t: _run_realization(cfg, t[0], t[1]), tasks))
    else:
        chunks = [_run_realization(cfg, si, r) for si, r in tasks]
    return [rec for chunk in chunks for rec in chunk]


def aggregate(records: list[RunRecord]) -> list[dict]:
    """Per (sweep value, design) summary: median over all runs, mean and
    percentiles over the resolved (finite) subset."""
    keys = []
    groups: dict = {}
    for rec in records:
        key = (rec.sweep_value, rec.design)
        if key not in groups:
            groups[key] = []
            keys.append(key)
        groups[key].append(rec)

    def stats(values):
        arr = np.asarray(values, dtype=float)
        arr = arr[~np.isnan(arr)]
        finite = arr[np.isfinite(arr)]
        med = float(np.median(arr)) if arr.size else math.nan
        return {
            "median": med,
            "mean_resolved": float(np.mean(finite)) if finite.size else math.nan,
            "p10": float(np.percentile(finite, 10)) if finite.size else math.nan,
            "p90": float(np.percentile(finite, 90)) if finite.size else math.nan,
            "n_resolved": int(finite.size),
        }

    out = []
    for key in keys:
        recs = [r for r in groups[key] if not r.failed]
        row = {"sweep_value": key[0], "design": key[1],
               "n_runs": len(groups[key]), "n_failed":
               sum(r.failed for r in groups[key])}
        for name, getter in (("peb_ue", lambda r: r.peb_ue),
                             ("veb_ue", lambda r: r.veb_ue),
                             ("peb_pt_median", lambda r: r.peb_pt_median),
                             ("loss", lambda r: r.loss)):
            s = stats([getter(r) for r in recs]) if recs else stats([])
            for stat_name, stat_val in s.items():
                row[f"{name}_{stat_name}"] = stat_val
        row["singular_pt_runs"] = sum(r.singular_pt_count > 0 for r in recs)
        row["singular_vel_runs"] = sum(r.singular_ue_vel for r in recs)
        out.append(row)
    return out
