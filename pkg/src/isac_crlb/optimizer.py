"""Power-constrained beamformer design.

Two search parametrizations share one multi-start projected-descent driver
with numeric central-difference gradients:

* codebook mode (default): non-negative weights over target-directed beams
  (the steering vector and its normalized derivative per target). A fixed
  per-beam, per-slot phase rotation keeps the slot beamformers linearly
  independent, which the downlink stage needs to separate BS-side departure
  angles from path gains; it also makes the slot-summed transmit covariance
  exactly the weighted sum of the beam dyads.
* freeform mode: every complex beamformer entry is free.

Candidates are always rescaled to use the full per-subcarrier power budget;
error bounds never improve by transmitting less, so this loses nothing and
removes a flat search direction.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .fisher import BoundReport, StageInformation, crb_extract, strided_subcarriers
from .scenario import (Scenario, ThresholdSet, derive_bp_params,
                       derive_ms_params, effective_slots, full_symbol_grid)
from .sequential import (AllocationPolicy, SequentialEvaluator, feedback_cost,
                         ms_stage_loss)
from .signal_model import Beamformer, steering_derivative, steering_vector

# variance stand-in for a block the information matrix cannot resolve; keeps
# weighted-sum objectives finite and penalizes designs that blind a target
_UNRESOLVED_VARIANCE = 1e6
_OBJECTIVE_CAP = 1e30


@dataclass
class SolverConfig:
    """Knobs for the beamformer searches."""

    mode: str = "codebook"            # "codebook" | "freeform"
    max_iters: int = 300
    step_init: float = 0.1            # initial step, relative to ||x||
    tolerance: float = 1e-6           # relative objective change at stop
    restarts: int = 8
    rho_grid: tuple = tuple(np.round(np.linspace(0.0, 1.0, 21), 6))
    seed: int = 0
    per_slot_weights: bool = False    # codebook mode: one weight per (beam, slot)

    def __post_init__(self):
        if self.mode not in ("codebook", "freeform"):
            raise ValueError("mode must be 'codebook' or 'freeform'")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if any(not 0.0 <= r <= 1.0 for r in self.rho_grid):
            raise ValueError("rho grid values must lie in [0, 1]")
        if self.max_iters < 1 or self.restarts < 1:
            raise ValueError("iteration and restart counts must be >= 1")


@dataclass
class OptimizationOutcome:
    """Result of one design problem."""

    beamformers: list
    rho_star: float | None
    objective: float
    trace_used: float
    iterations: int
    converged: bool
    wall_time_s: float
    rho_losses: list = field(default_factory=list)   # (rho, loss) pairs


def project_power(matrix, budget_w: float) -> Beamformer:
    """Scale the beamformer onto the trace power budget if it exceeds it."""
    if budget_w <= 0:
        raise ValueError("power budget must be positive")
    mat = np.asarray(matrix, dtype=complex)
    power = float(np.sum(np.abs(mat) ** 2))
    if power > budget_w:
        mat = mat * math.sqrt(budget_w / power)
    return Beamformer(mat, budget_w)


def codebook(scenario: Scenario) -> np.ndarray:
    """Unit-norm beams toward every target plus their derivative beams.

    Columns: steering vectors at the UE and target departure angles, then the
    normalized steering derivatives at the same angles (zero-norm derivative
    beams, e.g. for a single antenna, are dropped).
    """
    angles = derive_ms_params(scenario, rng=None).aod_rad
    cols = []
    for th in angles:
        a = steering_vector(scenario.n_bs, th)
        cols.append(a / np.linalg.norm(a))
    for th in angles:
        d = steering_derivative(scenario.n_bs, th)
        norm = np.linalg.norm(d)
        if norm > 1e-12:
            cols.append(d / norm)
    return np.column_stack(cols)


def synthesize_beamformer(weights, beams: np.ndarray, n_slots: int,
                          budget_w: float, per_slot: bool = False) -> np.ndarray:
    """Beamformer matrix from non-negative codebook weights, at full budget.

    Beam b in slot l carries the extra phase 2*pi*b*(l-1)/L so that the slot
    beamformers differ even under slot-tied weights.
    """
    n_beams = beams.shape[1]
    w = np.asarray(weights, dtype=float)
    if per_slot:
        w = w.reshape(n_beams, n_slots)
    else:
        w = np.tile(w.reshape(n_beams, 1), (1, n_slots))
    if not np.any(w > 0):
        w = np.ones_like(w)
    dither = np.exp(2j * np.pi * np.outer(np.arange(n_beams),
                                          np.arange(n_slots)) / n_slots)
    f = beams @ (w * dither)
    power = float(np.sum(np.abs(f) ** 2))
    return f * math.sqrt(budget_w / power)


def uniform_beamformer(scenario: Scenario, budget_w: float | None = None
                       ) -> Beamformer:
    """Equal weight on every codebook beam; the search baseline."""
    beams = codebook(scenario)
    budget = budget_w if budget_w is not None else scenario.per_subcarrier_budget_w
    f = synthesize_beamformer(np.ones(beams.shape[1]), beams,
                              scenario.n_slots, budget)
    return Beamformer(f, budget)


def illumination_energies(beamformer, scenario: Scenario) -> np.ndarray:
    """Slot-summed beam gain toward the UE (index 0) and each target,
    normalized by the array size."""
    mat = beamformer.matrix if isinstance(beamformer, Beamformer) else np.asarray(beamformer)
    angles = derive_ms_params(scenario, rng=None).aod_rad
    out = np.empty(angles.size)
    for k, th in enumerate(angles):
        a = steering_vector(scenario.n_bs, th)
        out[k] = np.sum(np.abs(a.conj() @ mat) ** 2) / scenario.n_bs
    return out


# -- search driver ---------------------------------------------------------------


def _descend(fun, x0: np.ndarray, project, cfg: SolverConfig):
    """Monotone projected descent with numeric central-difference gradients."""
    x = project(x0.copy())
    f = fun(x)
    iters = 0
    converged = False
    if not math.isfinite(f):
        return x, min(f, _OBJECTIVE_CAP), 0, False
    for _ in range(cfg.max_iters):
        iters += 1
        grad = np.zeros_like(x)
        for i in range(x.size):
            h = 1e-6 * max(1.0, abs(x[i]))
            xp = x.copy(); xp[i] += h
            xm = x.copy(); xm[i] -= h
            grad[i] = (min(fun(xp), _OBJECTIVE_CAP)
                       - min(fun(xm), _OBJECTIVE_CAP)) / (2.0 * h)
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0 or not math.isfinite(gnorm):
            converged = True
            break
        direction = grad / gnorm
        scale = max(1.0, float(np.linalg.norm(x)))
        step = cfg.step_init * scale
        improved = False
        while step > 1e-14 * scale:
            cand = project(x - step * direction)
            fc = fun(cand)
            if math.isfinite(fc) and fc < f:
                rel = (f - fc) / max(abs(f), 1e-300)
                x, f = cand, fc
                improved = True
                if rel < cfg.tolerance:
                    converged = True
                break
            step *= 0.5
        if not improved:
            converged = True
            break
        if converged:
            break
    return x, f, iters, converged


def _solve_beamformer(objective, scenario: Scenario, cfg: SolverConfig,
                      extra_inits=()):
    """Multi-start search over the configured parametrization.

    `objective` maps a beamformer matrix (N_B x L, already on budget) to a
    scalar. Start 0 is the uniform baseline so the returned objective never
    exceeds it; remaining starts are seeded random draws.
    """
    budget = scenario.per_subcarrier_budget_w
    n_slots = scenario.n_slots
    if cfg.mode == "codebook":
        beams = codebook(scenario)
        n_x = beams.shape[1] * (n_slots if cfg.per_slot_weights else 1)

        def synth(x):
            return synthesize_beamformer(x, beams, n_slots, budget,
                                         cfg.per_slot_weights)

        def project(x):
            return np.maximum(x, 0.0)

        base = np.ones(n_x)

        def random_init(rng):
            return np.abs(rng.normal(size=n_x))
    else:
        n_b = scenario.n_bs
        n_x = 2 * n_b * n_slots

        def synth(x):
            f = (x[:n_b * n_slots] + 1j * x[n_b * n_slots:]).reshape(n_b, n_slots)
            power = float(np.sum(np.abs(f) ** 2))
            if power < 1e-300:
                f = np.ones((n_b, n_slots), dtype=complex)
                power = float(np.sum(np.abs(f) ** 2))
            return f * math.sqrt(budget / power)

        def project(x):
            return x

        f0 = uniform_beamformer(scenario, budget).matrix
        base = np.concatenate([f0.real.ravel(), f0.imag.ravel()])

        def random_init(rng):
            return rng.normal(size=n_x)

    def fun(x):
        return objective(synth(x))

    inits = [base]
    for r in range(1, cfg.restarts):
        inits.append(random_init(np.random.default_rng([cfg.seed, r])))
    inits.extend(np.asarray(e, dtype=float) for e in extra_inits)

    best = None
    total_iters = 0
    for x0 in inits:
        x, f, iters, conv = _descend(fun, x0, project, cfg)
        total_iters += iters
        if best is None or f < best[1]:
            best = (x, f, conv)
    x_best, f_best, conv_best = best
    return synth(x_best), f_best, total_iters, conv_best, x_best


# -- design problems ---------------------------------------------------------------


def _resolve_inputs(scenario, ms_params, bp_params, subcarriers):
    if ms_params is None:
        ms_params = derive_ms_params(scenario, rng=None)
    if bp_params is None:
        bp_params = derive_bp_params(scenario, rng=None)
    if subcarriers is None:
        subcarriers = strided_subcarriers(scenario.n_subcarriers,
                                          min(64, scenario.n_subcarriers))
    return ms_params, bp_params, subcarriers


def _penalized_trace(report: BoundReport, labels, base_nulls=None) -> float:
    """Mixed-unit CRB trace over the given blocks, with unresolved directions
    replaced by a large constant variance.

    `base_nulls` holds the per-block null counts under full illumination;
    directions unresolvable for structural reasons (present already in the
    baseline) are not charged, so the search is penalized only for blinding
    something a beamformer could have resolved.
    """
    total = 0.0
    for lbl in labels:
        total += report.est_trace[lbl]
        extra = report.null_count[lbl]
        if base_nulls is not None:
            extra = max(0, extra - base_nulls.get(lbl, 0))
        total += _UNRESOLVED_VARIANCE * extra
    return total


def solve_p1(scenario: Scenario, alpha: float, cfg: SolverConfig,
             ms_params=None, bp_params=None, subcarriers=None,
             combiner=None) -> OptimizationOutcome:
    """Weighted-sum trade-off between the two modalities' CRB traces.

    alpha = 0 optimizes round-trip sensing only, alpha = 1 downlink
    positioning only. Both FIMs use all pilots inside the coherence window.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    ms_params, bp_params, subcarriers = _resolve_inputs(
        scenario, ms_params, bp_params, subcarriers)
    n_slots = effective_slots(scenario)
    grid = full_symbol_grid(n_slots, scenario.symbols_per_slot)
    ms_stage = StageInformation(ms_params, scenario, grid, subcarriers)
    bp_stage = StageInformation(bp_params, scenario, grid, subcarriers,
                                combiner=combiner)
    k = scenario.num_targets
    ms_labels = ["p_u", "v_u"] + [f"p_{i}" for i in range(1, k + 1)]
    bp_labels = ["p_u", "v_u"]

    # directions unresolvable even under full illumination are not charged
    base = uniform_beamformer(scenario).matrix
    ms_base_nulls = crb_extract(ms_stage.position(base)).null_count
    bp_base_nulls = crb_extract(bp_stage.position(base)).null_count

    def objective(f_mat):
        val = 0.0
        if alpha < 1.0:
            rep = crb_extract(ms_stage.position(f_mat))
            val += (1.0 - alpha) * _penalized_trace(rep, ms_labels,
                                                    ms_base_nulls)
        if alpha > 0.0:
            rep = crb_extract(bp_stage.position(f_mat))
            val += alpha * _penalized_trace(rep, bp_labels, bp_base_nulls)
        return val if math.isfinite(val) else _OBJECTIVE_CAP

    t0 = time.perf_counter()
    f_mat, obj, iters, conv, _ = _solve_beamformer(objective, scenario, cfg)
    bf = Beamformer(f_mat, scenario.per_subcarrier_budget_w)
    return OptimizationOutcome(
        beamformers=[bf], rho_star=None, objective=obj,
        trace_used=bf.trace_power, iterations=iters, converged=conv,
        wall_time_s=time.perf_counter() - t0)


def _make_policy(scenario: Scenario, rho: float, n_slots: int) -> AllocationPolicy:
    total = n_slots * scenario.symbols_per_slot
    fb = min(feedback_cost(scenario.num_targets), total - 1)
    return AllocationPolicy(total_symbols=total, feedback_symbols=fb, rho_ms=rho)


def _evaluator(scenario, ms_params, bp_params, rho, n_slots, thresholds,
               subcarriers, combiner, two_sided) -> SequentialEvaluator:
    policy = _make_policy(scenario, rho, n_slots)
    return SequentialEvaluator(scenario, ms_params, bp_params, policy,
                               n_slots, thresholds, subcarriers, combiner,
                               two_sided=two_sided)


def solve_greedy_fms(scenario: Scenario, rho: float, cfg: SolverConfig,
                     ms_params=None, bp_params=None, subcarriers=None,
                     thresholds: ThresholdSet | None = None,
                     two_sided: bool = False) -> Beamformer:
    """Sensing-stage beamformer: minimizes the sensing-only deviation loss on
    the sensing share of the frame."""
    ms_params, bp_params, subcarriers = _resolve_inputs(
        scenario, ms_params, bp_params, subcarriers)
    thresholds = thresholds or ThresholdSet()
    n_slots = effective_slots(scenario)
    ev = _evaluator(scenario, ms_params, bp_params, rho, n_slots, thresholds,
                    subcarriers, None, two_sided)
    if not ev.ms_grid:
        return uniform_beamformer(scenario)

    def objective(f_mat):
        return ms_stage_loss(crb_extract(ev.prior(f_mat)), thresholds,
                             two_sided)

    f_mat, _, _, _, _ = _solve_beamformer(objective, scenario, cfg)
    return Beamformer(f_mat, scenario.per_subcarrier_budget_w)


def solve_p2_separate(scenario: Scenario, cfg: SolverConfig,
                      ms_params=None, bp_params=None, subcarriers=None,
                      thresholds: ThresholdSet | None = None, combiner=None,
                      two_sided: bool = False) -> OptimizationOutcome:
    """Two-stage greedy design: the sensing beamformer minimizes its own
    stage loss, then the positioning beamformer minimizes the posterior loss
    given that fixed prior; the symbol split is picked by grid search."""
    ms_params, bp_params, subcarriers = _resolve_inputs(
        scenario, ms_params, bp_params, subcarriers)
    thresholds = thresholds or ThresholdSet()
    n_slots = effective_slots(scenario)
    budget = scenario.per_subcarrier_budget_w

    t0 = time.perf_counter()
    best = None
    rho_losses = []
    total_iters = 0
    warm_ms = warm_bp = ()
    for rho in cfg.rho_grid:
        ev = _evaluator(scenario, ms_params, bp_params, rho, n_slots,
                        thresholds, subcarriers, combiner, two_sided)
        if ev.ms_grid:
            def ms_objective(f_mat):
                return ms_stage_loss(crb_extract(ev.prior(f_mat)),
                                     thresholds, two_sided)
            f_ms, _, it_ms, conv_ms, x_ms = _solve_beamformer(
                ms_objective, scenario, cfg, extra_inits=warm_ms)
            warm_ms = (x_ms,)
            total_iters += it_ms
        else:
            f_ms = uniform_beamformer(scenario).matrix
            conv_ms = True

        if ev.bp_grid:
            def bp_objective(f_mat):
                return ev.evaluate(f_ms, f_mat).loss
            f_bp, loss_val, it_bp, conv_bp, x_bp = _solve_beamformer(
                bp_objective, scenario, cfg, extra_inits=warm_bp)
            warm_bp = (x_bp,)
            total_iters += it_bp
        else:
            f_bp = uniform_beamformer(scenario).matrix
            loss_val = ev.evaluate(f_ms, f_bp).loss
            conv_bp = True
        rho_losses.append((float(rho), float(loss_val)))
        if math.isfinite(loss_val) and (best is None or loss_val < best[1]):
            best = (float(rho), float(loss_val), f_ms, f_bp,
                    conv_ms and conv_bp)
    if best is None:
        raise RuntimeError("no symbol split produced a finite loss")
    rho_star, obj, f_ms, f_bp, conv = best
    return OptimizationOutcome(
        beamformers=[Beamformer(f_ms, budget), Beamformer(f_bp, budget)],
        rho_star=rho_star, objective=obj,
        trace_used=float(np.sum(np.abs(f_ms) ** 2)), iterations=total_iters,
        converged=conv, wall_time_s=time.perf_counter() - t0,
        rho_losses=rho_losses)


def solve_p3_shared(scenario: Scenario, cfg: SolverConfig,
                    ms_params=None, bp_params=None, subcarriers=None,
                    thresholds: ThresholdSet | None = None, combiner=None,
                    two_sided: bool = False) -> OptimizationOutcome:
    """Single shared beamformer optimized directly against the end-to-end
    posterior loss, jointly with the symbol split."""
    ms_params, bp_params, subcarriers = _resolve_inputs(
        scenario, ms_params, bp_params, subcarriers)
    thresholds = thresholds or ThresholdSet()
    n_slots = effective_slots(scenario)
    budget = scenario.per_subcarrier_budget_w

    t0 = time.perf_counter()
    best = None
    rho_losses = []
    total_iters = 0
    warm = ()
    for rho in cfg.rho_grid:
        ev = _evaluator(scenario, ms_params, bp_params, rho, n_slots,
                        thresholds, subcarriers, combiner, two_sided)

        def objective(f_mat):
            return ev.evaluate(f_mat, f_mat).loss

        f_seq, loss_val, iters, conv, x_best = _solve_beamformer(
            objective, scenario, cfg, extra_inits=warm)
        warm = (x_best,)
        total_iters += iters
        rho_losses.append((float(rho), float(loss_val)))
        if math.isfinite(loss_val) and (best is None or loss_val < best[1]):
            best = (float(rho), float(loss_val), f_seq, conv)
    if best is None:
        raise RuntimeError("no symbol split produced a finite loss")
    rho_star, obj, f_seq, conv = best
    return OptimizationOutcome(
        beamformers=[Beamformer(f_seq, budget)], rho_star=rho_star,
        objective=obj, trace_used=float(np.sum(np.abs(f_seq) ** 2)),
        iterations=total_iters, converged=conv,
        wall_time_s=time.perf_counter() - t0, rho_losses=rho_losses)
