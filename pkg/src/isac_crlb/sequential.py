"""Symbol-budget accounting, Bayesian information fusion, and the
threshold-deviation loss for the two-phase sensing-then-positioning design.

The frame is split into a sensing prefix, a covariance-feedback gap, and a
positioning suffix; the two active phases produce information matrices over
the same shared parameter vector, and the posterior is their sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fisher import BoundReport, FimMatrix
from .scenario import ThresholdSet

# finite stand-in for an unresolved bound so grid searches stay well defined
SINGULAR_PENALTY = 1e6


@dataclass
class AllocationPolicy:
    """Three-way split of the frame's pilot symbols."""

    total_symbols: int
    feedback_symbols: int
    rho_ms: float               # fraction of allocable symbols spent sensing

    def __post_init__(self):
        if not 0.0 <= self.rho_ms <= 1.0:
            raise ValueError("rho_ms must be in [0, 1]")
        if self.feedback_symbols < 0 or self.total_symbols < 1:
            raise ValueError("symbol counts must be non-negative")
        if self.feedback_symbols >= self.total_symbols:
            raise ValueError("feedback must leave at least one active symbol")

    @property
    def allocable(self) -> int:
        return self.total_symbols - self.feedback_symbols

    @property
    def ms_symbols(self) -> int:
        # half-up rounding keeps the staircase monotone in rho
        return int(math.floor(self.rho_ms * self.allocable + 0.5))

    @property
    def bp_symbols(self) -> int:
        return self.allocable - self.ms_symbols


def partition_symbols(policy: AllocationPolicy, n_slots: int,
                      symbols_per_slot: int):
    """Contiguous time split: sensing prefix, feedback gap, positioning suffix.

    Returns (ms_grid, bp_grid) as lists of 1-based (slot, symbol) pairs; the
    feedback symbols in between contribute to neither.
    """
    if policy.total_symbols != n_slots * symbols_per_slot:
        raise ValueError("policy symbol count must equal the frame size")
    order = [(l, p) for l in range(1, n_slots + 1)
             for p in range(1, symbols_per_slot + 1)]
    n_ms = policy.ms_symbols
    return order[:n_ms], order[n_ms + policy.feedback_symbols:]


def feedback_cost(num_targets: int, bits_per_entry: float = 32.0,
                  bits_per_symbol: float = 100.0) -> int:
    """Symbols needed to ship the sensing-stage covariance to the UE.

    The shared parameter vector has 2K+4 entries, so the symmetric covariance
    carries (2K+4)(2K+5)/2 unique values. At least one symbol is charged.
    """
    if num_targets < 0:
        raise ValueError("target count must be non-negative")
    if bits_per_entry <= 0 or bits_per_symbol <= 0:
        raise ValueError("bit rates must be positive")
    dim = 2 * num_targets + 4
    entries = dim * (dim + 1) // 2
    return max(1, math.ceil(entries * bits_per_entry / bits_per_symbol))


def posterior_fim(prior: FimMatrix, likelihood: FimMatrix) -> FimMatrix:
    """Additive information fusion over identical parameter layouts."""
    if prior.index_map != likelihood.index_map:
        raise ValueError("prior and likelihood layouts differ")
    return FimMatrix(prior.matrix + likelihood.matrix, prior.index_map,
                     prior.symbol_count + likelihood.symbol_count,
                     prior.nuisance_singular or likelihood.nuisance_singular)


def _deviation(bound: float, singular: bool, gamma: float, weight: float,
               two_sided: bool) -> float:
    if weight == 0.0:
        return 0.0
    if singular or not math.isfinite(bound):
        return weight * SINGULAR_PENALTY
    if two_sided:
        return weight * ((bound - gamma) / gamma) ** 2
    return weight * (max(0.0, bound - gamma) / gamma) ** 2


def loss(bounds_ms: BoundReport, bounds_posterior: BoundReport,
         thresholds: ThresholdSet, two_sided: bool = False) -> float:
    """Weighted squared deviation of the stage bounds from their targets.

    One-sided by default: bounds already under the threshold cost nothing.
    Unresolved bounds contribute a large finite penalty instead of infinity.
    """
    t = thresholds
    total = _deviation(bounds_ms.peb_ue, bounds_ms.singular_ue_pos,
                       t.ms_peb_ue_m, t.w_ms_peb_ue, two_sided)
    for b, s in zip(bounds_ms.peb_pt, bounds_ms.singular_pt):
        total += _deviation(float(b), bool(s), t.ms_peb_pt_m,
                            t.w_ms_peb_pt, two_sided)
    total += _deviation(bounds_posterior.peb_ue,
                        bounds_posterior.singular_ue_pos,
                        t.bp_peb_ue_m, t.w_bp_peb_ue, two_sided)
    total += _deviation(bounds_posterior.veb_ue,
                        bounds_posterior.singular_ue_vel,
                        t.bp_veb_ue_mps, t.w_bp_veb_ue, two_sided)
    for b, s in zip(bounds_posterior.peb_pt, bounds_posterior.singular_pt):
        total += _deviation(float(b), bool(s), t.bp_peb_pt_m,
                            t.w_bp_peb_pt, two_sided)
    return float(total)


def ms_stage_loss(bounds_ms: BoundReport, thresholds: ThresholdSet,
                  two_sided: bool = False) -> float:
    """Sensing-stage-only part of the deviation loss (UE and target PEBs)."""
    t = thresholds
    total = _deviation(bounds_ms.peb_ue, bounds_ms.singular_ue_pos,
                       t.ms_peb_ue_m, t.w_ms_peb_ue, two_sided)
    for b, s in zip(bounds_ms.peb_pt, bounds_ms.singular_pt):
        total += _deviation(float(b), bool(s), t.ms_peb_pt_m,
                            t.w_ms_peb_pt, two_sided)
    return float(total)


@dataclass
class SequentialResult:
    """Outcome of one (F_ms, F_bp, rho) evaluation."""

    prior_fim: FimMatrix
    posterior_fim: FimMatrix
    bounds_ms: BoundReport
    bounds_posterior: BoundReport
    loss: float


class SequentialEvaluator:
    """Evaluates the two-phase design for fixed geometry and symbol split.

    Construction partitions the frame per the policy and caches both stage
    pipelines; `evaluate` then maps a beamformer pair to a SequentialResult.
    An empty phase contributes a zero information matrix.
    """

    def __init__(self, scenario, ms_params, bp_params,
                 policy: AllocationPolicy, n_slots: int,
                 thresholds: ThresholdSet | None = None, subcarriers=None,
                 combiner=None, decouple: bool = True,
                 two_sided: bool = False, ridge: bool = False):
        from .fisher import StageInformation, shared_position_layout

        self.policy = policy
        self.thresholds = thresholds or ThresholdSet()
        self.two_sided = two_sided
        self.ms_grid, self.bp_grid = partition_symbols(
            policy, n_slots, scenario.symbols_per_slot)
        self.eta_map = shared_position_layout(scenario.num_targets)
        self._ms = StageInformation(ms_params, scenario, self.ms_grid,
                                    subcarriers, decouple=decouple,
                                    ridge=ridge) if self.ms_grid else None
        self._bp = StageInformation(bp_params, scenario, self.bp_grid,
                                    subcarriers, combiner=combiner,
                                    decouple=decouple,
                                    ridge=ridge) if self.bp_grid else None

    def prior(self, beamformer) -> FimMatrix:
        if self._ms is None:
            return FimMatrix.zeros(self.eta_map)
        return self._ms.eta(beamformer)

    def likelihood(self, beamformer) -> FimMatrix:
        if self._bp is None:
            return FimMatrix.zeros(self.eta_map)
        return self._bp.eta(beamformer)

    def evaluate(self, f_ms, f_bp, prior: FimMatrix | None = None
                 ) -> SequentialResult:
        from .fisher import crb_extract

        if prior is None:
            prior = self.prior(f_ms)
        post = posterior_fim(prior, self.likelihood(f_bp))
        bounds_ms = crb_extract(prior)
        bounds_post = crb_extract(post)
        return SequentialResult(
            prior_fim=prior, posterior_fim=post, bounds_ms=bounds_ms,
            bounds_posterior=bounds_post,
            loss=loss(bounds_ms, bounds_post, self.thresholds, self.two_sided))
