"""Bound-level models of two round-trip-sensing velocity estimators.

Both infer UE velocity from two temporally separated observation windows and
serve as baselines against instantaneous Doppler-based velocity at the UE:

* snapshot: position-only estimation per window (Doppler and velocity removed
  from the model), velocity from finite-differencing the two position
  estimates;
* extended: per-window LoS Doppler information projected onto the two
  sight directions, jointly inverting for both velocity components.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .fisher import (COND_THRESHOLD, StageInformation, crb_extract,
                     marginalize_nuisance)
from .scenario import SPEED_OF_LIGHT, Scenario, derive_ms_params, effective_slots, full_symbol_grid


@dataclass
class TwoEpochConfig:
    """Two observation windows separated by `gap_s` under constant velocity."""

    gap_s: float
    grids: tuple                 # per-epoch (slot, symbol) grids
    ue_positions: np.ndarray     # (2, 2): rows are the per-epoch positions

    def __post_init__(self):
        if self.gap_s <= 0:
            raise ValueError("epoch gap must be positive")
        self.ue_positions = np.asarray(self.ue_positions, dtype=float).reshape(2, 2)
        if len(self.grids) != 2 or not all(len(g) for g in self.grids):
            raise ValueError("need two non-empty epoch grids")

    @classmethod
    def from_scenario(cls, scenario: Scenario, gap_s: float | None = None
                      ) -> "TwoEpochConfig":
        """Default epochs: one coherence-limited frame each, back to back."""
        n_slots = effective_slots(scenario)
        grid = full_symbol_grid(n_slots, scenario.symbols_per_slot)
        if gap_s is None:
            gap_s = n_slots * scenario.slot_duration_s
        p0 = scenario.ue_position
        p1 = p0 + scenario.ue_velocity * gap_s
        return cls(gap_s=gap_s, grids=(grid, grid),
                   ue_positions=np.vstack([p0, p1]))

    def epoch_scenario(self, scenario: Scenario, epoch: int) -> Scenario:
        return dataclasses.replace(scenario,
                                   ue_position=self.ue_positions[epoch].copy())


def snapshot_ms_veb(scenario: Scenario, cfg: TwoEpochConfig, beamformer,
                    subcarriers=None) -> float:
    """Velocity bound from differencing two static position estimates.

    Each epoch is treated as a static scene: Doppler and velocity are removed
    from the estimation model, the UE position covariance is extracted, and
    the differenced-velocity covariance is (cov1 + cov2) / gap^2. Returns inf
    if either epoch cannot resolve the UE position.
    """
    covs = []
    for epoch in range(2):
        sc = cfg.epoch_scenario(scenario, epoch)
        params = derive_ms_params(sc, rng=None)
        stage = StageInformation(params, sc, cfg.grids[epoch], subcarriers,
                                 include_doppler=False)
        report = crb_extract(stage.position(beamformer))
        if report.singular_ue_pos or report.ue_cov is None:
            return math.inf
        covs.append(report.ue_cov)
    return float(np.sqrt(np.trace(covs[0] + covs[1]) / cfg.gap_s ** 2))


def doppler_information(scenario: Scenario, grid, beamformer,
                        subcarriers=None) -> float:
    """Scalar Fisher information of the LoS Doppler after marginalizing every
    other channel parameter."""
    params = derive_ms_params(scenario, rng=None)
    stage = StageInformation(params, scenario, grid, subcarriers)
    chan = stage.channel(beamformer)
    nuisance = [l for l in chan.index_map.labels if l != "nu"]
    return float(marginalize_nuisance(chan, nuisance).matrix[0, 0])


def velocity_fim_from_doppler(info: np.ndarray, units: np.ndarray,
                              carrier_hz: float) -> np.ndarray:
    """2x2 velocity FIM from per-epoch round-trip Doppler information
    projected on the sight directions."""
    scale = (2.0 * carrier_hz / SPEED_OF_LIGHT) ** 2
    out = np.zeros((2, 2))
    for i_nu, u in zip(np.atleast_1d(info), np.atleast_2d(units)):
        out += scale * float(i_nu) * np.outer(u, u)
    return out


def extended_ms_veb(scenario: Scenario, cfg: TwoEpochConfig, beamformer,
                    subcarriers=None) -> float:
    """Velocity bound from LoS Doppler observed at two temporal instants.

    The two windows see the UE along two sight directions; the velocity FIM
    is the Doppler information projected on both. Near-parallel directions
    leave the tangential component unobservable and the bound is inf.
    """
    infos = np.empty(2)
    units = np.empty((2, 2))
    for epoch in range(2):
        sc = cfg.epoch_scenario(scenario, epoch)
        infos[epoch] = doppler_information(sc, cfg.grids[epoch], beamformer,
                                           subcarriers)
        diff = sc.ue_position - sc.bs_position
        units[epoch] = diff / np.linalg.norm(diff)
    fim = velocity_fim_from_doppler(infos, units, scenario.carrier_hz)
    w = np.linalg.eigvalsh(fim)
    if w[-1] <= 0 or w[0] <= w[-1] / COND_THRESHOLD:
        return math.inf
    return float(np.sqrt(np.sum(1.0 / w)))
