"""Independent numerical cross-checks for the analytic derivative machinery.

Everything here re-derives quantities the slow way: central finite
differences through the geometry derivations and the plain per-symbol
channel builders from `signal_model`, never through the factorized FIM
assembly or the analytic Jacobians they are checking.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import fisher, signal_model
from .scenario import (BpChannelParams, MsChannelParams, Scenario,
                       derive_bp_params, derive_ms_params)
from .signal_model import Beamformer, Combiner


def fd_steering_derivative(n: int, angle: float, h: float = 1e-6) -> np.ndarray:
    a_hi = signal_model.steering_vector(n, angle + h)
    a_lo = signal_model.steering_vector(n, angle - h)
    return (a_hi - a_lo) / (2.0 * h)


# -- Jacobian oracles ----------------------------------------------------------

def _geometric_rows_ms(scenario: Scenario, include_doppler: bool) -> np.ndarray:
    p = derive_ms_params(scenario, rng=None)
    rows = [p.aod_rad, p.delay_s]
    if include_doppler:
        rows.append([p.doppler_hz])
    return np.concatenate(rows)


def _geometric_rows_bp(scenario: Scenario) -> np.ndarray:
    p = derive_bp_params(scenario, rng=None)
    return np.concatenate([p.aod_rad, p.aoa_rad, p.delay_s, p.doppler_hz])


def _perturb_scenario(scenario: Scenario, label: str, comp: int, delta: float
                      ) -> Scenario:
    if label == "p_u":
        v = scenario.ue_position.copy()
        v[comp] += delta
        return dataclasses.replace(scenario, ue_position=v)
    if label == "v_u":
        v = scenario.ue_velocity.copy()
        v[comp] += delta
        return dataclasses.replace(scenario, ue_velocity=v)
    if label.startswith("p_"):
        k = int(label[2:]) - 1
        pts = scenario.pt_positions.copy()
        pts[k, comp] += delta
        return dataclasses.replace(scenario, pt_positions=pts)
    if label == "d_phi":
        return dataclasses.replace(
            scenario, orientation_offset_rad=scenario.orientation_offset_rad + delta)
    if label == "d_t":
        return dataclasses.replace(
            scenario, clock_bias_s=scenario.clock_bias_s + delta)
    raise KeyError(label)


_FD_STEP = {"p_u": 1e-4, "v_u": 1e-4, "p_k": 1e-4, "d_phi": 1e-6, "d_t": 1e-12}


def fd_jacobian(scenario: Scenario, modality: str,
                include_doppler: bool = True) -> np.ndarray:
    """Central-difference Jacobian of the geometric channel parameters
    (angles, delays, Dopplers) w.r.t. the position-domain coordinates.

    Gain coordinates are identity-mapped by definition and carry no
    geometric content, so only the geometric rows are differenced.
    """
    k = scenario.num_targets
    if modality == "ms":
        col_map = fisher.ms_position_layout(k, include_velocity=include_doppler)
        rows_of = lambda s: _geometric_rows_ms(s, include_doppler)
    elif modality == "bp":
        col_map = fisher.bp_position_layout(k)
        rows_of = _geometric_rows_bp
    else:
        raise ValueError("modality must be 'ms' or 'bp'")

    geo_labels = [l for l in col_map.labels if l not in ("beta_r", "beta_i")]
    n_rows = rows_of(scenario).size
    out = np.zeros((n_rows, col_map.dim))
    for label in geo_labels:
        sl = col_map.sl(label)
        step = _FD_STEP.get(label, _FD_STEP["p_k"])
        for comp in range(sl.stop - sl.start):
            hi = rows_of(_perturb_scenario(scenario, label, comp, +step))
            lo = rows_of(_perturb_scenario(scenario, label, comp, -step))
            out[:, sl.start + comp] = (hi - lo) / (2.0 * step)
    return out


def jacobian_fd_error(scenario: Scenario, modality: str,
                      include_doppler: bool = True) -> float:
    """Max per-row relative deviation between analytic and FD Jacobians."""
    if modality == "ms":
        jac = fisher.ms_jacobian(scenario, include_doppler)
    else:
        jac = fisher.bp_jacobian(scenario)
    n_geo = sum(jac.row_map.size(l) for l in jac.row_map.labels
                if l not in ("beta_r", "beta_i"))
    analytic = jac.matrix[:n_geo]
    numeric = fd_jacobian(scenario, modality, include_doppler)
    scale = np.maximum(np.max(np.abs(analytic), axis=1, keepdims=True), 1e-300)
    return float(np.max(np.abs(analytic - numeric) / scale))


# -- channel FIM oracle ----------------------------------------------------------

def _mu_stack(params, scenario: Scenario, beamformer: Beamformer, grid,
              subcarriers, combiner: Combiner | None) -> np.ndarray:
    """Noise-free observations for every (symbol, subcarrier), stacked."""
    is_bp = isinstance(params, BpChannelParams)
    chan = signal_model.bp_channel if is_bp else signal_model.ms_channel
    out = []
    for l, p in grid:
        for m in subcarriers:
            h = chan(params, scenario, l, p, int(m))
            out.append(signal_model.noiseless_obs(
                h, beamformer, l, combiner=combiner if is_bp else None))
    return np.asarray(out)


def fd_channel_fim(params, scenario: Scenario, beamformer: Beamformer, grid,
                   subcarriers=None, combiner: Combiner | None = None
                   ) -> np.ndarray:
    """Brute-force FIM: central differences of mu through the per-symbol
    channel builders, then (2/sigma^2) sum Re{dmu_i^H dmu_j}."""
    if subcarriers is None:
        subcarriers = np.arange(scenario.n_subcarriers)
    k = scenario.num_targets
    is_bp = isinstance(params, BpChannelParams)
    ptype = BpChannelParams if is_bp else MsChannelParams
    vec = params.flatten()
    d = vec.size

    n = k + 1
    if is_bp:
        # [aod, aoa, tau, nu, re, im]
        steps = np.concatenate([np.full(2 * n, 1e-7), np.full(n, 1e-13),
                                np.full(n, 1e-3),
                                np.maximum(1e-6 * np.abs(vec[4 * n:]), 1e-18)])
    else:
        # [aod, tau, nu, re, im]
        steps = np.concatenate([np.full(n, 1e-7), np.full(n, 1e-13), [1e-3],
                                np.maximum(1e-6 * np.abs(vec[2 * n + 1:]), 1e-18)])

    derivs = []
    for i in range(d):
        hi = vec.copy()
        lo = vec.copy()
        hi[i] += steps[i]
        lo[i] -= steps[i]
        mu_hi = _mu_stack(ptype.from_flat(hi, k), scenario, beamformer, grid,
                          subcarriers, combiner)
        mu_lo = _mu_stack(ptype.from_flat(lo, k), scenario, beamformer, grid,
                          subcarriers, combiner)
        derivs.append(((mu_hi - mu_lo) / (2.0 * steps[i])).ravel())
    dmat = np.asarray(derivs)
    sigma2 = scenario.noise_power_w
    return (2.0 / sigma2) * (dmat.conj() @ dmat.T).real


def fim_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Frobenius error after balancing the wildly different parameter units
    by the reference diagonal."""
    d = np.sqrt(np.maximum(np.diag(analytic), 1e-300))
    scale = np.outer(d, d)
    a = analytic / scale
    b = numeric / scale
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300))


# -- self-check suite --------------------------------------------------------------

def run_self_checks(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Quick build sanity checks; returns (name, passed, detail) triples."""
    from .experiments import desk_scenario, sample_scenario

    rng = np.random.default_rng(seed)
    results = []

    errs = []
    for n, ang in ((1, 0.3), (4, -0.7), (8, 1.1)):
        fd = fd_steering_derivative(n, ang)
        an = signal_model.steering_derivative(n, ang)
        errs.append(np.max(np.abs(an - fd)) / max(np.max(np.abs(an)), 1e-12))
    ok = max(errs) < 1e-7
    results.append(("steering-derivative finite differences", ok,
                    f"max rel err {max(errs):.2e}"))

    base = desk_scenario(num_targets=2)
    worst_ms = worst_bp = 0.0
    for _ in range(10):
        sc = sample_scenario(base, rng, speed=12.0)
        worst_ms = max(worst_ms, jacobian_fd_error(sc, "ms"))
        worst_bp = max(worst_bp, jacobian_fd_error(sc, "bp"))
    results.append(("round-trip Jacobian vs finite differences",
                    worst_ms < 1e-5, f"max rel err {worst_ms:.2e}"))
    results.append(("downlink Jacobian vs finite differences",
                    worst_bp < 1e-5, f"max rel err {worst_bp:.2e}"))

    sc = desk_scenario(num_targets=1, n_bs=8, n_ue=4, n_subcarriers=64,
                       n_slots=4, symbols_per_slot=4)
    sc = sample_scenario(sc, np.random.default_rng(seed + 1), speed=10.0)
    grid = [(l, p) for l in range(1, 5) for p in range(1, 5)]
    from .optimizer import uniform_beamformer
    bf = uniform_beamformer(sc)
    for name, params in (("round-trip", derive_ms_params(sc, np.random.default_rng(2))),
                         ("downlink", derive_bp_params(sc, np.random.default_rng(3)))):
        exact = fisher.channel_fim(params, sc, bf, grid, decouple=False)
        brute = fd_channel_fim(params, sc, bf, grid)
        err = fim_relative_error(exact.matrix, brute)
        results.append((f"{name} FIM vs brute-force derivatives", err < 1e-5,
                        f"rel err {err:.2e}"))

    ms = derive_ms_params(sc, np.random.default_rng(4))
    f1 = fisher.channel_fim(ms, sc, bf, grid[:8]).matrix
    f2 = fisher.channel_fim(ms, sc, bf, grid[8:]).matrix
    f12 = fisher.channel_fim(ms, sc, bf, grid).matrix
    scale = max(np.abs(f12).max(), 1e-300)
    err = np.abs(f1 + f2 - f12).max() / scale
    results.append(("FIM additivity over disjoint symbol grids", err < 1e-12,
                    f"rel err {err:.2e}"))

    c = 3.7
    scaled = fisher.channel_fim(ms, sc, Beamformer(np.sqrt(c) * bf.matrix,
                                                   c * bf.budget_w),
                                grid).matrix
    err = np.abs(scaled - c * f12).max() / max(np.abs(scaled).max(), 1e-300)
    results.append(("FIM power linearity", err < 1e-12, f"rel err {err:.2e}"))

    dim = 9
    g = np.random.default_rng(seed + 5).normal(size=(dim, dim + 3))
    spd = g @ g.T + 1e-3 * np.eye(dim)
    imap = fisher.IndexMap([("keep", 4), ("nuis", dim - 4)])
    full = fisher.FimMatrix(spd, imap)
    marg = fisher.marginalize_nuisance(full, ["nuis"])
    direct = np.linalg.inv(np.linalg.inv(spd)[:4, :4])
    err = np.linalg.norm(marg.matrix - direct) / np.linalg.norm(direct)
    results.append(("Schur marginalization identity", err < 1e-9,
                    f"rel err {err:.2e}"))
    return results
