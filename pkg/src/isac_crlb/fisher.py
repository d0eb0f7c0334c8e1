"""Fisher information pipeline: channel-domain FIMs, position-domain mapping,
nuisance marginalization, and error-bound extraction.

The channel-domain FIM follows the Gaussian mean-parameter form
(2/sigma^2) * sum Re{dmu^H dmu} over pilot symbols and subcarriers. Every
derivative of the noise-free observation factors into a per-(symbol,
subcarrier) scalar times a per-slot antenna vector, so each slot contributes
Re[(C^H C) . (V^H V)] with C the scalar table and V the vector table. The
scalar Gram C^H C is beamformer-independent and cached, which keeps repeated
evaluations inside optimizer loops cheap.

Rank and conditioning decisions are taken on the diagonally-normalized FIM:
raw entries mix units spanning many orders of magnitude (seconds, radians,
Hz, gains), so a raw condition number would reflect units, not
identifiability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import (SPEED_OF_LIGHT, BpChannelParams, MsChannelParams,
                       Scenario, symbol_start_time)
from .signal_model import (Beamformer, Combiner, steering_derivative,
                           steering_vector)

# conditioning threshold above which a direction counts as unresolved
COND_THRESHOLD = 1e12
# eigenvector mass in a block required to flag it as touched by a null direction
_NULL_TOUCH_TOL = 1e-6


class IndexMap:
    """Ordered mapping from parameter labels to contiguous index ranges."""

    def __init__(self, entries):
        self._labels = [str(lbl) for lbl, _ in entries]
        self._sizes = [int(n) for _, n in entries]
        if len(set(self._labels)) != len(self._labels):
            raise ValueError("duplicate labels in index map")
        if any(n < 1 for n in self._sizes):
            raise ValueError("index map sizes must be >= 1")
        offsets = np.concatenate([[0], np.cumsum(self._sizes)])
        self._start = {l: int(offsets[i]) for i, l in enumerate(self._labels)}
        self.dim = int(offsets[-1])

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    def size(self, label: str) -> int:
        return self._sizes[self._labels.index(label)]

    def sl(self, label: str) -> slice:
        if label not in self._start:
            raise KeyError(f"unknown parameter label '{label}'")
        s = self._start[label]
        return slice(s, s + self.size(label))

    def indices(self, labels) -> np.ndarray:
        out = []
        for lbl in labels:
            s = self.sl(lbl)
            out.extend(range(s.start, s.stop))
        return np.asarray(out, dtype=int)

    def subset(self, keep) -> "IndexMap":
        """New map over `keep`, preserving the original label order."""
        keep = set(keep)
        entries = [(l, n) for l, n in zip(self._labels, self._sizes) if l in keep]
        if len(entries) != len(keep):
            missing = keep - set(self._labels)
            raise KeyError(f"unknown labels {sorted(missing)}")
        return IndexMap(entries)

    def entries(self) -> list[tuple[str, int]]:
        return list(zip(self._labels, self._sizes))

    def __eq__(self, other) -> bool:
        return (isinstance(other, IndexMap)
                and self._labels == other._labels
                and self._sizes == other._sizes)

    def __repr__(self) -> str:
        inner = ", ".join(f"{l}:{n}" for l, n in zip(self._labels, self._sizes))
        return f"IndexMap({inner})"


@dataclass
class FimMatrix:
    """Real symmetric information matrix with labelled parameter blocks."""

    matrix: np.ndarray
    index_map: IndexMap
    symbol_count: int = 0
    nuisance_singular: bool = False

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.shape != (self.index_map.dim, self.index_map.dim):
            raise ValueError("matrix shape does not match index map")

    @classmethod
    def zeros(cls, index_map: IndexMap) -> "FimMatrix":
        return cls(np.zeros((index_map.dim, index_map.dim)), index_map, 0)

    def block(self, rows: str, cols: str | None = None) -> np.ndarray:
        return self.matrix[self.index_map.sl(rows), self.index_map.sl(cols or rows)]


@dataclass
class JacobianMatrix:
    """Partials of channel-domain parameters w.r.t. position-domain ones."""

    matrix: np.ndarray
    row_map: IndexMap
    col_map: IndexMap

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.shape != (self.row_map.dim, self.col_map.dim):
            raise ValueError("jacobian shape does not match index maps")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("jacobian has non-finite entries")


@dataclass
class BoundReport:
    """Square-rooted error bounds per parameter block, with singularity flags.

    Bounds are inf where the (effective) null space of the information matrix
    touches the block. `raw_trace_*` are the mixed-unit traces of the
    pseudo-inverse over the blocks of interest, i.e. restricted to the
    estimable subspace; `est_trace` / `null_count` expose the same per block,
    together with how many unresolved directions touch each block.
    """

    peb_ue: float
    veb_ue: float
    peb_pt: np.ndarray
    singular_ue_pos: bool
    singular_ue_vel: bool
    singular_pt: np.ndarray
    condition_number: float
    raw_trace_position: float
    raw_trace_uv: float
    est_trace: dict = field(default_factory=dict)
    null_count: dict = field(default_factory=dict)
    ue_cov: np.ndarray | None = None

    @property
    def any_singular(self) -> bool:
        return bool(self.singular_ue_pos or self.singular_ue_vel
                    or np.any(self.singular_pt))


# -- parameter layouts ---------------------------------------------------------

def ms_channel_layout(num_targets: int, include_doppler: bool = True) -> IndexMap:
    n = num_targets + 1
    entries = [("theta", n), ("tau", n)]
    if include_doppler:
        entries.append(("nu", 1))
    entries += [("beta_r", n), ("beta_i", n)]
    return IndexMap(entries)


def bp_channel_layout(num_targets: int) -> IndexMap:
    n = num_targets + 1
    return IndexMap([("theta", n), ("psi", n), ("tau", n), ("nu", n),
                     ("beta_r", n), ("beta_i", n)])


def _target_labels(num_targets: int) -> list[str]:
    return [f"p_{k}" for k in range(1, num_targets + 1)]


def ms_position_layout(num_targets: int, include_velocity: bool = True) -> IndexMap:
    n = num_targets + 1
    entries = [("p_u", 2)]
    if include_velocity:
        entries.append(("v_u", 2))
    entries += [(lbl, 2) for lbl in _target_labels(num_targets)]
    entries += [("beta_r", n), ("beta_i", n)]
    return IndexMap(entries)


def bp_position_layout(num_targets: int) -> IndexMap:
    n = num_targets + 1
    entries = [("p_u", 2), ("v_u", 2)]
    entries += [(lbl, 2) for lbl in _target_labels(num_targets)]
    entries += [("d_phi", 1), ("d_t", 1), ("beta_r", n), ("beta_i", n)]
    return IndexMap(entries)


def shared_position_layout(num_targets: int) -> IndexMap:
    """Parameters common to both stages: UE position/velocity and targets."""
    return IndexMap([("p_u", 2), ("v_u", 2)]
                    + [(lbl, 2) for lbl in _target_labels(num_targets)])


MS_NUISANCE = ("beta_r", "beta_i")
BP_NUISANCE = ("d_phi", "d_t", "beta_r", "beta_i")


def strided_subcarriers(n_subcarriers: int, count: int) -> np.ndarray:
    """Evenly strided subcarrier subset of the given size (honest subsampling)."""
    if count >= n_subcarriers:
        return np.arange(n_subcarriers)
    stride = n_subcarriers // count
    return np.arange(count) * stride


# -- channel-domain FIM --------------------------------------------------------

class ChannelFimAssembler:
    """Slepian-Bangs FIM for one modality over a fixed symbol grid.

    Construction precomputes every beamformer-independent factor (per-slot
    scalar Grams, steering vectors and derivatives); `fim(F)` then costs a
    handful of small matrix products per slot.
    """

    def __init__(self, params, scenario: Scenario, symbol_grid,
                 subcarriers=None, combiner: Combiner | None = None,
                 include_doppler: bool = True, decouple: bool = True):
        self.scenario = scenario
        self.params = params
        self.decouple = decouple
        self.is_bp = isinstance(params, BpChannelParams)
        if not self.is_bp and not isinstance(params, MsChannelParams):
            raise TypeError("params must be Ms- or BpChannelParams")
        if self.is_bp and not include_doppler:
            raise ValueError("the downlink model always carries Doppler")

        grid = [(int(l), int(p)) for l, p in symbol_grid]
        if not grid:
            raise ValueError("symbol grid must be non-empty")
        for l, p in grid:
            if not (1 <= l <= scenario.n_slots and 1 <= p <= scenario.symbols_per_slot):
                raise ValueError(f"symbol index ({l},{p}) outside the frame")
        self.symbol_count = len(grid)

        self.sigma2 = scenario.noise_power_w
        if self.sigma2 <= 0:
            raise ValueError("noise power must be positive")

        if subcarriers is None:
            subcarriers = np.arange(scenario.n_subcarriers)
        self.subcarriers = np.asarray(subcarriers, dtype=int)
        if self.subcarriers.size == 0:
            raise ValueError("subcarrier set must be non-empty")

        n_paths = params.num_paths
        k = n_paths - 1
        if self.is_bp:
            self.index_map = bp_channel_layout(k)
            kinds = (["theta"] * n_paths + ["psi"] * n_paths + ["tau"] * n_paths
                     + ["nu"] * n_paths + ["beta_r"] * n_paths + ["beta_i"] * n_paths)
            paths = list(range(n_paths)) * 6
            dopplers = params.doppler_hz
        else:
            self.index_map = ms_channel_layout(k, include_doppler)
            kinds = ["theta"] * n_paths + ["tau"] * n_paths
            paths = list(range(n_paths)) * 2
            if include_doppler:
                kinds += ["nu"]
                paths += [0]
            kinds += ["beta_r"] * n_paths + ["beta_i"] * n_paths
            paths += list(range(n_paths)) * 2
            dop = params.doppler_hz if include_doppler else 0.0
            dopplers = np.concatenate([[dop], np.zeros(k)])
        self._kinds = kinds
        self._paths = np.asarray(paths)
        self._same_path = self._paths[:, None] == self._paths[None, :]
        d = self.index_map.dim

        # steering-side cache
        nb = scenario.n_bs
        self._a_bs = [steering_vector(nb, th) for th in params.aod_rad]
        self._da_bs = [steering_derivative(nb, th) for th in params.aod_rad]
        if self.is_bp:
            w = (combiner or Combiner.identity(scenario.n_ue)).matrix
            self._rx = [w.conj().T @ steering_vector(scenario.n_ue, ps)
                        for ps in params.aoa_rad]
            self._drx = [w.conj().T @ steering_derivative(scenario.n_ue, ps)
                         for ps in params.aoa_rad]

        # per-slot scalar Grams
        df = scenario.subcarrier_spacing_hz
        m = self.subcarriers.astype(float)
        mfac = -2j * np.pi * df * m
        by_slot: dict[int, list[int]] = {}
        for l, p in grid:
            by_slot.setdefault(l, []).append(p)
        self._slots = sorted(by_slot)
        self._grams = {}
        gains = params.gain
        delays = params.delay_s
        for l in self._slots:
            t = np.array([symbol_start_time(l, p, scenario.slot_duration_s,
                                            scenario.symbol_duration_s)
                          for p in sorted(by_slot[l])])
            tfac = 2j * np.pi * t
            c_mat = np.empty((t.size * m.size, d), dtype=complex)
            phase_m = [np.exp(-2j * np.pi * df * delays[q] * m)
                       for q in range(n_paths)]
            phase_t = [np.exp(2j * np.pi * dopplers[q] * t)
                       for q in range(n_paths)]
            for col, (kind, q) in enumerate(zip(kinds, self._paths)):
                if kind in ("theta", "psi"):
                    sc = gains[q] * np.outer(phase_t[q], phase_m[q])
                elif kind == "tau":
                    sc = gains[q] * np.outer(phase_t[q], mfac * phase_m[q])
                elif kind == "nu":
                    sc = gains[q] * np.outer(tfac * phase_t[q], phase_m[q])
                elif kind == "beta_r":
                    sc = np.outer(phase_t[q], phase_m[q])
                else:  # beta_i
                    sc = 1j * np.outer(phase_t[q], phase_m[q])
                c_mat[:, col] = sc.ravel()
            self._grams[l] = c_mat.conj().T @ c_mat

    def fim(self, beamformer) -> np.ndarray:
        """Channel-domain FIM for the given beamformer (matrix or Beamformer)."""
        f_all = beamformer.matrix if isinstance(beamformer, Beamformer) else np.asarray(beamformer)
        d = self.index_map.dim
        rx_dim = self._rx[0].size if self.is_bp else self.scenario.n_bs
        acc = np.zeros((d, d))
        v = np.empty((rx_dim, d), dtype=complex)
        for l in self._slots:
            f = f_all[:, l - 1]
            for col, (kind, q) in enumerate(zip(self._kinds, self._paths)):
                s_a = self._a_bs[q].conj() @ f
                if self.is_bp:
                    if kind == "theta":
                        v[:, col] = self._rx[q] * (self._da_bs[q].conj() @ f)
                    elif kind == "psi":
                        v[:, col] = self._drx[q] * s_a
                    else:
                        v[:, col] = self._rx[q] * s_a
                else:
                    if kind == "theta":
                        v[:, col] = (self._da_bs[q] * s_a
                                     + self._a_bs[q] * (self._da_bs[q].conj() @ f))
                    else:
                        v[:, col] = self._a_bs[q] * s_a
            acc += (self._grams[l] * (v.conj().T @ v)).real
        out = (2.0 / self.sigma2) * acc
        if self.decouple:
            out = np.where(self._same_path, out, 0.0)
        return out


def channel_fim(params, scenario: Scenario, beamformer, symbol_grid,
                subcarriers=None, combiner: Combiner | None = None,
                include_doppler: bool = True, decouple: bool = True) -> FimMatrix:
    """One-shot channel-domain FIM; the modality follows the params type.

    With `decouple` (the default) cross-path information blocks are zeroed
    after exact assembly, keeping only intra-path parameter coupling; pass
    False for the fully coupled matrix.
    """
    asm = ChannelFimAssembler(params, scenario, symbol_grid, subcarriers,
                              combiner, include_doppler, decouple)
    return FimMatrix(asm.fim(beamformer), asm.index_map, asm.symbol_count)


# -- Jacobians -----------------------------------------------------------------

def _rot_grad(diff: np.ndarray) -> np.ndarray:
    """Gradient of atan2(d_y, d_x) w.r.t. the head point of d."""
    r2 = diff @ diff
    return np.array([-diff[1], diff[0]]) / r2


def _radial_doppler_grad(unit: np.ndarray, velocity: np.ndarray,
                         dist: float) -> np.ndarray:
    """Gradient of v . u(p) w.r.t. the head point of the unit vector."""
    return (velocity - (velocity @ unit) * unit) / dist


def ms_jacobian(scenario: Scenario, include_doppler: bool = True) -> JacobianMatrix:
    """Partials of the round-trip channel parameters w.r.t. positions.

    Gains are free coordinates of the position-domain vector, so their block
    is an identity and they carry no geometric partials.
    """
    k = scenario.num_targets
    row_map = ms_channel_layout(k, include_doppler)
    col_map = ms_position_layout(k, include_velocity=include_doppler)
    jac = np.zeros((row_map.dim, col_map.dim))

    sources = np.vstack([scenario.ue_position, scenario.pt_positions])
    diff = sources - scenario.bs_position
    ranges = np.linalg.norm(diff, axis=1)
    if np.any(ranges < 1e-9):
        raise ValueError("singular geometry: source at the BS position")
    units = diff / ranges[:, None]
    fc = scenario.carrier_hz

    th = row_map.sl("theta").start
    ta = row_map.sl("tau").start
    pos_cols = [col_map.sl("p_u")] + [col_map.sl(l) for l in _target_labels(k)]
    for q in range(k + 1):
        jac[th + q, pos_cols[q]] = _rot_grad(diff[q])
        jac[ta + q, pos_cols[q]] = (2.0 / SPEED_OF_LIGHT) * units[q]
    if include_doppler:
        nu = row_map.sl("nu").start
        scale = 2.0 * fc / SPEED_OF_LIGHT
        jac[nu, col_map.sl("v_u")] = scale * units[0]
        jac[nu, col_map.sl("p_u")] = scale * _radial_doppler_grad(
            units[0], scenario.ue_velocity, ranges[0])
    for lbl in ("beta_r", "beta_i"):
        jac[row_map.sl(lbl), col_map.sl(lbl)] = np.eye(k + 1)
    return JacobianMatrix(jac, row_map, col_map)


def bp_jacobian(scenario: Scenario) -> JacobianMatrix:
    """Partials of the downlink channel parameters w.r.t. positions and the
    synchronization/orientation nuisances."""
    k = scenario.num_targets
    row_map = bp_channel_layout(k)
    col_map = bp_position_layout(k)
    jac = np.zeros((row_map.dim, col_map.dim))

    sources = np.vstack([scenario.ue_position, scenario.pt_positions])
    diff = sources - scenario.bs_position
    ranges = np.linalg.norm(diff, axis=1)
    if np.any(ranges < 1e-9):
        raise ValueError("singular geometry: source at the BS position")
    units = diff / ranges[:, None]

    to_ue = scenario.ue_position - sources
    seg = np.linalg.norm(to_ue, axis=1)
    if np.any(seg[1:] < 1e-9):
        raise ValueError("singular geometry: UE at a reflector position")
    arrive = np.empty_like(to_ue)
    arrive[0] = units[0]
    if k:
        arrive[1:] = to_ue[1:] / seg[1:, None]
    dist_to_ue = np.concatenate([[ranges[0]], seg[1:]])

    fc = scenario.carrier_hz
    vel = scenario.ue_velocity
    pu = col_map.sl("p_u")
    vu = col_map.sl("v_u")
    pos_cols = [None] + [col_map.sl(l) for l in _target_labels(k)]

    th = row_map.sl("theta").start
    ps = row_map.sl("psi").start
    ta = row_map.sl("tau").start
    nu = row_map.sl("nu").start
    for q in range(k + 1):
        # departure angle at the BS
        tgt = pu if q == 0 else pos_cols[q]
        jac[th + q, tgt] = _rot_grad(diff[q])
        # arrival angle in the UE frame; e points from the UE to the source
        e = sources[q] - scenario.ue_position if q else -diff[0]
        e2 = e @ e
        jac[ps + q, pu] = np.array([e[1], -e[0]]) / e2
        if q:
            jac[ps + q, pos_cols[q]] = np.array([-e[1], e[0]]) / e2
        jac[ps + q, col_map.sl("d_phi")] = -1.0
        # delays: clock bias is additive on every path
        if q == 0:
            jac[ta, pu] = units[0] / SPEED_OF_LIGHT
        else:
            u_from_pt = arrive[q]
            jac[ta + q, pu] = u_from_pt / SPEED_OF_LIGHT
            jac[ta + q, pos_cols[q]] = (units[q] - u_from_pt) / SPEED_OF_LIGHT
        jac[ta + q, col_map.sl("d_t")] = 1.0
        # Doppler of the propagation direction into the UE
        scale = -fc / SPEED_OF_LIGHT
        jac[nu + q, vu] = scale * arrive[q]
        grad = _radial_doppler_grad(arrive[q], vel, dist_to_ue[q])
        jac[nu + q, pu] = scale * grad
        if q:
            jac[nu + q, pos_cols[q]] = -scale * grad
    for lbl in ("beta_r", "beta_i"):
        jac[row_map.sl(lbl), col_map.sl(lbl)] = np.eye(k + 1)
    return JacobianMatrix(jac, row_map, col_map)


def position_fim(chan_fim: FimMatrix, jac: JacobianMatrix) -> FimMatrix:
    """Congruence transform J^T I J into the position domain."""
    if jac.row_map != chan_fim.index_map:
        raise ValueError("jacobian rows do not match the channel FIM layout")
    mat = jac.matrix.T @ chan_fim.matrix @ jac.matrix
    return FimMatrix(0.5 * (mat + mat.T), jac.col_map, chan_fim.symbol_count,
                     chan_fim.nuisance_singular)


# -- marginalization and bound extraction ---------------------------------------

def _scaled_rank_inverse(mat: np.ndarray, rank_rtol: float, ridge: bool):
    """Pseudo-inverse of a symmetric PSD matrix, rank-decided after diagonal
    normalization. Returns (inverse, deficient_flag)."""
    d = np.diag(mat).copy()
    active = d > 0
    out = np.zeros_like(mat)
    if not np.any(active):
        return out, mat.shape[0] > 0
    s = 1.0 / np.sqrt(d[active])
    scaled = mat[np.ix_(active, active)] * np.outer(s, s)
    w, q = np.linalg.eigh(0.5 * (scaled + scaled.T))
    wmax = w[-1]
    if wmax <= 0:
        return out, True
    keep = w > rank_rtol * wmax
    deficient = (not np.all(active)) or (not np.all(keep))
    if ridge:
        inv_scaled = (q / (w + 1e-12 * wmax)) @ q.T
    else:
        inv_scaled = (q[:, keep] / w[keep]) @ q[:, keep].T
    out[np.ix_(active, active)] = inv_scaled * np.outer(s, s)
    return out, deficient


def marginalize_nuisance(fim: FimMatrix, nuisance_labels,
                         ridge: bool = False) -> FimMatrix:
    """Equivalent FIM on the remaining labels via the Schur complement.

    A singular nuisance block is inverted on its range (rank tolerance
    1e-10 relative, decided on the normalized block) and flagged; with
    `ridge` a 1e-12-relative diagonal loading replaces the rank cut.
    """
    nuisance = list(nuisance_labels)
    keep = [l for l in fim.index_map.labels if l not in nuisance]
    for lbl in nuisance:
        fim.index_map.sl(lbl)  # raises on unknown labels
    if not keep:
        raise ValueError("cannot marginalize every parameter")
    ki = fim.index_map.indices(keep)
    ni = fim.index_map.indices(nuisance)
    a = fim.matrix[np.ix_(ki, ki)]
    if ni.size == 0:
        return FimMatrix(a.copy(), fim.index_map.subset(keep),
                         fim.symbol_count, fim.nuisance_singular)
    b = fim.matrix[np.ix_(ki, ni)]
    d = fim.matrix[np.ix_(ni, ni)]
    d_inv, deficient = _scaled_rank_inverse(0.5 * (d + d.T), 1e-10, ridge)
    schur = a - b @ d_inv @ b.T
    return FimMatrix(0.5 * (schur + schur.T), fim.index_map.subset(keep),
                     fim.symbol_count, fim.nuisance_singular or deficient)


def crb_extract(fim: FimMatrix, cond_threshold: float = COND_THRESHOLD
                ) -> BoundReport:
    """Per-block error bounds from the inverse information matrix.

    Directions whose normalized eigenvalue falls below 1/cond_threshold of
    the largest are treated as unresolved: blocks they touch are flagged and
    reported unbounded, everything else is read from the range inverse.
    """
    imap = fim.index_map
    mat = 0.5 * (fim.matrix + fim.matrix.T)
    dim = imap.dim
    diag = np.diag(mat).copy()
    active = diag > 0

    n_targets = sum(1 for l in imap.labels if l.startswith("p_") and l != "p_u")
    pt_labels = [f"p_{k}" for k in range(1, n_targets + 1)]
    has_vel = "v_u" in imap.labels

    cov = np.zeros((dim, dim))
    cond = math.inf
    null_gl = np.zeros((dim, 0))
    if np.any(active):
        s = 1.0 / np.sqrt(diag[active])
        scaled = mat[np.ix_(active, active)] * np.outer(s, s)
        w, q = np.linalg.eigh(0.5 * (scaled + scaled.T))
        wmax = w[-1]
        if wmax > 0:
            null = w <= wmax / cond_threshold
            cond = float(wmax / w[0]) if w[0] > 0 else math.inf
            keep = ~null
            inv_scaled = (q[:, keep] / w[keep]) @ q[:, keep].T
            cov[np.ix_(active, active)] = inv_scaled * np.outer(s, s)
            null_act = q[:, null]
            null_gl = np.zeros((dim, null_act.shape[1]))
            null_gl[active] = null_act
        else:
            active = np.zeros(dim, dtype=bool)

    def block_state(label: str):
        sl = imap.sl(label)
        rows = np.arange(sl.start, sl.stop)
        n_dead = int(np.sum(~active[rows]))
        if null_gl.shape[1]:
            touch = np.abs(null_gl[rows]).max(axis=0) > _NULL_TOUCH_TOL
            n_dead += int(np.sum(touch))
        sub = cov[np.ix_(rows, rows)]
        est = float(np.trace(sub))
        if n_dead:
            return True, math.inf, est, n_dead, sub
        return False, float(np.sqrt(est)), est, 0, sub

    est_trace: dict = {}
    null_count: dict = {}
    sing_pu, peb_ue, est_trace["p_u"], null_count["p_u"], ue_cov = \
        block_state("p_u")
    if has_vel:
        sing_vu, veb_ue, est_trace["v_u"], null_count["v_u"], _ = \
            block_state("v_u")
    else:
        sing_vu, veb_ue = False, math.nan
    sing_pt = np.zeros(n_targets, dtype=bool)
    peb_pt = np.zeros(n_targets)
    for i, lbl in enumerate(pt_labels):
        sing_pt[i], peb_pt[i], est_trace[lbl], null_count[lbl], _ = \
            block_state(lbl)

    interest_uv = ["p_u"] + (["v_u"] if has_vel else [])
    idx_uv = imap.indices(interest_uv)
    idx_all = imap.indices(interest_uv + pt_labels)
    return BoundReport(
        peb_ue=peb_ue, veb_ue=veb_ue, peb_pt=peb_pt,
        singular_ue_pos=sing_pu, singular_ue_vel=sing_vu, singular_pt=sing_pt,
        condition_number=float(cond),
        raw_trace_position=float(np.sum(np.diag(cov)[idx_all])),
        raw_trace_uv=float(np.sum(np.diag(cov)[idx_uv])),
        est_trace=est_trace, null_count=null_count,
        ue_cov=None if sing_pu else ue_cov,
    )


# -- cached per-stage pipeline ---------------------------------------------------

class StageInformation:
    """Position-domain information for one sensing stage as a function of the
    beamformer, marginalized onto the shared parameter vector.

    Grid- and geometry-dependent factors are cached at construction so that
    optimizer loops only pay for the beamformer-dependent part.
    """

    def __init__(self, params, scenario: Scenario, symbol_grid,
                 subcarriers=None, combiner: Combiner | None = None,
                 include_doppler: bool = True, decouple: bool = True,
                 nuisance=None, ridge: bool = False):
        self._asm = ChannelFimAssembler(params, scenario, symbol_grid,
                                        subcarriers, combiner,
                                        include_doppler, decouple)
        self.is_bp = self._asm.is_bp
        if self.is_bp:
            self._jac = bp_jacobian(scenario)
            self.nuisance = tuple(nuisance) if nuisance is not None else BP_NUISANCE
        else:
            self._jac = ms_jacobian(scenario, include_doppler)
            self.nuisance = tuple(nuisance) if nuisance is not None else MS_NUISANCE
        self._ridge = ridge
        self.position_map = self._jac.col_map
        self.eta_map = self.position_map.subset(
            [l for l in self.position_map.labels if l not in self.nuisance])
        self.symbol_count = self._asm.symbol_count

    def channel(self, beamformer) -> FimMatrix:
        return FimMatrix(self._asm.fim(beamformer), self._asm.index_map,
                         self.symbol_count)

    def position(self, beamformer) -> FimMatrix:
        return position_fim(self.channel(beamformer), self._jac)

    def eta(self, beamformer) -> FimMatrix:
        """Marginalized information on the shared position parameters."""
        return marginalize_nuisance(self.position(beamformer), self.nuisance,
                                    self._ridge)
