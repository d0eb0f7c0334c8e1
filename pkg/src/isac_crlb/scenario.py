"""Scene geometry, OFDM numerology, and channel-domain parameter derivation.

Holds the static description of one deployment (BS, mobile UE, passive
reflectors, array/OFDM configuration, noise and link-budget constants) and
derives the channel-domain parameters seen by the two sensing modalities:

* round-trip echoes at the co-located BS receiver (angle, round-trip delay,
  LoS Doppler, complex gain per path), and
* the downlink BS-to-UE channel (departure/arrival angles, one-way delays
  with clock bias, per-path Doppler, complex gains).

All quantities are SI unless the field name says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299792458.0  # m/s


def db_to_linear(db: float) -> float:
    """Power ratio from dB."""
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


def wrap_angle(angle):
    """Wrap to (-pi, pi]."""
    return -((-np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi)


@dataclass
class NoiseModel:
    """Receiver noise and large-scale propagation constants."""

    psd_dbm_hz: float = -173.0        # single-sided noise PSD
    noise_figure_db: float = 10.0
    path_loss_exponent: float = 3.5   # log-distance exponent for the direct downlink
    shadow_sigma_db: float = 8.0

    def noise_power(self, subcarrier_spacing_hz: float) -> float:
        """Per-subcarrier noise power in watts: figure * PSD * spacing."""
        if subcarrier_spacing_hz <= 0:
            raise ValueError("subcarrier spacing must be positive")
        n0 = dbm_to_watts(self.psd_dbm_hz)
        return db_to_linear(self.noise_figure_db) * n0 * subcarrier_spacing_hz


@dataclass
class ThresholdSet:
    """Accuracy targets for the allocation loss, with per-term weights."""

    ms_peb_ue_m: float = 0.5
    bp_peb_ue_m: float = 0.1
    bp_veb_ue_mps: float = 10.0
    bp_peb_pt_m: float = 0.2
    ms_peb_pt_m: float = 1.0
    w_ms_peb_ue: float = 1.0
    w_bp_peb_ue: float = 1.0
    w_bp_veb_ue: float = 1.0
    w_bp_peb_pt: float = 1.0
    w_ms_peb_pt: float = 1.0

    def __post_init__(self):
        for name in ("ms_peb_ue_m", "bp_peb_ue_m", "bp_veb_ue_mps",
                     "bp_peb_pt_m", "ms_peb_pt_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"threshold {name} must be positive")
        for name in ("w_ms_peb_ue", "w_bp_peb_ue", "w_bp_veb_ue",
                     "w_bp_peb_pt", "w_ms_peb_pt"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be non-negative")


@dataclass
class Scenario:
    """One deployment: geometry, kinematics, arrays, OFDM grid, link budget.

    Both arrays are uniform linear with half-wavelength spacing; angles are
    measured against the owning array's broadside. ``bs_orientation_rad`` is
    the BS broadside direction in the global frame,
    ``orientation_offset_rad`` rotates the UE frame against the global one.
    """

    ue_position: np.ndarray                      # m, shape (2,)
    ue_velocity: np.ndarray = (0.0, 0.0)         # m/s, shape (2,)
    pt_positions: np.ndarray = ()                # m, shape (K, 2)
    bs_position: np.ndarray = (0.0, 0.0)         # m, shape (2,)
    bs_orientation_rad: float = 0.0
    n_bs: int = 64
    n_ue: int = 16
    carrier_hz: float = 28e9
    bandwidth_hz: float = 120e6
    n_subcarriers: int = 1024
    n_slots: int = 16
    symbols_per_slot: int = 100
    power_budget_watts: float = dbm_to_watts(-20.0)
    clock_bias_s: float = 1e-6
    orientation_offset_rad: float = math.radians(110.0)
    noise: NoiseModel = field(default_factory=NoiseModel)
    rcs_ue_m2: float = 10.0
    rcs_pt_m2: np.ndarray = 10.0                 # scalar or per-target array
    shadowing: bool = False

    def __post_init__(self):
        self.ue_position = np.asarray(self.ue_position, dtype=float).reshape(2)
        self.ue_velocity = np.asarray(self.ue_velocity, dtype=float).reshape(2)
        self.bs_position = np.asarray(self.bs_position, dtype=float).reshape(2)
        self.pt_positions = np.asarray(self.pt_positions, dtype=float).reshape(-1, 2)
        k = self.pt_positions.shape[0]
        self.rcs_pt_m2 = np.broadcast_to(
            np.asarray(self.rcs_pt_m2, dtype=float), (k,)).copy()
        for name in ("n_bs", "n_ue", "n_subcarriers", "n_slots", "symbols_per_slot"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.power_budget_watts <= 0:
            raise ValueError("power budget must be positive")
        if self.carrier_hz <= 0 or self.bandwidth_hz <= 0:
            raise ValueError("carrier and bandwidth must be positive")
        if np.linalg.norm(self.ue_position - self.bs_position) < 1e-9:
            raise ValueError("UE position coincides with the BS")
        for i, p in enumerate(self.pt_positions):
            if np.linalg.norm(p - self.bs_position) < 1e-9:
                raise ValueError(f"target {i} coincides with the BS")

    # -- derived numerology --------------------------------------------------

    @property
    def num_targets(self) -> int:
        return self.pt_positions.shape[0]

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / self.n_subcarriers

    @property
    def symbol_duration_s(self) -> float:
        # no cyclic prefix: symbol time is the inverse subcarrier spacing
        return self.n_subcarriers / self.bandwidth_hz

    @property
    def slot_duration_s(self) -> float:
        return self.symbols_per_slot * self.symbol_duration_s

    @property
    def ue_speed_mps(self) -> float:
        return float(np.linalg.norm(self.ue_velocity))

    @property
    def per_subcarrier_budget_w(self) -> float:
        return self.power_budget_watts / self.n_subcarriers

    @property
    def noise_power_w(self) -> float:
        return self.noise.noise_power(self.subcarrier_spacing_hz)


@dataclass
class MsChannelParams:
    """Round-trip echo parameters; index 0 is the UE, 1..K the reflectors."""

    aod_rad: np.ndarray       # (K+1,) departure angle in the BS frame
    delay_s: np.ndarray       # (K+1,) round-trip delays
    doppler_hz: float         # LoS UE echo only
    gain: np.ndarray          # (K+1,) complex

    def __post_init__(self):
        self.aod_rad = np.asarray(self.aod_rad, dtype=float)
        self.delay_s = np.asarray(self.delay_s, dtype=float)
        self.gain = np.asarray(self.gain, dtype=complex)

    @property
    def num_paths(self) -> int:
        return self.aod_rad.size

    def flatten(self) -> np.ndarray:
        """Stack as [angles; delays; doppler; Re(gain); Im(gain)], length 4K+5."""
        return np.concatenate([
            self.aod_rad, self.delay_s, [self.doppler_hz],
            self.gain.real, self.gain.imag,
        ])

    @classmethod
    def from_flat(cls, vec: np.ndarray, num_targets: int) -> "MsChannelParams":
        n = num_targets + 1
        vec = np.asarray(vec, dtype=float)
        if vec.size != 4 * num_targets + 5:
            raise ValueError("flat vector length does not match target count")
        return cls(
            aod_rad=vec[:n],
            delay_s=vec[n:2 * n],
            doppler_hz=float(vec[2 * n]),
            gain=vec[2 * n + 1:3 * n + 1] + 1j * vec[3 * n + 1:],
        )


@dataclass
class BpChannelParams:
    """Downlink BS-to-UE channel parameters; path 0 is LoS, 1..K via reflectors."""

    aod_rad: np.ndarray       # (K+1,) departure angle in the BS frame
    aoa_rad: np.ndarray       # (K+1,) arrival angle in the UE frame
    delay_s: np.ndarray       # (K+1,) one-way delays, clock bias included
    doppler_hz: np.ndarray    # (K+1,)
    gain: np.ndarray          # (K+1,) complex

    def __post_init__(self):
        self.aod_rad = np.asarray(self.aod_rad, dtype=float)
        self.aoa_rad = np.asarray(self.aoa_rad, dtype=float)
        self.delay_s = np.asarray(self.delay_s, dtype=float)
        self.doppler_hz = np.asarray(self.doppler_hz, dtype=float)
        self.gain = np.asarray(self.gain, dtype=complex)

    @property
    def num_paths(self) -> int:
        return self.aod_rad.size

    def flatten(self) -> np.ndarray:
        """[aod; aoa; delays; dopplers; Re(gain); Im(gain)], length 6K+6."""
        return np.concatenate([
            self.aod_rad, self.aoa_rad, self.delay_s, self.doppler_hz,
            self.gain.real, self.gain.imag,
        ])

    @classmethod
    def from_flat(cls, vec: np.ndarray, num_targets: int) -> "BpChannelParams":
        n = num_targets + 1
        vec = np.asarray(vec, dtype=float)
        if vec.size != 6 * num_targets + 6:
            raise ValueError("flat vector length does not match target count")
        return cls(
            aod_rad=vec[:n],
            aoa_rad=vec[n:2 * n],
            delay_s=vec[2 * n:3 * n],
            doppler_hz=vec[3 * n:4 * n],
            gain=vec[4 * n:5 * n] + 1j * vec[5 * n:],
        )


# -- timing ------------------------------------------------------------------

def coherence_time(carrier_hz: float, v_rel_mps: float) -> float:
    """Channel coherence time lambda/(2 v_rel); inf for a static link."""
    if carrier_hz <= 0:
        raise ValueError("carrier frequency must be positive")
    if v_rel_mps < 0:
        raise ValueError("relative speed must be non-negative")
    if v_rel_mps == 0:
        return math.inf
    return SPEED_OF_LIGHT / carrier_hz / (2.0 * v_rel_mps)


def symbol_start_time(slot: int, symbol: int, slot_duration_s: float,
                      symbol_duration_s: float) -> float:
    """Transmission start of the (slot, symbol) pilot; both indices 1-based."""
    if slot < 1 or symbol < 1:
        raise ValueError("slot and symbol indices are 1-based")
    return (slot - 1) * slot_duration_s + (symbol - 1) * symbol_duration_s


def effective_slots(scenario: Scenario) -> int:
    """Largest slot count whose pilots all finish inside the coherence time.

    Always at least 1: the constant-parameter model is applied to the first
    slot even when the coherence window is shorter.
    """
    tc = coherence_time(scenario.carrier_hz, scenario.ue_speed_mps)
    if math.isinf(tc):
        return scenario.n_slots
    n = int(tc // scenario.slot_duration_s)
    return int(min(max(n, 1), scenario.n_slots))


def full_symbol_grid(n_slots: int, symbols_per_slot: int) -> list[tuple[int, int]]:
    """All (slot, symbol) pairs in transmission order, 1-based."""
    return [(l, p) for l in range(1, n_slots + 1)
            for p in range(1, symbols_per_slot + 1)]


# -- channel-domain parameter derivation --------------------------------------

def _bearings(scenario: Scenario):
    """Ranges and unit vectors from the BS to the UE and each reflector."""
    sources = np.vstack([scenario.ue_position, scenario.pt_positions])
    diff = sources - scenario.bs_position
    ranges = np.linalg.norm(diff, axis=1)
    if np.any(ranges < 1e-9):
        raise ValueError("source coincides with the BS")
    return sources, ranges, diff / ranges[:, None]


def _draw_phases_and_shadow(scenario: Scenario, n_paths: int, rng):
    """Gain phases (always) and shadow factors (only when enabled).

    Phases are drawn before shadowing so that toggling shadowing does not
    change them for a fixed stream. With rng=None the derivation is fully
    deterministic: zero phases, no shadowing.
    """
    if rng is None:
        return np.zeros(n_paths), np.ones(n_paths)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_paths)
    shadow = np.ones(n_paths)
    if scenario.shadowing and scenario.noise.shadow_sigma_db > 0:
        shadow_db = rng.normal(0.0, scenario.noise.shadow_sigma_db, n_paths)
        shadow = 10.0 ** (shadow_db / 20.0)
    return phases, shadow


def derive_ms_params(scenario: Scenario, rng=None) -> MsChannelParams:
    """Round-trip echo parameters for the co-located BS receiver.

    Amplitudes follow the monostatic radar equation with log-distance legs
    (free-space reference at 1 m, exponent from the noise model):
    |gain| = (lambda/4pi) * sqrt(rcs/4pi) * d^-n. Doppler is round-trip,
    positive when the UE recedes from the BS.
    """
    _, ranges, units = _bearings(scenario)
    lam = scenario.wavelength_m
    n_exp = scenario.noise.path_loss_exponent
    aod = wrap_angle(np.arctan2(units[:, 1], units[:, 0])
                     - scenario.bs_orientation_rad)
    delay = 2.0 * ranges / SPEED_OF_LIGHT
    doppler = 2.0 * (scenario.carrier_hz / SPEED_OF_LIGHT) * float(
        scenario.ue_velocity @ units[0])
    rcs = np.concatenate([[scenario.rcs_ue_m2], scenario.rcs_pt_m2])
    amp = (lam / (4.0 * np.pi)) * np.sqrt(rcs / (4.0 * np.pi)) \
        * ranges ** (-n_exp)
    phases, shadow = _draw_phases_and_shadow(scenario, ranges.size, rng)
    return MsChannelParams(aod_rad=aod, delay_s=delay, doppler_hz=doppler,
                           gain=amp * shadow * np.exp(1j * phases))


def derive_bp_params(scenario: Scenario, rng=None) -> BpChannelParams:
    """Downlink channel parameters as observed by the UE.

    The LoS amplitude uses log-distance path loss (exponent from the noise
    model, free-space reference at 1 m); reflected paths are single-bounce
    specular components, modelled as cascaded free-space segments with the
    reflection factor sqrt(rcs/4pi). Delays carry the clock bias, arrival
    angles are measured in the UE frame (global angle minus the orientation
    offset), and per-path Doppler is -(f_c/c) v . u with u the propagation
    direction into the UE.
    """
    sources, ranges, units = _bearings(scenario)
    lam = scenario.wavelength_m
    n_exp = scenario.noise.path_loss_exponent

    aod = wrap_angle(np.arctan2(units[:, 1], units[:, 0])
                     - scenario.bs_orientation_rad)

    to_ue = scenario.ue_position - sources          # path 0 row is zero
    seg2 = np.linalg.norm(to_ue, axis=1)
    if np.any(seg2[1:] < 1e-9):
        raise ValueError("UE position coincides with a reflector")
    arrive_dir = np.empty_like(to_ue)
    arrive_dir[0] = units[0]                        # LoS arrives along BS->UE
    if ranges.size > 1:
        arrive_dir[1:] = to_ue[1:] / seg2[1:, None]

    # arrival angle in the UE frame: global angle of the incoming source
    # direction, rotated by the frame offset
    incoming = -arrive_dir                          # UE -> source direction
    aoa = wrap_angle(np.arctan2(incoming[:, 1], incoming[:, 0])
                     - scenario.orientation_offset_rad)

    delay = np.empty(ranges.size)
    delay[0] = ranges[0] / SPEED_OF_LIGHT
    delay[1:] = (ranges[1:] + seg2[1:]) / SPEED_OF_LIGHT
    delay += scenario.clock_bias_s

    doppler = -(scenario.carrier_hz / SPEED_OF_LIGHT) * (
        arrive_dir @ scenario.ue_velocity)

    amp = np.empty(ranges.size)
    amp[0] = (lam / (4.0 * np.pi)) * ranges[0] ** (-n_exp / 2.0)
    amp[1:] = (lam / (4.0 * np.pi)) * np.sqrt(
        scenario.rcs_pt_m2 / (4.0 * np.pi)) / (ranges[1:] * seg2[1:])
    phases, shadow = _draw_phases_and_shadow(scenario, ranges.size, rng)
    return BpChannelParams(aod_rad=aod, aoa_rad=aoa, delay_s=delay,
                           doppler_hz=doppler,
                           gain=amp * shadow * np.exp(1j * phases))
