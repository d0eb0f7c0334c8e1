"""Array responses and noise-free observation models for both modalities.

Uniform linear arrays with half-wavelength spacing: element i of the array
response is exp(j*pi*i*sin(angle)). The round-trip channel at the BS is a sum
of rank-1 outer products a(theta) a(theta)^H, the downlink channel a sum of
a_ue(psi) a_bs(theta)^H dyads with per-path Doppler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import (BpChannelParams, MsChannelParams, Scenario,
                       symbol_start_time)


def steering_vector(n: int, angle: float) -> np.ndarray:
    """Half-wavelength ULA response; unit-modulus entries."""
    if n < 1:
        raise ValueError("array size must be >= 1")
    idx = np.arange(n)
    return np.exp(1j * np.pi * idx * np.sin(angle))


def steering_derivative(n: int, angle: float) -> np.ndarray:
    """Elementwise angle derivative of steering_vector."""
    if n < 1:
        raise ValueError("array size must be >= 1")
    idx = np.arange(n)
    return (1j * np.pi * idx * np.cos(angle)
            * np.exp(1j * np.pi * idx * np.sin(angle)))


@dataclass
class Beamformer:
    """Per-slot transmit beamformers with a per-subcarrier power budget."""

    matrix: np.ndarray            # (N_B, L) complex
    budget_w: float               # trace budget shared by all L columns

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.matrix.ndim != 2:
            raise ValueError("beamformer matrix must be 2-D (antennas x slots)")
        if self.budget_w <= 0:
            raise ValueError("power budget must be positive")
        if self.trace_power > self.budget_w * (1.0 + 1e-12) + 1e-300:
            raise ValueError("beamformer exceeds its power budget")

    @property
    def trace_power(self) -> float:
        return float(np.sum(np.abs(self.matrix) ** 2))

    @property
    def n_slots(self) -> int:
        return self.matrix.shape[1]

    def slot(self, l: int) -> np.ndarray:
        """Column for slot l (1-based)."""
        return self.matrix[:, l - 1]


@dataclass
class Combiner:
    """Analog combining matrix at the UE; columns orthonormal."""

    matrix: np.ndarray            # (N_U, N_RF)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        gram = self.matrix.conj().T @ self.matrix
        if not np.allclose(gram, np.eye(self.matrix.shape[1]), atol=1e-9):
            raise ValueError("combiner columns must be orthonormal")

    @classmethod
    def identity(cls, n_ue: int) -> "Combiner":
        """Fully digital UE: one RF chain per element."""
        return cls(np.eye(n_ue, dtype=complex))

    @classmethod
    def dft(cls, n_ue: int, n_rf: int) -> "Combiner":
        if not 1 <= n_rf <= n_ue:
            raise ValueError("need 1 <= n_rf <= n_ue")
        dft = np.fft.fft(np.eye(n_ue)) / np.sqrt(n_ue)
        return cls(dft[:, :n_rf])


def ms_channel(params: MsChannelParams, scenario: Scenario,
               slot: int, symbol: int, subcarrier: int) -> np.ndarray:
    """Round-trip channel matrix at one (slot, symbol, subcarrier) triple.

    Doppler rotates only the UE echo (path 0); reflectors are static.
    """
    t = symbol_start_time(slot, symbol, scenario.slot_duration_s,
                          scenario.symbol_duration_s)
    df = scenario.subcarrier_spacing_hz
    n = scenario.n_bs
    out = np.zeros((n, n), dtype=complex)
    for k in range(params.num_paths):
        coeff = params.gain[k] * np.exp(-2j * np.pi * subcarrier * df
                                        * params.delay_s[k])
        if k == 0:
            coeff *= np.exp(2j * np.pi * params.doppler_hz * t)
        a = steering_vector(n, params.aod_rad[k])
        out += coeff * np.outer(a, a.conj())
    return out


def bp_channel(params: BpChannelParams, scenario: Scenario,
               slot: int, symbol: int, subcarrier: int) -> np.ndarray:
    """Downlink channel matrix (N_U x N_B) with per-path Doppler."""
    t = symbol_start_time(slot, symbol, scenario.slot_duration_s,
                          scenario.symbol_duration_s)
    df = scenario.subcarrier_spacing_hz
    out = np.zeros((scenario.n_ue, scenario.n_bs), dtype=complex)
    for k in range(params.num_paths):
        coeff = (params.gain[k]
                 * np.exp(-2j * np.pi * subcarrier * df * params.delay_s[k])
                 * np.exp(2j * np.pi * params.doppler_hz[k] * t))
        a_ue = steering_vector(scenario.n_ue, params.aoa_rad[k])
        a_bs = steering_vector(scenario.n_bs, params.aod_rad[k])
        out += coeff * np.outer(a_ue, a_bs.conj())
    return out


def noiseless_obs(channel: np.ndarray, beamformer: Beamformer, slot: int,
                  pilot: complex = 1.0, combiner: Combiner | None = None
                  ) -> np.ndarray:
    """Noise-free receive vector H f_l s, optionally combined as W^H H f_l s."""
    if abs(abs(pilot) - 1.0) > 1e-12:
        raise ValueError("pilot symbols are unit-modulus")
    f = beamformer.slot(slot)
    if channel.shape[1] != f.size:
        raise ValueError("channel/beamformer dimension mismatch")
    mu = channel @ f * pilot
    if combiner is not None:
        if combiner.matrix.shape[0] != mu.size:
            raise ValueError("channel/combiner dimension mismatch")
        mu = combiner.matrix.conj().T @ mu
    return mu
