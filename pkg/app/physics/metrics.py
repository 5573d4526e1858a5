"""Communication rate, sensing SNR, energy accounting and constraint checks."""
from typing import Optional, Sequence

import numpy as np

from app.models.data_models import (
    AMPLITUDE_AS_WRITTEN,
    AMPLITUDE_CONSISTENT,
    ANTENNA_SPACING,
    ENERGY_BUDGET,
    POWER_LIMIT,
    SENSING,
    TDMA_BUDGET,
    Allocation,
    AntennaLayout,
    FeasibilityReport,
    RfConstants,
    Scenario,
    SlotMetrics,
    Waveguide,
)
from app.physics.channel import effective_gains
from app.physics.geometry import min_same_waveguide_gap


def rate_snr(q_k: float, p_k: float, gain_sq: float, n_antennas: int, noise_power: float) -> float:
    """SNR argument of the rate formula: p |g|^2 / (M q sigma^2)."""
    return (p_k * gain_sq) / (n_antennas * q_k * noise_power)


def comm_rate(q_k: float, p_k: float, gain: complex, n_antennas: int, noise_power: float) -> float:
    """
    Achievable rate of one user within its TDMA share of the slot.

    Args:
        q_k: Slot fraction of the user
        p_k: Transmit power for the user (W)
        gain: Effective gain towards the user
        n_antennas: Total antenna count M
        noise_power: Noise power sigma^2 (W)

    Returns:
        float: Rate in bps/Hz (0 when q_k or p_k is 0)
    """
    if q_k <= 0.0 or p_k <= 0.0:
        return 0.0
    snr = rate_snr(q_k, p_k, abs(gain) ** 2, n_antennas, noise_power)
    return float(q_k * np.log2(1.0 + snr))


def amplitude_scale(p_k: float, n_antennas: int, mode: str) -> float:
    """Per-antenna signal amplitude used for user k's share in the sensing SNR."""
    if mode == AMPLITUDE_CONSISTENT:
        return float(np.sqrt(p_k / n_antennas))
    if mode == AMPLITUDE_AS_WRITTEN:
        return float(p_k / n_antennas)
    raise ValueError(f"Unknown amplitude mode {mode!r}")


def _snr_from_gains(target_gain: complex, user_gains: np.ndarray, powers: np.ndarray,
                    n_antennas: int, noise_power: float, mode: str) -> float:
    total = 0.0
    for g_user, p_k in zip(user_gains, powers):
        amp_sq = amplitude_scale(p_k, n_antennas, mode) ** 2
        s_target = amp_sq * abs(target_gain) ** 2
        s_user = amp_sq * abs(g_user) ** 2
        total += s_target / (s_user + noise_power)
    return float(total)


def sensing_snr(target: int, layout: AntennaLayout, waveguides: Sequence[Waveguide], rf: RfConstants,
                allocation: Allocation, scenario: Scenario, mode: Optional[str] = None) -> float:
    """
    Sensing SNR of one target summed over every user's share.

    Args:
        target: Target index
        layout: Antenna layout
        waveguides: Waveguides of the layout
        rf: Radio constants
        allocation: Slot fractions and powers
        scenario: Scenario holding terminals and noise power
        mode: Amplitude convention; defaults to the scenario's

    Returns:
        float: Linear SNR
    """
    mode = mode or scenario.snr_amplitude_mode
    target_gain = effective_gains(scenario.targets[target], layout, waveguides, rf)[0]
    user_gains = effective_gains(scenario.users, layout, waveguides, rf)
    return _snr_from_gains(target_gain, user_gains, allocation.p, layout.size, scenario.noise_power, mode)


def slot_energy(allocation: Allocation) -> float:
    """Energy spent in one slot: sum_k p_k q_k."""
    return float(np.sum(allocation.p * allocation.q))


def feasibility_report(scenario: Scenario, layout: AntennaLayout, allocation: Allocation,
                       sensing_snrs: Sequence[float], cumulative_energy: float) -> FeasibilityReport:
    """
    Evaluate every constraint of the sum-rate problem for one slot.

    Args:
        scenario: Scenario with thresholds and budgets
        layout: Antenna layout after projection
        allocation: Slot fractions and powers
        sensing_snrs: Linear sensing SNR per target
        cumulative_energy: Episode energy including this slot

    Returns:
        FeasibilityReport: Flags and violation magnitudes per constraint
    """
    snrs = np.asarray(sensing_snrs, dtype=np.float64)
    sensing_gap = float(np.sum(np.maximum(0.0, scenario.gamma_min - snrs)))
    q_total = float(np.sum(allocation.q))
    tdma_gap = max(0.0, q_total - 1.0) + float(np.sum(np.maximum(0.0, -allocation.q)))
    energy_gap = max(0.0, cumulative_energy - scenario.energy_budget)
    power_gap = float(np.sum(np.maximum(0.0, allocation.p - scenario.p_max))
                      + np.sum(np.maximum(0.0, -allocation.p)))
    spacing_gap = max(0.0, scenario.delta - min_same_waveguide_gap(layout))

    violations = {
        SENSING: sensing_gap,
        TDMA_BUDGET: tdma_gap,
        ENERGY_BUDGET: energy_gap,
        POWER_LIMIT: power_gap,
        ANTENNA_SPACING: spacing_gap,
    }
    flags = {
        SENSING: bool(np.all(snrs >= scenario.gamma_min)),
        TDMA_BUDGET: bool(q_total <= 1.0 and np.all(allocation.q >= 0.0)),
        ENERGY_BUDGET: bool(cumulative_energy <= scenario.energy_budget),
        POWER_LIMIT: bool(np.all((allocation.p >= 0.0) & (allocation.p <= scenario.p_max))),
        ANTENNA_SPACING: bool(spacing_gap <= 1e-12),
    }
    return FeasibilityReport(flags=flags, violations=violations)


def slot_metrics(scenario: Scenario, layout: AntennaLayout, allocation: Allocation,
                 cumulative_energy: Optional[float] = None, mode: Optional[str] = None) -> SlotMetrics:
    """Rates, sensing SNRs, energy and (optionally) feasibility of one slot."""
    mode = mode or scenario.snr_amplitude_mode
    n_antennas = layout.size
    user_gains = effective_gains(scenario.users, layout, scenario.waveguides, scenario.rf)
    target_gains = effective_gains(scenario.targets, layout, scenario.waveguides, scenario.rf)

    rates = np.array([
        comm_rate(q_k, p_k, g, n_antennas, scenario.noise_power)
        for q_k, p_k, g in zip(allocation.q, allocation.p, user_gains)
    ])
    snrs = np.array([
        _snr_from_gains(g_t, user_gains, allocation.p, n_antennas, scenario.noise_power, mode)
        for g_t in target_gains
    ])
    energy = slot_energy(allocation)
    report = None
    if cumulative_energy is not None:
        report = feasibility_report(scenario, layout, allocation, snrs, cumulative_energy)
    return SlotMetrics(rates=rates, sensing_snrs=snrs, energy=energy, feasibility=report)
