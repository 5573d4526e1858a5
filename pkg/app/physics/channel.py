"""Near-field line-of-sight channel and in-waveguide phase shifts."""
from typing import Sequence

import numpy as np

from app.errors import SingularChannelError
from app.models.data_models import AntennaLayout, RfConstants, Waveguide

TWO_PI = 2.0 * np.pi


def _wrap_phase(phase):
    wrapped = np.mod(phase, TWO_PI)
    # np.mod can round up to exactly 2*pi for tiny negative inputs
    return np.where(wrapped >= TWO_PI, 0.0, wrapped)


def phase_shift(feed, antenna, guided_wavelength: float) -> float:
    """
    Phase accumulated between the feed point and an antenna, reduced to [0, 2*pi).

    Args:
        feed: Feed point position (m)
        antenna: Antenna position (m)
        guided_wavelength: Wavelength inside the waveguide (m)

    Returns:
        float: Phase in radians
    """
    if not guided_wavelength > 0:
        raise ValueError("guided wavelength must be positive")
    distance = np.linalg.norm(np.asarray(antenna, dtype=np.float64) - np.asarray(feed, dtype=np.float64))
    return float(_wrap_phase(TWO_PI * distance / guided_wavelength))


def channel_coeff(terminal, antenna, rf: RfConstants) -> complex:
    """
    Spherical-wave LoS coefficient alpha * exp(-j 2 pi d / lambda) / d.

    Args:
        terminal: User or target position (m)
        antenna: Antenna position (m)
        rf: Radio constants

    Returns:
        complex: Channel coefficient
    """
    distance = float(np.linalg.norm(np.asarray(terminal, dtype=np.float64) - np.asarray(antenna, dtype=np.float64)))
    if distance == 0.0:
        raise SingularChannelError("terminal coincides with an antenna")
    phase = _wrap_phase(TWO_PI * distance / rf.wavelength)
    return complex(rf.alpha * np.exp(-1j * phase) / distance)


def feed_phases(layout: AntennaLayout, waveguides: Sequence[Waveguide], rf: RfConstants) -> np.ndarray:
    """Phase shift of every antenna, each measured from its own waveguide's feed."""
    feeds = np.stack([waveguides[w].feed_point for w in layout.waveguide_ids])
    distance = np.linalg.norm(layout.positions - feeds, axis=1)
    return _wrap_phase(TWO_PI * distance / rf.guided_wavelength)


def channel_vector(terminal, layout: AntennaLayout, rf: RfConstants) -> np.ndarray:
    """Channel coefficients from every antenna of the layout to one terminal."""
    distance = np.linalg.norm(layout.positions - np.asarray(terminal, dtype=np.float64), axis=1)
    if np.any(distance == 0.0):
        raise SingularChannelError("terminal coincides with an antenna")
    phase = _wrap_phase(TWO_PI * distance / rf.wavelength)
    return rf.alpha * np.exp(-1j * phase) / distance


def effective_gain(terminal, layout: AntennaLayout, waveguides: Sequence[Waveguide], rf: RfConstants) -> complex:
    """
    Coherent gain sum_n h_n exp(-j theta_n) over all antennas of the layout.

    Args:
        terminal: User or target position (m)
        layout: Antenna layout
        waveguides: Waveguides the layout refers to
        rf: Radio constants

    Returns:
        complex: Effective gain
    """
    h = channel_vector(terminal, layout, rf)
    theta = feed_phases(layout, waveguides, rf)
    return complex(np.sum(h * np.exp(-1j * theta)))


def effective_gains(terminals, layout: AntennaLayout, waveguides: Sequence[Waveguide], rf: RfConstants) -> np.ndarray:
    """Effective gain for each row of `terminals`."""
    theta = feed_phases(layout, waveguides, rf)
    steering = np.exp(-1j * theta)
    points = np.asarray(terminals, dtype=np.float64).reshape(-1, 3)
    return np.array([np.sum(channel_vector(t, layout, rf) * steering) for t in points], dtype=np.complex128)
