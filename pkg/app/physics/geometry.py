"""Waveguide deployments, antenna placement and the minimum-spacing projection."""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.errors import InfeasibleGeometryError, UndefinedDistanceError
from app.models.data_models import AntennaLayout, Waveguide

logger = logging.getLogger(__name__)

DEPLOYMENT_KINDS = ("1D", "2D", "3D")

# Gaps this close to delta count as satisfied; keeps the projection idempotent.
SPACING_TOLERANCE = 1e-13

_UNIT_X = np.array([1.0, 0.0, 0.0])
_UNIT_Y = np.array([0.0, 1.0, 0.0])
_UNIT_Z = np.array([0.0, 0.0, 1.0])


def normalize_kind(kind: str) -> str:
    """Accept '3d', '3D' etc. and return the canonical deployment name."""
    canonical = str(kind).upper()
    if canonical not in DEPLOYMENT_KINDS:
        raise ValueError(f"Unknown deployment kind {kind!r}; expected one of {DEPLOYMENT_KINDS}")
    return canonical


def split_counts(n_antennas: int, parts: int) -> List[int]:
    """Split antennas over waveguides as evenly as possible, extras to the first ones."""
    base, extra = divmod(n_antennas, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _initial_coords(count: int, length: float, delta: float, shared_origin: bool) -> np.ndarray:
    if count == 0:
        return np.zeros(0)
    if shared_origin:
        # the origin belongs to every waveguide of the bundle, so it stays empty
        gap = max(length / (count + 1), delta)
        return gap * np.arange(1, count + 1)
    gap = length / count
    return gap * np.arange(count)


def make_deployment(kind: str, n_antennas: int, area: float, height: float,
                    delta: float, length: Optional[float] = None,
                    planar_y: float = 0.0) -> Tuple[List[Waveguide], AntennaLayout]:
    """
    Build the waveguides of a deployment geometry and spread antennas along them.

    Args:
        kind: "1D", "2D" or "3D"
        n_antennas: Total number of pinching antennas
        area: Side of the square service area (m)
        height: Elevation d of the waveguides above the ground plane (m)
        delta: Minimum same-waveguide spacing (m)
        length: Waveguide length (m); defaults to the area side
        planar_y: y coordinate of the three 2D vertical lines (m)

    Returns:
        The waveguides and the initial antenna layout
    """
    kind = normalize_kind(kind)
    if n_antennas < 1:
        raise ValueError("n_antennas must be at least 1")
    length = float(area if length is None else length)
    if not 0.0 <= planar_y <= area:
        raise ValueError(f"planar_y must lie in [0, {area}], got {planar_y}")

    if kind == "1D":
        origins = [np.array([area / 2.0, 0.0, height])]
        waveguides = [Waveguide(origin=o, direction=_UNIT_Z, length=length, feed_point=o, axis="vertical")
                      for o in origins]
        shared_origin = False
    elif kind == "2D":
        origins = [np.array([x, planar_y, height]) for x in (0.0, area / 2.0, area)]
        waveguides = [Waveguide(origin=o, direction=_UNIT_Z, length=length, feed_point=o, axis="vertical")
                      for o in origins]
        shared_origin = False
    else:
        origin = np.array([0.0, 0.0, height])
        waveguides = [
            Waveguide(origin=origin, direction=direction, length=length, feed_point=origin, axis=axis)
            for axis, direction in (("x", _UNIT_X), ("y", _UNIT_Y), ("z", _UNIT_Z))
        ]
        shared_origin = True

    counts = split_counts(n_antennas, len(waveguides))
    ids: List[int] = []
    coords: List[float] = []
    for index, (waveguide, count) in enumerate(zip(waveguides, counts)):
        if count * delta > waveguide.length:
            raise InfeasibleGeometryError(
                f"{count} antennas need {count * delta:.6g} m but waveguide {index} "
                f"is {waveguide.length:.6g} m long"
            )
        ids.extend([index] * count)
        coords.extend(_initial_coords(count, waveguide.length, delta, shared_origin).tolist())

    layout = AntennaLayout.from_coords(waveguides, ids, coords)
    logger.debug("Built %s deployment with %d antennas on %d waveguides", kind, n_antennas, len(waveguides))
    return waveguides, layout


def project_spacing(scalars: Sequence[float], delta: float, length: float) -> List[float]:
    """
    Project coordinates on one waveguide onto the set with pairwise gap >= delta.

    Values are sorted, pushed apart by a left-to-right sweep, and shifted back
    from the right edge if the last one leaves [0, length]. Each output stays
    in the slot of the input it came from, so the relative order is kept.

    Args:
        scalars: Antenna coordinates along the waveguide (m)
        delta: Minimum spacing (m)
        length: Waveguide length (m)

    Returns:
        The projected coordinates in input order, not sorted order: entry i is
        the new position of input i, so antenna identities survive the
        projection. Sorting the result gives the sorted-order projection.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    values = np.asarray(scalars, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise ValueError("coordinates must be finite")
    count = len(values)
    if count == 0:
        return []
    if (count - 1) * delta > length:
        raise InfeasibleGeometryError(
            f"{count} antennas need {(count - 1) * delta:.6g} m of waveguide, only {length:.6g} m available"
        )

    order = np.argsort(values, kind="stable")
    s = np.clip(values[order], 0.0, length)
    for i in range(1, count):
        if s[i] - s[i - 1] < delta - SPACING_TOLERANCE:
            s[i] = s[i - 1] + delta
    if s[-1] > length:
        s[-1] = length
        for i in range(count - 2, -1, -1):
            if s[i + 1] - s[i] < delta - SPACING_TOLERANCE:
                s[i] = s[i + 1] - delta
        s = np.clip(s, 0.0, length)

    projected = np.empty(count)
    projected[order] = s
    return projected.tolist()


def spacing_shortfall(scalars: Sequence[float], delta: float) -> float:
    """Sum over adjacent sorted pairs of max(0, delta - gap), in metres."""
    s = np.sort(np.asarray(scalars, dtype=np.float64))
    if len(s) < 2:
        return 0.0
    return float(np.sum(np.maximum(0.0, delta - np.diff(s))))


def min_same_waveguide_gap(layout: AntennaLayout) -> float:
    """Smallest gap between antennas that share a waveguide (inf if none do)."""
    smallest = float("inf")
    for index in np.unique(layout.waveguide_ids):
        s = np.sort(layout.coords[layout.on_waveguide(index)])
        if len(s) > 1:
            smallest = min(smallest, float(np.min(np.diff(s))))
    return smallest


def satisfies_spacing(layout: AntennaLayout, delta: float, tolerance: float = 1e-12) -> bool:
    return min_same_waveguide_gap(layout) >= delta - tolerance


def min_pairwise_distance(layout: AntennaLayout) -> float:
    """
    Minimum Euclidean distance over all antenna pairs, across waveguides too.

    Args:
        layout: Antenna layout with at least two antennas

    Returns:
        float: Distance in metres
    """
    if layout.size < 2:
        raise UndefinedDistanceError("need at least two antennas for a pairwise distance")
    diff = layout.positions[:, None, :] - layout.positions[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    upper = np.triu_indices(layout.size, k=1)
    return float(np.min(dist[upper]))
