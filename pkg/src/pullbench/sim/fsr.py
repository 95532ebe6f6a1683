"""Force-sensitive-resistor transfer chain: contact force -> divider counts.

Each channel sees the sum of contact normal forces weighted by a Gaussian
kernel over distance (the silicone layer spreads load).  Channel force maps
to device resistance R = r0 / F, read through a 10 kOhm pull-down divider
into a 12-bit converter.
"""

from __future__ import annotations

import math
from typing import Sequence

from .params import SimParams


def channel_forces(
    fsr_positions: Sequence[tuple[float, float, float]],
    contact_points: Sequence[tuple[float, float, float]],
    normal_forces: Sequence[float],
    spread_sigma_mm: float,
) -> list[float]:
    """Spread each contact's normal force onto the sensor channels.

    The kernel is unnormalized: a contact dead-center on a channel delivers
    its full normal force to that channel, with neighbors picking up the
    silicone-spread tails.
    """
    inv_two_sigma_sq = 1.0 / (2.0 * spread_sigma_mm * spread_sigma_mm)
    forces = []
    for px, py, pz in fsr_positions:
        total = 0.0
        for (cx, cy, cz), load in zip(contact_points, normal_forces):
            d_sq = (px - cx) ** 2 + (py - cy) ** 2 + (pz - cz) ** 2
            total += load * math.exp(-d_sq * inv_two_sigma_sq)
        forces.append(total)
    return forces


def force_to_resistance(force_n: float, params: SimParams) -> float:
    """Device resistance in ohms; returns inf (open circuit) below the force floor."""
    if force_n < params.fsr_min_force_n:
        return math.inf
    return params.fsr_r0_ohm_n / force_n


def resistance_to_counts(resistance_ohm: float, params: SimParams) -> int:
    """Ideal pull-down divider reading, before noise."""
    if math.isinf(resistance_ohm):
        return 0
    pulldown = params.divider_pulldown_ohm
    return round(params.adc_full_scale * pulldown / (pulldown + resistance_ohm))


def force_to_counts(force_n: float, params: SimParams) -> int:
    return resistance_to_counts(force_to_resistance(force_n, params), params)
