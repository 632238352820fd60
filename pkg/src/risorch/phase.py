"""Phase wrapping and uniform phase quantization."""
import math

import numpy as np

TWO_PI = 2 * math.pi


def wrap_phase(phi):
    """Wrap radians into ``[-pi, pi)``. Works on scalars and arrays."""
    out = np.mod(np.asarray(phi, dtype=float) + math.pi, TWO_PI) - math.pi
    # mod can round up to exactly 2*pi for tiny negative inputs
    out = np.where(out >= math.pi, out - TWO_PI, out)
    return float(out) if np.ndim(out) == 0 else out


def quantize_phase(phi, n_levels: int):
    """Index of the nearest level ``2*pi*s/n_levels`` on the circle.

    Exact midpoints go to the lower index.
    """
    if n_levels < 2:
        raise ValueError(f"need at least 2 phase levels, got {n_levels}")
    phi = np.asarray(phi, dtype=float)
    levels = TWO_PI * np.arange(n_levels) / n_levels
    dist = np.abs(wrap_phase(phi[..., None] - levels))
    s = np.argmin(dist, axis=-1)
    return int(s) if s.ndim == 0 else s


def level_phase(states, n_levels: int):
    """Wrapped phase of quantization state indices."""
    return wrap_phase(TWO_PI * np.asarray(states, dtype=float) / n_levels)
