"""Incident field, reradiated field and SNR for a RIS-equipped room.

Field amplitudes are in normalized units: a unit point source seen at 1 m has
magnitude 1. Per-element field vectors are plain complex ``ndarray`` objects
of length ``geometry.n_elements``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, EvaluationError, GeometryError, SolverDivergenceError
from .phase import wrap_phase
from .scene import RisGeometry, SceneConfig

log = logging.getLogger(__name__)

SNR_FLOOR_DB = -300.0
JACOBI_TOL = 1e-9
JACOBI_MAX_ITER = 100
DIVERGENCE_RESIDUAL = 1e-6


@dataclass(frozen=True, eq=False)
class RisState:
    """Per-element reflection coefficients ``rho * exp(j*phi)``, rho in {0, 1}."""

    amplitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=float)
        phase = wrap_phase(np.asarray(self.phase, dtype=float))
        if amp.shape != phase.shape or amp.ndim != 1:
            raise ValueError("amplitude and phase must be 1-D arrays of equal length")
        if not np.all((amp == 0.0) | (amp == 1.0)):
            raise ValueError("amplitudes must be exactly 0 or 1")
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "phase", np.atleast_1d(phase))

    @classmethod
    def from_phases(cls, phases, on=None) -> "RisState":
        phases = np.asarray(phases, dtype=float)
        amp = np.ones_like(phases) if on is None else np.asarray(on, dtype=float)
        return cls(amp, phases)

    @classmethod
    def dark(cls, n: int) -> "RisState":
        return cls(np.zeros(n), np.zeros(n))

    @property
    def gamma(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phase)

    def __len__(self):
        return self.amplitude.size


@dataclass(frozen=True)
class IncidentField:
    """Solution of the coupled incident-field system."""

    field: np.ndarray
    residual: float
    iterations: int
    method: str


def _cosine(direction: np.ndarray, normals: np.ndarray) -> np.ndarray:
    # normals point into the room, so a wave arriving from inside has
    # direction . outward_normal = -direction . normal > 0
    return -np.einsum("ij,ij->i", direction, normals)


def direct_field(scene: SceneConfig, geometry: RisGeometry) -> np.ndarray:
    """Spherical wave from the transmitter with beam and element-cosine weighting."""
    diff = geometry.positions - np.asarray(scene.tx_position)
    r = np.linalg.norm(diff, axis=1)
    if np.any(r == 0):
        raise GeometryError(f"transmitter coincides with element {int(np.argmin(r))}")
    dhat = diff / r[:, None]
    beam = np.abs(dhat @ np.asarray(scene.tx_direction)) ** scene.tx_beam_exponent
    cos = _cosine(dhat, geometry.normals)
    element = np.where(cos < 0, 0.0, np.maximum(cos, 0.0) ** scene.element_angle_exponent)
    return np.exp(1j * scene.wavenumber * r) / r * beam * element


def secondary_field(scene: SceneConfig, geometry: RisGeometry) -> np.ndarray:
    """Sum of image-source contributions from the reflective walls."""
    k, p = scene.wavenumber, scene.element_angle_exponent
    out = np.zeros(geometry.n_elements, dtype=complex)
    for _, beta, img in geometry.image_sources:
        diff = geometry.positions - img
        r = np.linalg.norm(diff, axis=1)
        term = beta * np.exp(1j * k * r) / r
        if p > 0:
            cos = _cosine(diff / r[:, None], geometry.normals)
            term = term * np.maximum(cos, 0.0) ** p
        out += term
    if not np.all(np.isfinite(out)):
        raise GeometryError("non-finite secondary field")
    return out


def coupling_residual(scene, geometry, state, e_inc, source=None) -> float:
    """Max-norm of ``E - (E_dir + E_sec + coupling(E))``."""
    if source is None:
        source = direct_field(scene, geometry) + secondary_field(scene, geometry)
    rhs = source + scene.coupling_strength * (geometry.coupling @ (state.gamma * e_inc))
    return float(np.max(np.abs(e_inc - rhs), initial=0.0))


def solve_incident_field(scene: SceneConfig, geometry: RisGeometry, state: RisState,
                         fallback: bool = True, source: Optional[np.ndarray] = None) -> IncidentField:
    """Solve the coupled incident-field system for a given surface state.

    Jacobi iteration starting from the uncoupled field, stopped when the
    largest update falls below ``1e-9`` of the largest field magnitude or after
    100 sweeps. If the sweeps end with a residual above ``1e-6`` (the iteration
    is not a contraction for strong coupling) the system is solved directly
    when ``fallback`` is set, otherwise :class:`SolverDivergenceError` is raised.

    ``source`` may carry a precomputed ``direct_field + secondary_field``.
    """
    if len(state) != geometry.n_elements:
        raise ValueError(f"state has {len(state)} elements, geometry has {geometry.n_elements}")
    b = direct_field(scene, geometry) + secondary_field(scene, geometry) if source is None else source
    alpha = scene.coupling_strength
    gamma = state.gamma
    G = geometry.coupling

    e = b
    iterations = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for iterations in range(1, JACOBI_MAX_ITER + 1):
            e_new = b + alpha * (G @ (gamma * e))
            update = np.max(np.abs(e_new - e), initial=0.0)
            scale = np.max(np.abs(e_new), initial=0.0)
            e = e_new
            if not np.isfinite(update) or update > 1e12 * max(np.max(np.abs(b), initial=0.0), 1e-300):
                break
            if update <= JACOBI_TOL * scale:
                break
        residual = coupling_residual(scene, geometry, state, e, b) if np.all(np.isfinite(e)) else np.inf
    if residual <= DIVERGENCE_RESIDUAL:
        return IncidentField(e, residual, iterations, "jacobi")

    if not fallback:
        raise SolverDivergenceError(
            f"Jacobi iteration stopped after {iterations} sweeps with residual {residual:.3g}",
            residual=residual, iterations=iterations)
    log.debug("Jacobi residual %.3g after %d sweeps; solving directly", residual, iterations)
    A = sp.identity(geometry.n_elements, dtype=complex, format="csc") - alpha * (G @ sp.diags(gamma)).tocsc()
    e = spla.spsolve(A, b)
    residual = coupling_residual(scene, geometry, state, e, b) if np.all(np.isfinite(e)) else np.inf
    if residual > DIVERGENCE_RESIDUAL:
        raise SolverDivergenceError(
            f"coupled system unsolvable: residual {residual:.3g} after direct solve",
            residual=residual, iterations=iterations)
    return IncidentField(e, residual, iterations, "direct")


def propagation_vector(geometry: RisGeometry, r) -> np.ndarray:
    """Free-space Green's function ``exp(jk|r - p_n|)/|r - p_n|`` for every element."""
    dist = np.linalg.norm(geometry.positions - np.asarray(r, dtype=float), axis=1)
    if np.any(dist < 1e-12):
        raise EvaluationError(f"observation point {tuple(r)} coincides with element {int(np.argmin(dist))}")
    return np.exp(1j * geometry.wavenumber * dist) / dist


def total_field(geometry: RisGeometry, state: RisState, e_inc: np.ndarray, r) -> complex:
    """Coherent sum of the reradiated element contributions at ``r``."""
    h = propagation_vector(geometry, r)
    return complex(np.sum(state.gamma * e_inc * h))


def snr_db(e):
    """SNR in dB under unit noise power, floored at -300 dB."""
    power = np.maximum(np.abs(np.asarray(e)) ** 2, 1e-30)
    out = 10 * np.log10(power)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned observation lattice, the outer product of three coordinate axes.

    A plane is a lattice with one axis of length 1.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    @classmethod
    def plane(cls, axis: str, coord: float, u_range, v_range, nu: int, nv: int) -> "GridSpec":
        u = np.linspace(u_range[0], u_range[1], nu)
        v = np.linspace(v_range[0], v_range[1], nv)
        c = np.array([float(coord)])
        if axis == "x":
            return cls(c, u, v)
        if axis == "y":
            return cls(u, c, v)
        if axis == "z":
            return cls(u, v, c)
        raise ConfigurationError(f"plane axis must be x, y or z, got {axis!r}")

    @property
    def shape(self):
        return (len(self.x), len(self.y), len(self.z))

    def points(self) -> np.ndarray:
        X, Y, Z = np.meshgrid(self.x, self.y, self.z, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])


@dataclass(frozen=True)
class SnrMap:
    grid: GridSpec
    values: np.ndarray      # shape grid.shape, dB
    flagged: np.ndarray     # shape grid.shape, True where a point sits on an element

    def write_csv(self, path) -> None:
        pts = self.grid.points()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "z", "snr_db"])
            for (x, y, z), val in zip(pts, self.values.ravel()):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(z)), repr(float(val))])


def snr_map(scene: SceneConfig, geometry: RisGeometry, state: RisState, grid: GridSpec,
            e_inc: Optional[np.ndarray] = None, chunk: int = 256) -> SnrMap:
    """SNR raster over ``grid``; points on top of an element are floored and flagged."""
    pts = grid.points()
    L = scene.room_side
    if np.any(pts < 0) or np.any(pts > L):
        raise ConfigurationError("observation grid leaves the room")
    if e_inc is None:
        e_inc = solve_incident_field(scene, geometry, state).field
    weights = state.gamma * e_inc
    k = geometry.wavenumber
    values = np.empty(len(pts))
    flagged = np.zeros(len(pts), dtype=bool)
    for start in range(0, len(pts), chunk):
        block = pts[start:start + chunk]
        dist = np.linalg.norm(block[:, None, :] - geometry.positions[None, :, :], axis=2)
        hit = np.any(dist < 1e-12, axis=1)
        dist[hit] = 1.0
        e = np.sum(weights[None, :] * np.exp(1j * k * dist) / dist, axis=1)
        values[start:start + chunk] = np.where(hit, SNR_FLOOR_DB, snr_db(e))
        flagged[start:start + chunk] = hit
    return SnrMap(grid, values.reshape(grid.shape), flagged.reshape(grid.shape))
