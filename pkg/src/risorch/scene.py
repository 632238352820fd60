"""Room, transmitter and RIS panel layout.

Coordinates are meters in a cubic room ``[0, L]^3``. Walls are named by the
axis they are normal to and the side they sit on: ``x0`` is the plane
``x = 0``, ``xL`` the plane ``x = L``, and so on. ``z0``/``zL`` are the floor
and ceiling.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError

C0 = 299_792_458.0

# wall id -> (normal axis, in-plane (u, v) axes, side)
WALLS: Dict[str, Tuple[int, Tuple[int, int], int]] = {
    "x0": (0, (1, 2), 0),
    "xL": (0, (1, 2), 1),
    "y0": (1, (0, 2), 0),
    "yL": (1, (0, 2), 1),
    "z0": (2, (0, 1), 0),
    "zL": (2, (0, 1), 1),
}


def wall_normal(wall: str) -> np.ndarray:
    """Unit normal of ``wall`` pointing into the room."""
    axis, _, side = WALLS[wall]
    n = np.zeros(3)
    n[axis] = 1.0 if side == 0 else -1.0
    return n


@dataclass(frozen=True)
class Panel:
    """A rectangular ``rows x cols`` RIS grid mounted on one wall.

    ``center`` is the panel center in the wall's in-plane (u, v) coordinates;
    when omitted the builder centers the panel (or tiles several panels that
    share a wall).
    """

    wall: str
    rows: int
    cols: int
    center: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class SceneConfig:
    room_side: float = 1.5
    frequency: float = 6e9
    tx_position: Tuple[float, float, float] = (0.3, 0.375, 0.75)
    tx_direction: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    tx_beam_exponent: float = 0.0
    element_angle_exponent: float = 1.0
    coupling_strength: float = 0.15
    # wall id -> reflectivity; None means 0.6 on every wall that carries no panel
    wall_reflectivity: Optional[Dict[str, float]] = None
    # None means a quarter wavelength
    element_spacing: Optional[float] = None
    panels: Tuple[Panel, ...] = field(
        default_factory=lambda: tuple(Panel(w, 20, 20) for w in ("x0", "xL", "y0", "yL"))
    )
    coupling_neighborhood: int = 4

    def __post_init__(self):
        object.__setattr__(self, "tx_position", tuple(float(v) for v in self.tx_position))
        object.__setattr__(self, "tx_direction", tuple(float(v) for v in self.tx_direction))
        object.__setattr__(self, "panels", tuple(self.panels))
        L = self.room_side
        if not L > 0:
            raise ConfigurationError(f"room_side must be positive, got {L}")
        if not self.frequency > 0:
            raise ConfigurationError(f"frequency must be positive, got {self.frequency}")
        if len(self.tx_position) != 3 or not all(0.0 < c < L for c in self.tx_position):
            raise ConfigurationError(f"tx_position {self.tx_position} is not strictly inside the room")
        if len(self.tx_direction) != 3 or abs(np.linalg.norm(self.tx_direction) - 1.0) > 1e-12:
            raise ConfigurationError("tx_direction must be a unit 3-vector")
        if self.tx_beam_exponent < 0 or self.element_angle_exponent < 0:
            raise ConfigurationError("angular exponents must be >= 0")
        if not 0.0 <= self.coupling_strength <= 1.0:
            raise ConfigurationError(f"coupling_strength must lie in [0, 1], got {self.coupling_strength}")
        if self.coupling_neighborhood not in (4, 8):
            raise ConfigurationError("coupling_neighborhood must be 4 or 8")
        if not self.panels:
            raise ConfigurationError("at least one panel is required")
        for p in self.panels:
            if p.wall not in WALLS:
                raise ConfigurationError(f"unknown wall id {p.wall!r}")
            if p.rows < 1 or p.cols < 1:
                raise ConfigurationError(f"panel on {p.wall} must have at least one row and column")
        if self.wall_reflectivity is not None:
            for w, beta in self.wall_reflectivity.items():
                if w not in WALLS:
                    raise ConfigurationError(f"unknown wall id {w!r} in wall_reflectivity")
                if beta < 0:
                    raise ConfigurationError(f"wall reflectivity must be >= 0, got {beta} on {w}")
        if self.element_spacing is not None and not self.element_spacing > 0:
            raise ConfigurationError("element_spacing must be positive")
        if self.spacing > self.wavelength / 4 * (1 + 1e-12):
            warnings.warn(
                f"element spacing {self.spacing:.5g} m exceeds a quarter wavelength "
                f"({self.wavelength / 4:.5g} m)",
                stacklevel=2,
            )

    @property
    def wavelength(self) -> float:
        return C0 / self.frequency

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def spacing(self) -> float:
        return self.wavelength / 4 if self.element_spacing is None else self.element_spacing

    @property
    def reflectivities(self) -> Dict[str, float]:
        """Reflectivity of every wall, resolved against the default."""
        if self.wall_reflectivity is not None:
            out = {w: 0.0 for w in WALLS}
            out.update(self.wall_reflectivity)
            return out
        covered = {p.wall for p in self.panels}
        return {w: (0.0 if w in covered else 0.6) for w in WALLS}

    def to_dict(self) -> dict:
        """Plain-data echo, used for manifests and fingerprints."""
        return {
            "room_side": self.room_side,
            "frequency": self.frequency,
            "tx_position": list(self.tx_position),
            "tx_direction": list(self.tx_direction),
            "tx_beam_exponent": self.tx_beam_exponent,
            "element_angle_exponent": self.element_angle_exponent,
            "coupling_strength": self.coupling_strength,
            "wall_reflectivity": self.reflectivities,
            "element_spacing": self.spacing,
            "panels": [
                {"wall": p.wall, "rows": p.rows, "cols": p.cols,
                 "center": None if p.center is None else list(p.center)}
                for p in self.panels
            ],
            "coupling_neighborhood": self.coupling_neighborhood,
        }


@dataclass(frozen=True, eq=False)
class RisGeometry:
    """Element layout produced by :func:`build_geometry`.

    Element order is panel-major, then row-major inside each panel.
    ``normals`` point into the room. ``coupling`` is the sparse neighbor
    kernel used by the incident-field solver.
    """

    positions: np.ndarray          # (N, 3)
    normals: np.ndarray            # (N, 3)
    panel_of: np.ndarray           # (N,) panel index
    grid_index: np.ndarray         # (N, 2) (row, col) within the panel
    panel_shapes: Tuple[Tuple[int, int], ...]
    panel_offsets: Tuple[int, ...]
    neighbor_ptr: np.ndarray       # CSR pointers into neighbor_idx
    neighbor_idx: np.ndarray
    image_sources: Tuple[Tuple[str, float, np.ndarray], ...]   # (wall, beta, position)
    tx_position: np.ndarray
    wavenumber: float
    spacing: float
    room_side: float
    coupling: sp.csr_matrix

    @property
    def n_elements(self) -> int:
        return self.positions.shape[0]

    def neighbors(self, n: int) -> np.ndarray:
        return self.neighbor_idx[self.neighbor_ptr[n]:self.neighbor_ptr[n + 1]]


def _panel_centers(scene: SceneConfig) -> List[Tuple[float, float]]:
    L, d = scene.room_side, scene.spacing
    centers: List[Optional[Tuple[float, float]]] = [p.center for p in scene.panels]
    by_wall: Dict[str, List[int]] = {}
    for i, p in enumerate(scene.panels):
        if p.center is None:
            by_wall.setdefault(p.wall, []).append(i)
    for wall, idx in by_wall.items():
        m = len(idx)
        ncol = math.ceil(math.sqrt(m))
        nrow = math.ceil(m / ncol)
        pitch_u = max(scene.panels[i].cols for i in idx) * d
        pitch_v = max(scene.panels[i].rows for i in idx) * d
        for slot, i in enumerate(idx):
            r, c = divmod(slot, ncol)
            u = L / 2 + (c - (ncol - 1) / 2) * pitch_u
            v = L / 2 + (r - (nrow - 1) / 2) * pitch_v
            centers[i] = (u, v)
    return centers  # type: ignore[return-value]


def build_geometry(scene: SceneConfig) -> RisGeometry:
    """Lay out every configured panel, its neighbor lists and the image sources.

    Raises
    ------
    ConfigurationError
        If a panel is wider or taller than the wall, leaves the wall, or
        overlaps another panel on the same wall.
    """
    L, d = scene.room_side, scene.spacing
    centers = _panel_centers(scene)

    positions, normals, panel_of, grid_index = [], [], [], []
    offsets, shapes = [], []
    rects: Dict[str, List[Tuple[float, float, float, float]]] = {}
    offset = 0
    for pi, (panel, (cu, cv)) in enumerate(zip(scene.panels, centers)):
        if panel.rows * d > L or panel.cols * d > L:
            raise ConfigurationError(
                f"panel {pi} ({panel.rows}x{panel.cols}) does not fit on wall {panel.wall}: "
                f"extent {max(panel.rows, panel.cols) * d:.4g} m > {L} m"
            )
        axis, (ua, va), side = WALLS[panel.wall]
        rows, cols = np.meshgrid(np.arange(panel.rows), np.arange(panel.cols), indexing="ij")
        u = cu + (cols.ravel() - (panel.cols - 1) / 2) * d
        v = cv + (rows.ravel() - (panel.rows - 1) / 2) * d
        if u.min() <= 0 or u.max() >= L or v.min() <= 0 or v.max() >= L:
            raise ConfigurationError(f"panel {pi} on wall {panel.wall} extends past the wall edge")
        rect = (u.min() - d / 2, u.max() + d / 2, v.min() - d / 2, v.max() + d / 2)
        for other in rects.get(panel.wall, []):
            if (rect[0] < other[1] - 1e-12 and other[0] < rect[1] - 1e-12
                    and rect[2] < other[3] - 1e-12 and other[2] < rect[3] - 1e-12):
                raise ConfigurationError(f"panel {pi} overlaps another panel on wall {panel.wall}")
        rects.setdefault(panel.wall, []).append(rect)

        pos = np.empty((u.size, 3))
        pos[:, axis] = 0.0 if side == 0 else L
        pos[:, ua] = u
        pos[:, va] = v
        positions.append(pos)
        normals.append(np.tile(wall_normal(panel.wall), (u.size, 1)))
        panel_of.append(np.full(u.size, pi))
        grid_index.append(np.column_stack([rows.ravel(), cols.ravel()]))
        offsets.append(offset)
        shapes.append((panel.rows, panel.cols))
        offset += u.size

    positions = np.vstack(positions)
    ptr, idx = _neighbor_lists(shapes, offsets, scene.coupling_neighborhood)

    reflect = scene.reflectivities
    s = np.asarray(scene.tx_position, dtype=float)
    images = []
    for wall, beta in reflect.items():
        if beta > 0:
            axis, _, side = WALLS[wall]
            img = s.copy()
            img[axis] = -s[axis] if side == 0 else 2 * L - s[axis]
            images.append((wall, float(beta), img))

    k = scene.wavenumber
    return RisGeometry(
        positions=positions,
        normals=np.vstack(normals),
        panel_of=np.concatenate(panel_of),
        grid_index=np.vstack(grid_index),
        panel_shapes=tuple(shapes),
        panel_offsets=tuple(offsets),
        neighbor_ptr=ptr,
        neighbor_idx=idx,
        image_sources=tuple(images),
        tx_position=s,
        wavenumber=k,
        spacing=d,
        room_side=L,
        coupling=_coupling_kernel(positions, ptr, idx, k, d),
    )


def _neighbor_lists(shapes: Sequence[Tuple[int, int]], offsets: Sequence[int], hood: int):
    steps = [(-1, 0), (0, -1), (0, 1), (1, 0)]
    if hood == 8:
        steps = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    ptr = [0]
    idx: List[int] = []
    for (R, C), off in zip(shapes, offsets):
        for r in range(R):
            for c in range(C):
                for dr, dc in steps:
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < R and 0 <= cc < C:
                        idx.append(off + rr * C + cc)
                ptr.append(len(idx))
    return np.asarray(ptr, dtype=np.int64), np.asarray(idx, dtype=np.int64)


def _coupling_kernel(positions, ptr, idx, k, d) -> sp.csr_matrix:
    # entry (n, m) = exp(jk|p_n - p_m|) * d / |p_n - p_m|: unit magnitude for
    # nearest neighbors, so the coupling strength is dimensionless
    n = positions.shape[0]
    rows = np.repeat(np.arange(n), np.diff(ptr))
    dist = np.linalg.norm(positions[rows] - positions[idx], axis=1)
    vals = np.exp(1j * k * dist) * (d / dist)
    return sp.csr_matrix((vals, (rows, idx)), shape=(n, n))
