"""Offline codebook compilation and on-disk persistence.

Each entry holds, for one candidate user location, the focusing phase profile,
the per-element influence profile and the single-user SNR reached with that
profile.

On disk a codebook is a directory with two files:

``manifest``
    JSON text: format version, scene fingerprint, counts, compiler options
    and a full echo of the scene.
``payload.bin``
    For every entry, in order: location (3 doubles), phases (N doubles),
    influence (N doubles), optimal SNR (1 double). All values are IEEE-754
    float64, little-endian, elements in :func:`build_geometry` order.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import ndimage

from .em import RisState, direct_field, secondary_field, snr_db, solve_incident_field, total_field
from .errors import CodebookFormatError, ConfigurationError, FingerprintMismatchError, RisError
from .phase import wrap_phase
from .scene import RisGeometry, SceneConfig, build_geometry

log = logging.getLogger(__name__)

COMPILER_VERSION = "conjugate-2round/1"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest"
PAYLOAD_NAME = "payload.bin"


class CompilationError(RisError):
    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True, eq=False)
class CodebookEntry:
    location: np.ndarray
    phases: np.ndarray
    influence: np.ndarray
    optimal_snr: float

    def same_as(self, other: "CodebookEntry") -> bool:
        """Bit-exact equality of every field."""
        return (
            self.location.tobytes() == other.location.tobytes()
            and self.phases.tobytes() == other.phases.tobytes()
            and self.influence.tobytes() == other.influence.tobytes()
            and np.float64(self.optimal_snr).tobytes() == np.float64(other.optimal_snr).tobytes()
        )


@dataclass(eq=False)
class Codebook:
    fingerprint: str
    entries: List[CodebookEntry]
    version: str = COMPILER_VERSION
    options: dict = field(default_factory=dict)
    scene: dict = field(default_factory=dict)

    @property
    def n_elements(self) -> int:
        return self.entries[0].phases.size if self.entries else 0

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i) -> CodebookEntry:
        return self.entries[i]

    def phases(self) -> np.ndarray:
        return np.stack([e.phases for e in self.entries])

    def influences(self) -> np.ndarray:
        return np.stack([e.influence for e in self.entries])

    def locations(self) -> np.ndarray:
        return np.stack([e.location for e in self.entries])

    def optimal_snrs(self) -> np.ndarray:
        return np.array([e.optimal_snr for e in self.entries])


def scene_fingerprint(scene: SceneConfig, geometry: Optional[RisGeometry] = None) -> str:
    """SHA-256 over the scene echo and the element ordering."""
    geometry = geometry or build_geometry(scene)
    blob = {
        "scene": scene.to_dict(),
        "n_elements": geometry.n_elements,
        "panel_shapes": [list(s) for s in geometry.panel_shapes],
        "panel_offsets": list(geometry.panel_offsets),
    }
    text = json.dumps(blob, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def smooth_influence(raw, geometry: RisGeometry, size: int = 3) -> np.ndarray:
    """Per-panel box filter followed by division by the global maximum.

    Border cells average over the cells that exist. ``size=1`` disables
    smoothing. An all-zero input stays all zero.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (geometry.n_elements,):
        raise ValueError("raw influence must have one value per element")
    if size < 1 or size % 2 == 0:
        raise ValueError(f"smoothing size must be a positive odd integer, got {size}")
    out = np.empty_like(raw)
    for (R, C), off in zip(geometry.panel_shapes, geometry.panel_offsets):
        block = raw[off:off + R * C].reshape(R, C)
        if size == 1:
            out[off:off + R * C] = block.ravel()
            continue
        total = ndimage.correlate(block, np.ones((size, size)), mode="constant", cval=0.0)
        count = ndimage.correlate(np.ones_like(block), np.ones((size, size)), mode="constant", cval=0.0)
        out[off:off + R * C] = (total / count).ravel()
    peak = out.max(initial=0.0)
    if peak <= 0:
        return np.zeros_like(out)
    return out / peak


def _check_location(scene: SceneConfig, location) -> np.ndarray:
    r = np.asarray(location, dtype=float)
    if r.shape != (3,) or not np.all((r > 0) & (r < scene.room_side)):
        raise ConfigurationError(f"location {tuple(r)} is not strictly inside the room")
    return r


def compile_entry(scene: SceneConfig, geometry: RisGeometry, location, rounds: int = 2,
                  smoothing: int = 3, source: Optional[np.ndarray] = None) -> CodebookEntry:
    """Focus the surface on ``location`` by phase conjugation.

    Coupling makes the incident field depend on the surface state, so the
    conjugation is repeated ``rounds`` times, each against the field solved
    under the previous phases. The influence profile and optimal SNR are
    taken from a final solve under the returned phases.
    """
    r = _check_location(scene, location)
    if source is None:
        source = direct_field(scene, geometry) + secondary_field(scene, geometry)
    dist = np.linalg.norm(geometry.positions - r, axis=1)
    path_phase = scene.wavenumber * dist

    state = RisState.from_phases(np.zeros(geometry.n_elements))
    for _ in range(rounds):
        e_inc = solve_incident_field(scene, geometry, state, source=source).field
        state = RisState.from_phases(wrap_phase(-np.angle(e_inc) - path_phase))
    e_inc = solve_incident_field(scene, geometry, state, source=source).field

    e_total = total_field(geometry, state, e_inc, r)
    influence = smooth_influence(np.abs(e_inc) / dist, geometry, smoothing)
    return CodebookEntry(r.copy(), state.phase.copy(), influence, snr_db(e_total))


# worker-process state for parallel compilation
_WORKER = {}


def _init_worker(scene, rounds, smoothing):
    geometry = build_geometry(scene)
    _WORKER.update(scene=scene, geometry=geometry, rounds=rounds, smoothing=smoothing,
                   source=direct_field(scene, geometry) + secondary_field(scene, geometry))


def _compile_one(args):
    i, loc = args
    w = _WORKER
    try:
        return compile_entry(w["scene"], w["geometry"], loc, w["rounds"], w["smoothing"], w["source"])
    except Exception as exc:  # re-raised with the index in the parent
        raise CompilationError(f"location {i} {tuple(loc)}: {exc}", i) from exc


def compile_codebook(scene: SceneConfig, locations: Sequence, rounds: int = 2, smoothing: int = 3,
                     workers: int = 1) -> Codebook:
    """Compile one entry per location, in input order."""
    locations = [np.asarray(loc, dtype=float) for loc in locations]
    if not locations:
        raise ConfigurationError("at least one location is required")
    geometry = build_geometry(scene)
    for i, loc in enumerate(locations):
        try:
            _check_location(scene, loc)
        except ConfigurationError as exc:
            raise CompilationError(f"location {i}: {exc}", i) from exc

    jobs = list(enumerate(locations))
    if workers <= 1:
        _init_worker(scene, rounds, smoothing)
        entries = [_compile_one(j) for j in jobs]
    else:
        chunk = max(1, len(jobs) // (4 * workers))
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(scene, rounds, smoothing)) as pool:
            entries = list(pool.map(_compile_one, jobs, chunksize=chunk))
    log.info("compiled %d entries over %d elements", len(entries), geometry.n_elements)
    return Codebook(
        fingerprint=scene_fingerprint(scene, geometry),
        entries=entries,
        options={"rounds": rounds, "smoothing": smoothing},
        scene=scene.to_dict(),
    )


def save_codebook(codebook: Codebook, path) -> None:
    os.makedirs(path, exist_ok=True)
    n = codebook.n_elements
    manifest = {
        "format_version": FORMAT_VERSION,
        "compiler_version": codebook.version,
        "fingerprint": codebook.fingerprint,
        "n_entries": len(codebook),
        "n_elements": n,
        "options": codebook.options,
        "scene": codebook.scene,
    }
    parts = []
    for e in codebook.entries:
        parts += [e.location, e.phases, e.influence, np.array([e.optimal_snr])]
    payload = np.concatenate(parts).astype("<f8").tobytes() if parts else b""
    with open(os.path.join(path, PAYLOAD_NAME), "wb") as fh:
        fh.write(payload)
    with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_codebook(path, scene: SceneConfig) -> Codebook:
    """Read a codebook, refusing it unless it was compiled for ``scene``."""
    try:
        with open(os.path.join(path, MANIFEST_NAME)) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CodebookFormatError(f"cannot read manifest in {path}: {exc}") from exc
    for key in ("fingerprint", "n_entries", "n_elements"):
        if key not in manifest:
            raise CodebookFormatError(f"manifest is missing {key!r}")
    expected = scene_fingerprint(scene)
    if manifest["fingerprint"] != expected:
        raise FingerprintMismatchError(
            f"codebook fingerprint {manifest['fingerprint'][:12]} does not match scene {expected[:12]}")

    n, count = int(manifest["n_elements"]), int(manifest["n_entries"])
    with open(os.path.join(path, PAYLOAD_NAME), "rb") as fh:
        payload = fh.read()
    stride = (3 + 2 * n + 1) * 8
    if len(payload) < stride * count:
        entry = len(payload) // stride
        raise CodebookFormatError(
            f"payload truncated at byte offset {len(payload)}: entry {entry} needs bytes "
            f"{entry * stride}..{(entry + 1) * stride}", offset=len(payload))
    if len(payload) > stride * count:
        raise CodebookFormatError(
            f"payload has {len(payload) - stride * count} trailing bytes after offset {stride * count}",
            offset=stride * count)
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    entries = []
    for i in range(count):
        row = values[i * (stride // 8):(i + 1) * (stride // 8)]
        entries.append(CodebookEntry(
            location=row[:3].copy(),
            phases=row[3:3 + n].copy(),
            influence=row[3 + n:3 + 2 * n].copy(),
            optimal_snr=float(row[-1]),
        ))
    return Codebook(
        fingerprint=manifest["fingerprint"],
        entries=entries,
        version=manifest.get("compiler_version", COMPILER_VERSION),
        options=manifest.get("options", {}),
        scene=manifest.get("scene", {}),
    )
