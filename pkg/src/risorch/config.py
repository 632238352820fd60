"""INI run configuration shared by every CLI command.

Sections: ``[scene]``, ``[codebook]``, ``[experiment]``, ``[snrmap]`` and
``[output]``. Keys are the field names of the corresponding dataclasses;
omitted keys take their defaults. See ``configs/desk.cfg`` for a full example.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigurationError
from .evaluation import DEFAULT_TIER_BASELINES, ExperimentConfig
from .orchestrator import DEFAULT_PAYMENT_FACTORS, AdmissionPolicy, AllocParams, EEParams
from .scene import Panel, SceneConfig

LOCATION_SOURCES = ("random", "grid", "list")


@dataclass
class SnrMapSpec:
    source: str = "entry"           # entry | alloc | off
    entry: int = 0
    users: Tuple[int, ...] = ()
    tiers: Tuple[int, ...] = ()
    bits: int = 2
    energy_off: bool = False
    plane: str = "z"
    coord: float = 0.75
    u_range: Optional[Tuple[float, float]] = None
    v_range: Optional[Tuple[float, float]] = None
    resolution: int = 31


@dataclass
class RunConfig:
    scene: SceneConfig
    locations: np.ndarray
    rounds: int = 2
    smoothing: int = 3
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    snrmap: SnrMapSpec = field(default_factory=SnrMapSpec)
    output_dir: str = "out"
    codebook_dir: Optional[str] = None
    text: str = ""

    @property
    def codebook_path(self) -> str:
        if self.codebook_dir is None:
            return os.path.join(self.output_dir, "codebook")
        if os.path.isabs(self.codebook_dir):
            return self.codebook_dir
        return os.path.join(self.output_dir, self.codebook_dir)


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str) -> List[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _tier_map(text: str, default: Optional[Dict[int, float]] = None) -> Dict[int, float]:
    """``"1:5, 2:4"`` -> ``{1: 5.0, 2: 4.0}``; a bare number applies to all five tiers."""
    text = text.strip()
    if ":" not in text:
        return {t: float(text) for t in range(1, 6)}
    out = dict(default or {})
    for item in text.replace(",", " ").split():
        t, val = item.split(":")
        out[int(t)] = float(val)
    return out


def _wall_map(text: str) -> Dict[str, float]:
    out = {}
    for item in text.replace(",", " ").split():
        wall, val = item.split(":")
        out[wall] = float(val)
    return out


def parse_panels(text: str) -> Tuple[Panel, ...]:
    """``"x0:20x20, y0:60x60@0.375:0.375"`` -> panels; ``@u:v`` pins the panel center."""
    panels = []
    for item in text.replace(",", " ").split():
        try:
            wall, rest = item.split(":", 1)
            center = None
            if "@" in rest:
                rest, c = rest.split("@")
                cu, cv = c.split(":")
                center = (float(cu), float(cv))
            rows, cols = rest.lower().split("x")
            panels.append(Panel(wall, int(rows), int(cols), center))
        except ValueError as exc:
            raise ConfigurationError(f"cannot parse panel {item!r}: expected wall:ROWSxCOLS[@u:v]") from exc
    return tuple(panels)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


def parse_scene(sec) -> SceneConfig:
    kw = {}
    floats = ("room_side", "frequency", "tx_beam_exponent", "element_angle_exponent", "coupling_strength")
    for key in floats:
        if key in sec:
            kw[key] = float(sec[key])
    if "tx_position" in sec:
        kw["tx_position"] = tuple(_floats(sec["tx_position"]))
    if "tx_direction" in sec:
        u = np.asarray(_floats(sec["tx_direction"]))
        if u.shape != (3,) or np.linalg.norm(u) == 0:
            raise ConfigurationError("tx_direction must be a nonzero 3-vector")
        kw["tx_direction"] = tuple(u / np.linalg.norm(u))
    if "wall_reflectivity" in sec:
        kw["wall_reflectivity"] = _wall_map(sec["wall_reflectivity"])
    if "element_spacing" in sec and sec["element_spacing"].strip().lower() != "auto":
        kw["element_spacing"] = float(sec["element_spacing"])
    if "panels" in sec:
        kw["panels"] = parse_panels(sec["panels"])
    if "coupling_neighborhood" in sec:
        kw["coupling_neighborhood"] = int(sec["coupling_neighborhood"])
    return SceneConfig(**kw)


def _locations(sec, L: float) -> np.ndarray:
    source = sec.get("source", "random").strip()
    if source not in LOCATION_SOURCES:
        raise ConfigurationError(f"[codebook] source must be one of {LOCATION_SOURCES}, got {source!r}")
    foreign = {"random": ("locations", "nx", "ny", "nz"),
               "grid": ("locations", "count"),
               "list": ("count", "nx", "ny", "nz", "margin")}[source]
    clash = [k for k in foreign if k in sec]
    if clash:
        raise ConfigurationError(f"[codebook] source={source} conflicts with keys {clash}")
    margin = float(sec.get("margin", "0.1"))
    if source == "random":
        rng = np.random.default_rng(int(sec.get("seed", "42")))
        return rng.uniform(margin, L - margin, size=(int(sec.get("count", "200")), 3))
    if source == "grid":
        axes = [np.linspace(margin, L - margin, int(sec.get(k, "5"))) for k in ("nx", "ny", "nz")]
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    if "locations" not in sec:
        raise ConfigurationError("[codebook] source=list needs a 'locations' key")
    pts = [_floats(p) for p in sec["locations"].split(";") if p.strip()]
    if any(len(p) != 3 for p in pts):
        raise ConfigurationError("every listed location needs three coordinates")
    return np.asarray(pts, dtype=float)


def parse_experiment(sec) -> ExperimentConfig:
    alloc_kw = {k: float(sec[k]) for k in ("tau_low", "tau_high", "alpha_tier", "beta_inf", "eps_inf") if k in sec}
    adm = AdmissionPolicy(
        tolerance=_tier_map(sec["tolerance"]) if "tolerance" in sec else AdmissionPolicy().tolerance,
        select_fraction=_tier_map(sec["select_fraction"]) if "select_fraction" in sec
        else AdmissionPolicy().select_fraction,
        accept_fraction=_tier_map(sec["accept_fraction"]) if "accept_fraction" in sec
        else AdmissionPolicy().accept_fraction,
        off_mismatch=sec.get("off_mismatch", "max").strip(),
    )
    kw = dict(
        alloc=AllocParams(**alloc_kw),
        ee=EEParams(float(sec.get("tau_off", "0.25"))),
        admission=adm,
        payment_factors=_tier_map(sec["payment_factors"], DEFAULT_PAYMENT_FACTORS)
        if "payment_factors" in sec else dict(DEFAULT_PAYMENT_FACTORS),
        tier_baselines=_tier_map(sec["tier_baselines"], DEFAULT_TIER_BASELINES)
        if "tier_baselines" in sec else dict(DEFAULT_TIER_BASELINES),
        correlation=sec.get("correlation", "pearson").strip(),
        admission_energy_off=_bool(sec.get("admission_energy_off", "true")),
    )
    if "seed" in sec:
        kw["seed"] = int(sec["seed"])
    if "realizations" in sec:
        kw["realizations"] = int(sec["realizations"])
    if "user_counts" in sec:
        kw["user_counts"] = tuple(_ints(sec["user_counts"]))
    if "bits" in sec:
        kw["bits"] = tuple(_ints(sec["bits"]))
    return ExperimentConfig(**kw)


def _parse_snrmap(sec) -> SnrMapSpec:
    spec = SnrMapSpec()
    if "source" in sec:
        spec.source = sec["source"].strip()
        if spec.source not in ("entry", "alloc", "off"):
            raise ConfigurationError(f"[snrmap] source must be entry, alloc or off, got {spec.source!r}")
    if "entry" in sec:
        spec.entry = int(sec["entry"])
    if "users" in sec:
        spec.users = tuple(_ints(sec["users"]))
    if "tiers" in sec:
        spec.tiers = tuple(_ints(sec["tiers"]))
    if "bits" in sec:
        spec.bits = int(sec["bits"])
    if "energy_off" in sec:
        spec.energy_off = _bool(sec["energy_off"])
    if "plane" in sec:
        spec.plane = sec["plane"].strip()
    if "coord" in sec:
        spec.coord = float(sec["coord"])
    if "u_range" in sec:
        spec.u_range = tuple(_floats(sec["u_range"]))
    if "v_range" in sec:
        spec.v_range = tuple(_floats(sec["v_range"]))
    if "resolution" in sec:
        spec.resolution = int(sec["resolution"])
    return spec


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    known = {"scene", "codebook", "experiment", "snrmap", "output"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    empty = configparser.SectionProxy(cp, "DEFAULT")
    get = lambda name: cp[name] if cp.has_section(name) else empty  # noqa: E731
    try:
        scene = parse_scene(get("scene"))
        cb = get("codebook")
        locations = _locations(cb, scene.room_side)
        experiment = parse_experiment(get("experiment"))
        snrmap = _parse_snrmap(get("snrmap"))
        rounds = int(cb.get("rounds", "2"))
        smoothing = int(cb.get("smoothing", "3"))
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from exc
    return RunConfig(
        scene=scene,
        locations=locations,
        rounds=rounds,
        smoothing=smoothing,
        experiment=experiment,
        snrmap=snrmap,
        output_dir=get("output").get("dir", "out").strip(),
        codebook_dir=cb.get("dir"),
        text=text,
    )


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
