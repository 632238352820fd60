"""Seeded Monte Carlo experiments over a compiled codebook.

Every realization draws its users from its own Philox stream keyed by
``(seed, K, realization)``. The key leaves out the quantization resolution
and the experiment, so all bit settings and all three experiments see the
same user draws, and results do not depend on how realizations are spread
over worker processes.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .codebook import Codebook, CodebookEntry
from .em import (RisState, direct_field, secondary_field, snr_db, solve_incident_field,
                 total_field)
from .errors import EvaluationError
from .orchestrator import (DEFAULT_PAYMENT_FACTORS, AdmissionPolicy, AllocParams, CommonConfig,
                           EEParams, Tier, admit, allocate, allocate_baseline, apply_energy_off)
from .scene import RisGeometry, SceneConfig, build_geometry

log = logging.getLogger(__name__)

EXPERIMENTS = ("alloc", "ee", "admission")
METHODS = ("baseline", "influence")
DEFAULT_TIER_BASELINES = {1: 7.81, 2: 10.35, 3: 13.48, 4: 17.00, 5: 19.92}


@dataclass(frozen=True)
class UserDraw:
    entry: int
    tier: int
    user_id: int


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 20240601
    realizations: int = 200
    user_counts: Tuple[int, ...] = (4, 6, 8, 10, 12, 14, 16, 18)
    bits: Tuple[int, ...] = (1, 2, 3, 4)
    alloc: AllocParams = field(default_factory=AllocParams)
    ee: EEParams = field(default_factory=EEParams)
    admission: AdmissionPolicy = field(default_factory=AdmissionPolicy)
    payment_factors: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_PAYMENT_FACTORS))
    tier_baselines: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_TIER_BASELINES))
    correlation: str = "pearson"
    admission_energy_off: bool = True

    def __post_init__(self):
        object.__setattr__(self, "user_counts", tuple(int(k) for k in self.user_counts))
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
        if self.realizations < 1:
            raise ValueError("need at least one realization")
        if not self.user_counts or min(self.user_counts) < 1:
            raise ValueError("user counts must be >= 1")
        if not self.bits or not set(self.bits) <= {1, 2, 3, 4}:
            raise ValueError("bits must be drawn from 1..4")
        if self.correlation not in ("pearson", "spearman"):
            raise ValueError("correlation must be 'pearson' or 'spearman'")

    def to_dict(self) -> dict:
        a = self.alloc
        return {
            "seed": self.seed,
            "realizations": self.realizations,
            "user_counts": list(self.user_counts),
            "bits": list(self.bits),
            "tau_low": a.tau_low, "tau_high": a.tau_high, "alpha_tier": a.alpha_tier,
            "beta_inf": a.beta_inf, "eps_inf": a.eps_inf,
            "tau_off": self.ee.tau_off,
            "tolerance": dict(self.admission.tolerance),
            "select_fraction": dict(self.admission.select_fraction),
            "accept_fraction": dict(self.admission.accept_fraction),
            "off_mismatch": self.admission.off_mismatch,
            "payment_factors": dict(self.payment_factors),
            "tier_baselines": dict(self.tier_baselines),
            "correlation": self.correlation,
            "admission_energy_off": self.admission_energy_off,
        }


def realization_rng(seed: int, K: int, index: int) -> np.random.Generator:
    """Philox substream for realization ``index`` of the ``K``-user cells."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(K, index))))


def sample_realization(rng: np.random.Generator, codebook: Union[Codebook, int], K: int) -> List[UserDraw]:
    """``K`` distinct entries drawn uniformly, each with a uniform tier in 1..5."""
    size = codebook if isinstance(codebook, int) else len(codebook)
    if K > size:
        raise ValueError(f"cannot draw {K} distinct users from {size} entries")
    idx = rng.choice(size, size=K, replace=False)
    tiers = rng.integers(1, 6, size=K)
    return [UserDraw(int(e), int(t), u) for u, (e, t) in enumerate(zip(idx, tiers))]


def achieved_snr(scene: SceneConfig, geometry: RisGeometry, cc: Union[CommonConfig, RisState],
                 location) -> float:
    """SNR at ``location`` with ``cc`` deployed; the incident field is re-solved under it."""
    state = cc.to_state() if isinstance(cc, CommonConfig) else cc
    e_inc = solve_incident_field(scene, geometry, state).field
    return snr_db(total_field(geometry, state, e_inc, location))


def snr_loss(entry: CodebookEntry, achieved: float) -> float:
    return entry.optimal_snr - achieved


def tier_consistency(tiers: Sequence[int], losses: Sequence[float], method: str = "pearson") -> Optional[float]:
    """Correlation between tier index and SNR loss; ``None`` for degenerate samples."""
    t = np.asarray(tiers, dtype=float)
    x = np.asarray(losses, dtype=float)
    if t.size < 2 or np.ptp(t) == 0 or np.ptp(x) == 0:
        return None
    if method == "spearman":
        r = stats.spearmanr(t, x).statistic
    else:
        tc, xc = t - t.mean(), x - x.mean()
        r = np.sum(tc * xc) / math.sqrt(np.sum(tc * tc) * np.sum(xc * xc))
    return float(np.clip(r, -1.0, 1.0))


class _Context:
    """Per-process evaluation state: geometry, uncoupled source and user propagation vectors."""

    def __init__(self, scene: SceneConfig, codebook: Codebook, config: ExperimentConfig):
        self.scene = scene
        self.codebook = codebook
        self.config = config
        self.geometry = build_geometry(scene)
        if codebook.n_elements != self.geometry.n_elements:
            raise EvaluationError(
                f"codebook has {codebook.n_elements} elements, scene has {self.geometry.n_elements}")
        self.source = direct_field(scene, self.geometry) + secondary_field(scene, self.geometry)
        locs = codebook.locations()
        dist = np.linalg.norm(locs[:, None, :] - self.geometry.positions[None, :, :], axis=2)
        self.green = np.exp(1j * self.geometry.wavenumber * dist) / dist
        self.optimal = codebook.optimal_snrs()

    def losses(self, cc: CommonConfig, entries: Sequence[int]) -> np.ndarray:
        state = cc.to_state()
        if not np.any(state.amplitude):
            e = np.zeros(len(entries), dtype=complex)
        else:
            e_inc = solve_incident_field(self.scene, self.geometry, state, source=self.source).field
            weights = state.gamma * e_inc
            e = np.array([np.sum(weights * self.green[i]) for i in entries])
        return self.optimal[list(entries)] - snr_db(e)


def _realization(ctx: _Context, K: int, bits: int, index: int, experiments) -> dict:
    cfg = ctx.config
    cb = ctx.codebook
    rng = realization_rng(cfg.seed, K, index)
    users = sample_realization(rng, cb, K)
    idx = [u.entry for u in users]
    tiers = [u.tier for u in users]
    entries = [cb[i] for i in idx]
    tier_objs = [Tier.of(t, cfg.payment_factors) for t in tiers]
    params = replace(cfg.alloc, bits=bits)
    out = {"tiers": tiers}

    cc = allocate(entries, tier_objs, params)
    loss_cc = None
    if "alloc" in experiments or "ee" in experiments:
        loss_cc = ctx.losses(cc, idx)
    if "alloc" in experiments:
        base = allocate_baseline(entries, tier_objs, params)
        loss_base = loss_cc if base == cc else ctx.losses(base, idx)
        out["alloc"] = {
            "influence": (loss_cc, tier_consistency(tiers, loss_cc, cfg.correlation)),
            "baseline": (loss_base, tier_consistency(tiers, loss_base, cfg.correlation)),
        }
    cc_off = None
    if "ee" in experiments or ("admission" in experiments and cfg.admission_energy_off):
        cc_off = apply_energy_off(cc, [e.influence for e in entries], cfg.ee)
    if "ee" in experiments:
        loss_off = loss_cc if cc_off == cc else ctx.losses(cc_off, idx)
        out["ee"] = (cc_off.off_fraction, float(np.mean(loss_off)), float(np.mean(loss_cc)))
    if "admission" in experiments:
        if len(cb) <= K:
            raise EvaluationError(f"admission needs more than {K} codebook entries")
        remaining = np.setdiff1d(np.arange(len(cb)), idx)
        cand = int(remaining[rng.integers(remaining.size)])
        cand_tier = int(rng.integers(1, 6))
        deployed = cc_off if cfg.admission_energy_off else cc
        decision = admit(deployed, cb[cand], Tier.of(cand_tier, cfg.payment_factors), cfg.admission)
        loss = float(ctx.losses(deployed, [cand])[0])
        out["admission"] = (cand_tier, bool(decision), loss)
    return out


_WORKER: Dict[str, object] = {}


def _init_worker(scene, codebook, config):
    _WORKER["ctx"] = _Context(scene, codebook, config)


def _run_task(task):
    K, bits, index, experiments = task
    try:
        return _realization(_WORKER["ctx"], K, bits, index, experiments)
    except Exception as exc:
        raise EvaluationError(f"K={K} bits={bits} realization {index}: {exc}") from exc


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


@dataclass
class MetricsReport:
    """Aggregated rows for the three experiment families plus run metadata.

    Row dicts use ``None`` for cells without samples; CSV writers render them
    as empty fields.
    """

    config: ExperimentConfig
    alloc_rows: List[dict] = field(default_factory=list)
    ee_rows: List[dict] = field(default_factory=list)
    admission_rows: List[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    ALLOC_COLUMNS = ("method", "K", "bits", "tier", "mean_loss_db", "corr_mean", "corr_std", "n", "corr_n")
    EE_COLUMNS = ("K", "bits", "off_fraction_mean", "loss_with_db", "loss_without_db", "n")
    ADMISSION_COLUMNS = ("tier", "accepted", "total", "ratio", "mean_acc_db", "std_acc_db", "max_acc_db",
                         "mean_rej_db", "std_rej_db", "min_rej_db", "baseline_db")

    def correlation(self, method: str, K: int, bits: int) -> Optional[float]:
        for row in self.alloc_rows:
            if row["method"] == method and row["K"] == K and row["bits"] == bits:
                return row["corr_mean"]
        return None

    def tier_losses(self, method: str, bits: int, user_counts: Sequence[int]) -> Dict[int, float]:
        """Sample-weighted mean loss per tier over several user counts."""
        acc: Dict[int, List[float]] = {}
        for row in self.alloc_rows:
            if row["method"] == method and row["bits"] == bits and row["K"] in user_counts:
                s, n = acc.setdefault(row["tier"], [0.0, 0])
                acc[row["tier"]] = [s + row["mean_loss_db"] * row["n"], n + row["n"]]
        return {t: s / n for t, (s, n) in sorted(acc.items())}

    def ee(self, K: int, bits: int) -> Optional[dict]:
        for row in self.ee_rows:
            if row["K"] == K and row["bits"] == bits:
                return row
        return None

    def _write(self, path, columns, rows):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([
                    _fmt(row[c]) if isinstance(row[c], float) or row[c] is None else str(row[c])
                    for c in columns
                ])

    def write_alloc_csv(self, path):
        self._write(path, self.ALLOC_COLUMNS, self.alloc_rows)

    def write_ee_csv(self, path):
        self._write(path, self.EE_COLUMNS, self.ee_rows)

    def write_admission_csv(self, path):
        self._write(path, self.ADMISSION_COLUMNS, self.admission_rows)


def _mean_std(values):
    if not values:
        return None, None
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std())


def _aggregate(config: ExperimentConfig, tasks, results, experiments) -> MetricsReport:
    report = MetricsReport(config)
    cells: Dict[Tuple[int, int], List[dict]] = {}
    for (K, bits, _, _), res in zip(tasks, results):
        cells.setdefault((K, bits), []).append(res)

    if "alloc" in experiments:
        for (K, bits), rs in cells.items():
            for method in METHODS:
                per_tier: Dict[int, List[float]] = {}
                corrs = []
                for res in rs:
                    losses, corr = res["alloc"][method]
                    for t, loss in zip(res["tiers"], losses):
                        per_tier.setdefault(t, []).append(float(loss))
                    if corr is not None:
                        corrs.append(corr)
                c_mean, c_std = _mean_std(corrs)
                for t in sorted(per_tier):
                    report.alloc_rows.append({
                        "method": method, "K": K, "bits": bits, "tier": t,
                        "mean_loss_db": float(np.mean(per_tier[t])),
                        "corr_mean": c_mean, "corr_std": c_std,
                        "n": len(per_tier[t]), "corr_n": len(corrs),
                    })
    if "ee" in experiments:
        for (K, bits), rs in cells.items():
            off, with_ee, without = zip(*(res["ee"] for res in rs))
            report.ee_rows.append({
                "K": K, "bits": bits,
                "off_fraction_mean": float(np.mean(off)),
                "loss_with_db": float(np.mean(with_ee)),
                "loss_without_db": float(np.mean(without)),
                "n": len(rs),
            })
    if "admission" in experiments:
        by_tier: Dict[int, List[Tuple[bool, float]]] = {t: [] for t in range(1, 6)}
        for rs in cells.values():
            for res in rs:
                t, ok, loss = res["admission"]
                by_tier[t].append((ok, loss))
        for t in range(1, 6):
            acc = [l for ok, l in by_tier[t] if ok]
            rej = [l for ok, l in by_tier[t] if not ok]
            total = len(by_tier[t])
            m_acc, s_acc = _mean_std(acc)
            m_rej, s_rej = _mean_std(rej)
            report.admission_rows.append({
                "tier": t, "accepted": len(acc), "total": total,
                "ratio": len(acc) / total if total else None,
                "mean_acc_db": m_acc, "std_acc_db": s_acc, "max_acc_db": max(acc) if acc else None,
                "mean_rej_db": m_rej, "std_rej_db": s_rej, "min_rej_db": min(rej) if rej else None,
                "baseline_db": float(config.tier_baselines.get(t)) if t in config.tier_baselines else None,
            })
    return report


def run_experiments(config: ExperimentConfig, codebook: Codebook, scene: SceneConfig,
                    experiments: Sequence[str] = EXPERIMENTS, workers: int = 1) -> MetricsReport:
    """Run the selected experiment families over every (K, bits) cell."""
    experiments = tuple(e for e in EXPERIMENTS if e in experiments)
    if not experiments:
        raise ValueError("no experiment selected")
    need = max(config.user_counts) + (1 if "admission" in experiments else 0)
    if len(codebook) < need:
        raise EvaluationError(f"codebook has {len(codebook)} entries, experiments need {need}")
    tasks = [(K, b, r, experiments)
             for K in config.user_counts for b in config.bits for r in range(config.realizations)]
    if workers <= 1:
        _init_worker(scene, codebook, config)
        results = [_run_task(t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (8 * workers))
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(scene, codebook, config)) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=chunk))
    report = _aggregate(config, tasks, results, experiments)
    report.metadata = {"seed": config.seed, "experiments": list(experiments),
                       "fingerprint": codebook.fingerprint, "compiler_version": codebook.version}
    return report


def run_allocation_mc(config, codebook, scene, workers=1) -> MetricsReport:
    return run_experiments(config, codebook, scene, ("alloc",), workers)


def run_ee_mc(config, codebook, scene, workers=1) -> MetricsReport:
    return run_experiments(config, codebook, scene, ("ee",), workers)


def run_admission_mc(config, codebook, scene, workers=1) -> MetricsReport:
    return run_experiments(config, codebook, scene, ("admission",), workers)
