"""Operating-phase decisions on top of a compiled codebook.

* :func:`allocate` builds one common configuration from several users' entries
  by per-element weighted voting over quantized phase states, where the
  weights blend the user's tier with the element's influence.
* :func:`allocate_baseline` is the same vote with tier weights only.
* :func:`apply_energy_off` switches off elements no active user relies on.
* :func:`admit` gates a candidate user on phase compatibility with the
  deployed configuration over the candidate's most influential elements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from .codebook import CodebookEntry
from .em import RisState
from .phase import level_phase, quantize_phase, wrap_phase

__all__ = [
    "Tier", "AllocParams", "EEParams", "AdmissionPolicy", "CommonConfig", "AdmissionResult",
    "DEFAULT_PAYMENT_FACTORS", "wrap_phase", "quantize_phase", "blending_factor", "vote_weight",
    "allocate", "allocate_baseline", "apply_energy_off", "admit",
]

DEFAULT_PAYMENT_FACTORS: Dict[int, float] = {1: 5.0, 2: 4.0, 3: 3.0, 4: 2.0, 5: 1.0}


@dataclass(frozen=True)
class Tier:
    index: int
    payment_factor: float

    def __post_init__(self):
        if self.index not in (1, 2, 3, 4, 5):
            raise ValueError(f"tier index must be in 1..5, got {self.index}")
        if not self.payment_factor > 0:
            raise ValueError("payment factor must be positive")

    @classmethod
    def of(cls, index: int, payment_factors: Mapping[int, float] = DEFAULT_PAYMENT_FACTORS) -> "Tier":
        return cls(index, float(payment_factors[index]))


@dataclass(frozen=True)
class AllocParams:
    tau_low: float = 0.3
    tau_high: float = 0.8
    alpha_tier: float = 1.0
    beta_inf: float = 1.5
    eps_inf: float = 1e-3
    bits: int = 1

    def __post_init__(self):
        # tau_low >= 1 is allowed: it pins the blending factor to 0
        if not 0.0 <= self.tau_low < self.tau_high < math.inf:
            raise ValueError("need 0 <= tau_low < tau_high < inf")
        if self.alpha_tier < 0 or self.beta_inf < 0 or not self.eps_inf > 0:
            raise ValueError("exponents must be >= 0 and eps_inf > 0")
        if self.bits not in (1, 2, 3, 4):
            raise ValueError(f"bits must be in 1..4, got {self.bits}")

    @property
    def n_levels(self) -> int:
        return 2 ** self.bits


@dataclass(frozen=True)
class EEParams:
    tau_off: float = 0.25


@dataclass(frozen=True)
class AdmissionPolicy:
    """Per-tier phase tolerance (fraction of 2*pi) and top-subset/acceptance fractions.

    ``off_mismatch`` says how switched-off elements of the deployed
    configuration count: ``"max"`` treats them as a pi mismatch, ``"exclude"``
    drops them from the top subset.
    """

    tolerance: Mapping[int, float] = field(
        default_factory=lambda: {1: 0.15, 2: 0.25, 3: 0.30, 4: 0.45, 5: 0.60})
    select_fraction: Mapping[int, float] = field(default_factory=lambda: {t: 0.10 for t in range(1, 6)})
    accept_fraction: Mapping[int, float] = field(default_factory=lambda: {t: 0.10 for t in range(1, 6)})
    off_mismatch: str = "max"

    def __post_init__(self):
        for name in ("tolerance", "select_fraction", "accept_fraction"):
            for t, val in getattr(self, name).items():
                if not 0.0 < val <= 1.0:
                    raise ValueError(f"{name}[{t}] must lie in (0, 1], got {val}")
        if self.off_mismatch not in ("max", "exclude"):
            raise ValueError("off_mismatch must be 'max' or 'exclude'")


@dataclass(frozen=True, eq=False)
class CommonConfig:
    """Deployed configuration: a quantized state index and an on/off flag per element."""

    states: np.ndarray
    on: np.ndarray
    n_levels: int

    @property
    def phases(self) -> np.ndarray:
        return level_phase(self.states, self.n_levels)

    @property
    def off_fraction(self) -> float:
        return float(np.mean(~self.on))

    def to_state(self) -> RisState:
        return RisState(self.on.astype(float), self.phases)

    def __len__(self):
        return self.states.size

    def __eq__(self, other):
        if not isinstance(other, CommonConfig):
            return NotImplemented
        return (self.n_levels == other.n_levels and np.array_equal(self.states, other.states)
                and np.array_equal(self.on, other.on))


def blending_factor(max_v, tau_low: float, tau_high: float):
    """0 at or below ``tau_low``, 1 at or above ``tau_high``, linear in between."""
    max_v = np.asarray(max_v, dtype=float)
    eta = np.where(max_v <= tau_low, 0.0,
                   np.where(max_v >= tau_high, 1.0, (max_v - tau_low) / (tau_high - tau_low)))
    return float(eta) if eta.ndim == 0 else eta


def vote_weight(pf, alpha_tier, beta_inf, eps_inf, eta, v):
    tier = np.power(pf, alpha_tier)
    return (1 - eta) * tier + eta * tier * np.power(eps_inf + v, beta_inf)


def _stack(entries: Sequence[CodebookEntry], tiers: Sequence[Tier]):
    if len(entries) == 0:
        raise ValueError("need at least one user")
    if len(entries) != len(tiers):
        raise ValueError(f"{len(entries)} entries but {len(tiers)} tiers")
    sizes = {e.phases.size for e in entries}
    if len(sizes) != 1:
        raise ValueError(f"entries disagree on element count: {sorted(sizes)}")
    phases = np.stack([e.phases for e in entries])
    v = np.stack([e.influence for e in entries])
    pf = np.array([t.payment_factor for t in tiers], dtype=float)
    return phases, v, pf


def _vote(states: np.ndarray, weights: np.ndarray, n_levels: int) -> np.ndarray:
    # scores[s, n] = sum of weights of users voting s at n. Each column is
    # summed in sorted order so the result does not depend on user order.
    scores = np.empty((n_levels, states.shape[1]))
    for s in range(n_levels):
        w = np.where(states == s, weights, 0.0)
        scores[s] = np.sort(w, axis=0).sum(axis=0)
    # argmax returns the first maximum: ties go to the lowest state index
    return np.argmax(scores, axis=0)


def _allocate(entries, tiers, params: AllocParams, physics: bool) -> CommonConfig:
    phases, v, pf = _stack(entries, tiers)
    n_levels = params.n_levels
    states = quantize_phase(phases, n_levels)
    if physics:
        eta = blending_factor(v.max(axis=0), params.tau_low, params.tau_high)
    else:
        eta = np.zeros(phases.shape[1])
    weights = vote_weight(pf[:, None], params.alpha_tier, params.beta_inf, params.eps_inf, eta[None, :], v)
    cc = _vote(states, weights, n_levels)
    return CommonConfig(cc.astype(np.int64), np.ones(cc.size, dtype=bool), n_levels)


def allocate(entries: Sequence[CodebookEntry], tiers: Sequence[Tier], params: AllocParams) -> CommonConfig:
    """Influence-aware weighted-majority common configuration (all elements on)."""
    return _allocate(entries, tiers, params, physics=True)


def allocate_baseline(entries: Sequence[CodebookEntry], tiers: Sequence[Tier],
                      params: AllocParams) -> CommonConfig:
    """Tier-only weighted majority: :func:`allocate` with the blending factor pinned to 0."""
    return _allocate(entries, tiers, params, physics=False)


def apply_energy_off(cc: CommonConfig, influences: Sequence[np.ndarray], ee: EEParams) -> CommonConfig:
    """Switch off every element whose largest influence over the users is below ``tau_off``.

    State indices are kept, so switched-off elements still report the
    state the vote chose for them.
    """
    v = np.atleast_2d(np.asarray(influences, dtype=float))
    if v.shape[1] != len(cc):
        raise ValueError(f"influence vectors have {v.shape[1]} elements, configuration has {len(cc)}")
    off = v.max(axis=0) < ee.tau_off
    return CommonConfig(cc.states.copy(), cc.on & ~off, cc.n_levels)


@dataclass(frozen=True)
class AdmissionResult:
    admitted: bool
    subset_size: int
    matched: int
    required: int
    mismatch: Optional[np.ndarray] = None

    def __bool__(self):
        return self.admitted


def _ceil_fraction(frac: float, n: int) -> int:
    # guard against products like 0.1 * 30 = 3.0000000000000004
    return int(math.ceil(frac * n - 1e-9))


def admit(cc: CommonConfig, candidate: CodebookEntry, tier: Tier, policy: AdmissionPolicy,
          details: bool = False) -> AdmissionResult:
    """Phase-compatibility gate for a candidate user.

    The subset T holds the ``ceil(select_fraction * N)`` elements where the
    candidate's influence is largest (ties to the lower index). An element
    of T matches when the wrapped difference between the deployed phase and
    the candidate's optimal phase is at most ``tolerance * 2*pi``; the
    candidate is admitted when at least ``ceil(accept_fraction * |T|)``
    elements match.
    """
    n = len(cc)
    if candidate.phases.size != n:
        raise ValueError(f"candidate has {candidate.phases.size} elements, configuration has {n}")
    x = policy.tolerance[tier.index]
    y_sel = policy.select_fraction[tier.index]
    y_acc = policy.accept_fraction[tier.index]

    top = np.argsort(-candidate.influence, kind="stable")[:_ceil_fraction(y_sel, n)]
    mismatch = np.abs(wrap_phase(cc.phases[top] - candidate.phases[top]))
    on = cc.on[top]
    if policy.off_mismatch == "exclude":
        mismatch = mismatch[on]
    else:
        mismatch = np.where(on, mismatch, math.pi)
    subset = mismatch.size
    matched = int(np.count_nonzero(mismatch <= x * 2 * math.pi))
    required = _ceil_fraction(y_acc, subset)
    return AdmissionResult(subset > 0 and matched >= required, subset, matched, required,
                           mismatch if details else None)
