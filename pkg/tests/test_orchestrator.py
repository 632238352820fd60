import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from risorch.codebook import CodebookEntry
from risorch.orchestrator import (AdmissionPolicy, AllocParams, CommonConfig, EEParams, Tier, admit, allocate,
                                  allocate_baseline, apply_energy_off, blending_factor, vote_weight)
from risorch.phase import level_phase, quantize_phase, wrap_phase

PI = math.pi


def entry(phases, influence):
    phases = np.asarray(phases, dtype=float)
    return CodebookEntry(np.zeros(3), phases, np.asarray(influence, dtype=float), 0.0)


def tiers(*pfs):
    return [Tier(1, float(pf)) for pf in pfs]


# phase helpers

@pytest.mark.parametrize("phi,expected", [(3 * PI / 2, -PI / 2), (-PI, -PI), (2 * PI, 0.0), (PI, -PI)])
def test_wrap_examples(phi, expected):
    assert wrap_phase(phi) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("phi,n,s", [(1.0, 4, 1), (-0.1, 4, 0), (PI / 2, 2, 0), (PI, 4, 2), (-PI / 4 - 0.01, 4, 3)])
def test_quantize_examples(phi, n, s):
    assert quantize_phase(phi, n) == s


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_wrap_range_and_congruence(phi):
    w = wrap_phase(phi)
    assert -PI <= w < PI
    k = (phi - w) / (2 * PI)
    assert abs(k - round(k)) < 1e-9


@given(st.floats(-10, 10), st.sampled_from([2, 4, 8, 16]))
def test_quantize_picks_nearest_level(phi, n):
    s = quantize_phase(phi, n)
    assert 0 <= s < n
    d = abs(wrap_phase(phi - level_phase(s, n)))
    assert d <= PI / n + 1e-12
    others = [abs(wrap_phase(phi - level_phase(t, n))) for t in range(n)]
    assert d <= min(others) + 1e-12


def test_quantize_rejects_one_level():
    with pytest.raises(ValueError):
        quantize_phase(0.0, 1)


# blending factor and weights

@pytest.mark.parametrize("v,eta", [(0.3, 0.0), (0.8, 1.0), (0.55, 0.5), (0.0, 0.0), (1.0, 1.0)])
def test_blending_examples(v, eta):
    assert blending_factor(v, 0.3, 0.8) == pytest.approx(eta, abs=1e-15)


@given(st.floats(0, 1), st.floats(0, 1))
def test_blending_monotone(a, b):
    lo, hi = sorted((a, b))
    assert 0 <= blending_factor(lo, 0.3, 0.8) <= blending_factor(hi, 0.3, 0.8) <= 1


def test_vote_weight_examples():
    assert vote_weight(3, 1, 1.5, 1e-3, 0.0, 0.7) == 3
    assert vote_weight(2, 1, 1.5, 1e-3, 1.0, 0.0) == pytest.approx(2 * 1e-3 ** 1.5, rel=1e-12)
    assert vote_weight(2, 1, 1.5, 1e-3, 1.0, 0.0) == pytest.approx(6.325e-5, rel=1e-3)
    assert vote_weight(5, 1, 1.5, 1e-3, 0.5, 0.5) == pytest.approx(2.5 + 2.5 * 0.501 ** 1.5, rel=1e-12)
    assert vote_weight(5, 1, 1.5, 1e-3, 0.5, 0.5) == pytest.approx(3.3866, abs=1e-4)


@pytest.mark.parametrize("kw", [dict(tau_low=0.8, tau_high=0.3), dict(tau_low=-0.1), dict(bits=5),
                                dict(eps_inf=0.0), dict(beta_inf=-1.0)])
def test_alloc_params_validation(kw):
    with pytest.raises(ValueError):
        AllocParams(**kw)


def test_tier_validation():
    with pytest.raises(ValueError):
        Tier(6, 1.0)
    with pytest.raises(ValueError):
        Tier(1, 0.0)
    assert Tier.of(2) == Tier(2, 4.0)


# allocation examples

def test_single_user_gets_own_quantized_entry(rng):
    phases = rng.uniform(-PI, PI, 40)
    e = entry(phases, rng.uniform(0, 1, 40))
    for bits in (1, 2, 3, 4):
        params = AllocParams(bits=bits)
        cc = allocate([e], tiers(3), params)
        np.testing.assert_array_equal(cc.states, quantize_phase(phases, 2 ** bits))
        assert allocate_baseline([e], tiers(3), params) == cc
        assert np.all(cc.on)


def test_higher_payment_wins():
    cc = allocate([entry([0.0], [0.1]), entry([PI - 0.1], [0.1])], tiers(2, 1), AllocParams(bits=1))
    assert cc.states.tolist() == [0]


def test_tie_goes_to_lowest_state():
    users = [entry([PI - 0.1], [0.5]), entry([0.0], [0.5])]
    assert allocate(users, tiers(1, 1), AllocParams(bits=1)).states.tolist() == [0]


def test_baseline_hand_enumeration():
    users = [entry([0.0], [0.9]), entry([PI - 0.1], [0.9]), entry([PI - 0.1], [0.9])]
    assert allocate_baseline(users, tiers(5, 1, 1), AllocParams(bits=1)).states.tolist() == [0]


def test_influence_overrides_payment():
    # user 0 pays more but the element barely matters to it
    users = [entry([0.0], [0.01]), entry([PI - 0.1], [1.0])]
    p = AllocParams(bits=1)
    assert allocate_baseline(users, tiers(5, 1), p).states.tolist() == [0]
    assert allocate(users, tiers(5, 1), p).states.tolist() == [1]


def test_allocation_input_checks():
    with pytest.raises(ValueError):
        allocate([], [], AllocParams())
    with pytest.raises(ValueError):
        allocate([entry([0.0], [1.0])], tiers(1, 2), AllocParams())
    with pytest.raises(ValueError):
        allocate([entry([0.0], [1.0]), entry([0.0, 1.0], [1.0, 1.0])], tiers(1, 2), AllocParams())


# brute-force oracle

def _oracle_allocate(phases, v, pf, params, physics):
    """Triple loop over elements, states and users, written from the vote definition."""
    n_levels = 2 ** params.bits
    K, N = len(phases), len(phases[0])
    out = []
    for n in range(N):
        states = []
        for k in range(K):
            dists = [abs(wrap_phase(phases[k][n] - 2 * PI * s / n_levels)) for s in range(n_levels)]
            states.append(dists.index(min(dists)))
        max_v = max(v[k][n] for k in range(K))
        if not physics or max_v <= params.tau_low:
            eta = 0.0
        elif max_v >= params.tau_high:
            eta = 1.0
        else:
            eta = (max_v - params.tau_low) / (params.tau_high - params.tau_low)
        best, best_score = 0, -1.0
        for s in range(n_levels):
            terms = []
            for k in range(K):
                if states[k] == s:
                    tier = pf[k] ** params.alpha_tier
                    terms.append((1 - eta) * tier + eta * tier * (params.eps_inf + v[k][n]) ** params.beta_inf)
            score = sum(sorted(terms))
            if score > best_score:
                best, best_score = s, score
        out.append(best)
    return out


def test_allocate_matches_oracle_exhaustive_sweep():
    rng = np.random.default_rng(2024)
    cases = 0
    for N in (1, 2, 3):
        for K in (1, 2, 3):
            for bits in (1, 2):
                for _ in range(56):
                    phases = rng.uniform(-PI, PI, (K, N))
                    v = rng.uniform(0, 1, (K, N))
                    pf = rng.integers(1, 6, K).astype(float)
                    params = AllocParams(bits=bits, alpha_tier=float(rng.choice([0.5, 1.0, 2.0])))
                    users = [entry(phases[k], v[k]) for k in range(K)]
                    for physics, fn in ((True, allocate), (False, allocate_baseline)):
                        got = fn(users, tiers(*pf), params).states.tolist()
                        assert got == _oracle_allocate(phases.tolist(), v.tolist(), pf.tolist(), params, physics)
                    cases += 1
    assert cases >= 1000


# allocation properties

def _users(draw_phases, draw_v):
    return [entry(p, v) for p, v in zip(draw_phases, draw_v)]


user_sets = st.integers(1, 5).flatmap(lambda K: st.integers(1, 6).flatmap(lambda N: st.tuples(
    arrays(float, (K, N), elements=st.floats(-PI, PI)),
    arrays(float, (K, N), elements=st.floats(0, 1)),
    st.lists(st.integers(1, 5), min_size=K, max_size=K),
    st.sampled_from([1, 2, 3, 4]),
)))


@settings(max_examples=200)
@given(user_sets, st.integers(-3, 3))
def test_payment_scaling_invariance(case, exp):
    phases, v, pf, bits = case
    users = _users(phases, v)
    p = AllocParams(bits=bits)
    scaled = [Tier(1, f * 2.0 ** exp) for f in pf]
    assert allocate(users, tiers(*pf), p) == allocate(users, scaled, p)


@settings(max_examples=200)
@given(user_sets, st.randoms(use_true_random=False))
def test_user_permutation_invariance(case, rnd):
    phases, v, pf, bits = case
    order = list(range(len(pf)))
    rnd.shuffle(order)
    p = AllocParams(bits=bits)
    a = allocate(_users(phases, v), tiers(*pf), p)
    b = allocate(_users(phases[order], v[order]), tiers(*[pf[i] for i in order]), p)
    assert a == b


@settings(max_examples=200)
@given(user_sets)
def test_regimes_agree_below_tau_low(case):
    phases, v, pf, bits = case
    p = AllocParams(bits=bits, tau_low=1.0, tau_high=2.0)
    users = _users(phases, v)
    assert allocate(users, tiers(*pf), p) == allocate_baseline(users, tiers(*pf), p)


@settings(max_examples=200)
@given(user_sets)
def test_states_come_from_some_voter(case):
    phases, v, pf, bits = case
    cc = allocate(_users(phases, v), tiers(*pf), AllocParams(bits=bits))
    voted = quantize_phase(phases, 2 ** bits)
    assert np.all(np.any(voted == cc.states[None, :], axis=0))


# energy-efficient OFF

def _cc(states, n_levels=4, on=None):
    states = np.asarray(states)
    return CommonConfig(states, np.ones(states.size, bool) if on is None else np.asarray(on), n_levels)


def test_energy_off_example():
    out = apply_energy_off(_cc([0, 1, 2]), [[0.1, 0.3, 0.9]], EEParams(0.25))
    assert out.on.tolist() == [False, True, True]
    assert out.states.tolist() == [0, 1, 2]
    assert out.off_fraction == pytest.approx(1 / 3)


def test_energy_off_zero_threshold():
    assert apply_energy_off(_cc([0, 1]), [[0.0, 0.0]], EEParams(0.0)).off_fraction == 0.0


def test_energy_off_dark_users():
    assert apply_energy_off(_cc([0, 1]), [[0.0, 0.0], [0.0, 0.0]], EEParams(0.25)).off_fraction == 1.0


def test_energy_off_uses_max_over_users():
    out = apply_energy_off(_cc([0, 0]), [[0.1, 0.1], [0.5, 0.2]], EEParams(0.25))
    assert out.on.tolist() == [True, False]


@given(arrays(float, (3, 8), elements=st.floats(0, 1)), st.floats(0, 1), st.floats(0, 1))
def test_energy_off_monotone_in_threshold(v, a, b):
    lo, hi = sorted((a, b))
    cc = _cc(np.zeros(8, int))
    off_lo = ~apply_energy_off(cc, v, EEParams(lo)).on
    off_hi = ~apply_energy_off(cc, v, EEParams(hi)).on
    assert np.all(off_hi | ~off_lo)


# admission

def test_identical_candidate_admitted(rng):
    cc = _cc(rng.integers(0, 4, 50))
    cand = entry(cc.phases, rng.uniform(0, 1, 50))
    for t in range(1, 6):
        res = admit(cc, cand, Tier.of(t), AdmissionPolicy(), details=True)
        assert res.admitted and res.matched == res.subset_size == 5
        assert np.all(res.mismatch == 0)


def test_opposite_candidate_rejected(rng):
    cc = _cc(np.zeros(50, int))
    cand = entry(np.full(50, -PI), rng.uniform(0, 1, 50))
    res = admit(cc, cand, Tier.of(1), AdmissionPolicy())
    assert not res and res.matched == 0


def test_single_top_element_decides():
    cc = _cc(np.zeros(10, int))
    v = np.linspace(0.1, 1.0, 10)       # element 9 is the most influential
    ok = np.full(10, PI - 0.01)
    ok[9] = 0.2
    bad = np.zeros(10)
    bad[9] = PI - 0.01
    policy = AdmissionPolicy()
    r_ok = admit(cc, entry(ok, v), Tier.of(1), policy)
    r_bad = admit(cc, entry(bad, v), Tier.of(1), policy)
    assert (r_ok.subset_size, r_ok.required, r_ok.admitted) == (1, 1, True)
    assert (r_bad.subset_size, r_bad.required, r_bad.admitted) == (1, 1, False)


def test_tolerance_boundary_is_inclusive():
    cc = _cc([0], n_levels=2)
    x = 0.15
    edge = entry([x * 2 * PI], [1.0])
    assert admit(cc, edge, Tier.of(1), AdmissionPolicy(tolerance={t: x for t in range(1, 6)}))


def test_off_elements_policies():
    cc = _cc([0, 0], on=[False, True])
    cand = entry([0.0, 0.0], [1.0, 0.5])
    tight = {t: 0.1 for t in range(1, 6)}
    full = {t: 1.0 for t in range(1, 6)}
    # top element is off: a pi mismatch, or dropped from the subset
    res = admit(cc, cand, Tier.of(1), AdmissionPolicy(tolerance=tight, select_fraction=full, accept_fraction=full))
    assert (res.subset_size, res.matched, res.admitted) == (2, 1, False)
    res = admit(cc, cand, Tier.of(1), AdmissionPolicy(tolerance=tight, select_fraction=full,
                                                      accept_fraction=full, off_mismatch="exclude"))
    assert (res.subset_size, res.matched, res.admitted) == (1, 1, True)
    # a subset emptied by exclusion never admits
    dark = _cc([0, 0], on=[False, False])
    assert not admit(dark, cand, Tier.of(1), AdmissionPolicy(off_mismatch="exclude"))


def test_full_tolerance_admits_everything(rng):
    policy = AdmissionPolicy(tolerance={t: 1.0 for t in range(1, 6)})
    for _ in range(20):
        cc = _cc(rng.integers(0, 4, 30), on=rng.random(30) < 0.5)
        cand = entry(rng.uniform(-PI, PI, 30), rng.uniform(0, 1, 30))
        assert admit(cc, cand, Tier.of(int(rng.integers(1, 6))), policy)


def test_ceiling_arithmetic():
    cc = _cc(np.zeros(30, int))
    res = admit(cc, entry(np.zeros(30), np.ones(30)), Tier.of(1), AdmissionPolicy())
    assert res.subset_size == 3 and res.required == 1
    res = admit(_cc(np.zeros(31, int)), entry(np.zeros(31), np.ones(31)), Tier.of(1), AdmissionPolicy())
    assert res.subset_size == 4


@settings(max_examples=200)
@given(arrays(float, 20, elements=st.floats(-PI, PI)), arrays(float, 20, elements=st.floats(0, 1)),
       arrays(np.int64, 20, elements=st.integers(0, 3)), st.floats(0.01, 1), st.floats(0.01, 1),
       st.integers(1, 5))
def test_admission_monotone_in_tolerance(phases, v, states, a, b, tier):
    lo, hi = sorted((a, b))
    cc = _cc(states)
    cand = entry(phases, v)
    r_lo = admit(cc, cand, Tier.of(tier), AdmissionPolicy(tolerance={t: lo for t in range(1, 6)}))
    r_hi = admit(cc, cand, Tier.of(tier), AdmissionPolicy(tolerance={t: hi for t in range(1, 6)}))
    assert r_hi.matched >= r_lo.matched
    assert bool(r_hi) or not bool(r_lo)


@pytest.mark.parametrize("kw", [dict(tolerance={1: 0.0}), dict(select_fraction={1: 1.5}), dict(off_mismatch="x")])
def test_policy_validation(kw):
    with pytest.raises(ValueError):
        AdmissionPolicy(**kw)


def test_config_equality():
    assert _cc([0, 1]) == _cc([0, 1])
    assert _cc([0, 1]) != _cc([0, 1], on=[True, False])
    assert _cc([0, 1]) != _cc([0, 1], n_levels=2)
