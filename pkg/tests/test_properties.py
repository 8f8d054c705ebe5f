import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from swipt_dps.csi import full_lagrangian, solve_state_csi, water_fill_id
from swipt_dps.csir import solve_state_optimal, solve_state_suboptimal, surrogate_lagrangian
from swipt_dps.model import NonlinearEhParams, SystemParams, lagrangian_csir, q_nonlinear
from swipt_dps.policy import Mixture, Policy, blend_to_target

EH = NonlinearEhParams(6400.0, 0.003, 3e-3)
SYS = SystemParams(sigma2=3e-4)

gain = st.floats(1e-6, 1e-1)
price = st.floats(1e-3, 1e9)
frac = st.floats(0.0, 1.0)


@given(gain, frac, frac)
def test_energy_monotone_and_bounded(h, r1, r2):
    a, b = sorted((r1, r2))
    qa, qb = q_nonlinear(h, 2.0, a, EH), q_nonlinear(h, 2.0, b, EH)
    assert 0 <= qa <= qb <= EH.p_s * EH.t_block


@settings(max_examples=200, deadline=None)
@given(gain, price, frac)
def test_split_beats_endpoints_and_any_probe(h, lam, probe):
    rho = solve_state_optimal(h, lam, EH, SYS)
    best = lagrangian_csir(h, 2.0, rho, lam, EH, SYS)
    tol = 1e-12 * max(1.0, abs(best))
    for r in (0.0, 1.0, probe):
        assert best >= lagrangian_csir(h, 2.0, r, lam, EH, SYS) - tol


@settings(max_examples=200, deadline=None)
@given(gain, price, frac)
def test_surrogate_split_beats_probe(h, lam, probe):
    rho = solve_state_suboptimal(h, lam, EH, SYS)
    best = surrogate_lagrangian(h, rho, lam, EH, SYS)
    assert best >= surrogate_lagrangian(h, probe, lam, EH, SYS) - 1e-12 * max(1.0, abs(best))


@given(gain, st.floats(1e-3, 1e3), st.floats(0.0, 4.0))
def test_water_fill_within_budget(h, mu, p_eh):
    p = water_fill_id(h, mu, p_eh, SYS)
    assert 0 <= p <= SYS.p_max - p_eh + 1e-15


@settings(max_examples=100, deadline=None)
@given(gain, st.floats(1e-2, 1e7), st.floats(1e-3, 1e2), st.floats(0.0, 4.0), frac)
def test_joint_allocation_beats_probe(h, lam, mu, p, r):
    al = solve_state_csi(h, lam, mu, eh=EH, sys=SYS)
    assert al.p_total[0] <= SYS.p_max * (1 + 1e-12)
    best = full_lagrangian(h, al.p_id, al.p_eh, lam, mu, EH, SYS)[0]
    probe = full_lagrangian(h, (1 - r) * p, r * p, lam, mu, EH, SYS)
    assert best >= probe - 1e-9 * max(1.0, abs(best))


@given(st.floats(0.0, 1.0), st.floats(1.0, 2.0), st.floats(0.0, 1.0))
def test_blend_hits_target(a, b, t):
    pa = Policy(np.zeros(1), np.zeros(1), {"q": np.array([a])})
    pb = Policy(np.zeros(1), np.zeros(1), {"q": np.array([b])})
    target = a + t * (b - a)
    mix = blend_to_target(Mixture.single(pa), Mixture.single(pb), "q", target)
    assert abs(mix.mean("q") - target) <= 1e-12
    assert abs(sum(w for w, _ in mix.parts) - 1) <= 1e-12
