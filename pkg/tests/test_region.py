import json
import math

import mpmath as mp
import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import setup
from swipt_dps.errors import GuardrailExceeded
from swipt_dps.model import NonlinearEhParams, SystemParams, q_rx, rate_rx
from swipt_dps.region import (RERegion, get_scheme, oracle_solve, q_max_csi, q_max_csir,
                              read_region_csv, sweep_region, write_region_csv,
                              write_region_json)

ENS, EH, SYS = setup(64, 7, 10.0)


def test_q_max_csir_summation_oracle():
    mp.mp.dps = 40
    om = 1 / (1 + mp.e ** (mp.mpf(EH.a) * mp.mpf(EH.b)))
    tot = mp.mpf(0)
    for h in ENS.gains:
        x = mp.mpf(float(h)) * mp.mpf(SYS.p_fixed)
        psi = 1 / (1 + mp.e ** (-mp.mpf(EH.a) * (x - mp.mpf(EH.b))))
        tot += mp.mpf(EH.p_s) * (psi - om) / (1 - om)
    assert_allclose(q_max_csir(ENS, EH, SYS), float(tot / ENS.n), rtol=1e-13)


def test_q_max_csir_limits():
    assert q_max_csir(np.zeros(5), EH, SYS) == 0.0
    assert_allclose(q_max_csir(np.array([1.0]), EH, SYS), EH.p_s * EH.t_block, rtol=1e-15)


def test_q_max_csi_single_state_grid():
    # averages run over blocks, so one state may still time-share two powers:
    # the oracle is the concave envelope of Q over a 1-D power grid at P_avg
    h = ENS.gains[:1]
    xs = np.linspace(0, SYS.p_max, 4001)
    qv = q_rx(h[0] * xs, EH)
    lo, hi = xs <= SYS.p_avg, xs >= SYS.p_avg
    xl, xh = xs[lo][:, None], xs[hi][None, :]
    ql, qh = qv[lo][:, None], qv[hi][None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(xh > xl, (SYS.p_avg - xl) / (xh - xl), 0.0)
    best = np.max(ql + t * (qh - ql))
    ours = q_max_csi(h, EH, SYS)
    assert_allclose(ours, best, rtol=1e-6)
    # never worse than a constant power P <= P_avg
    assert ours >= q_rx(h[0] * xs[lo], EH).max()


def test_q_max_csi_mu_grid_oracle():
    h = ENS.gains
    xs = np.linspace(0, SYS.p_max, 4001)
    qv = q_rx(h[:, None] * xs[None, :], EH)
    cols_p, cols_q = [0.0], [0.0]
    for mu in np.concatenate(([0.0], np.geomspace(1e-8, 1e3, 400))):
        k = np.argmax(qv - mu * xs[None, :], axis=1)
        cols_p.append(xs[k].mean())
        cols_q.append(qv[np.arange(h.size), k].mean())
    p, q = np.array(cols_p), np.array(cols_q)
    best = q[p <= SYS.p_avg].max()
    lo, hi = np.nonzero(p <= SYS.p_avg)[0], np.nonzero(p > SYS.p_avg)[0]
    for i in lo:
        t = (SYS.p_avg - p[i]) / (p[hi] - p[i])
        best = max(best, np.max(q[i] + t * (q[hi] - q[i])))
    ours = q_max_csi(ENS, EH, SYS)
    assert ours >= best * (1 - 1e-9)
    assert ours <= best * (1 + 1e-3)


def test_q_max_csi_beats_fixed_power():
    sys = SystemParams(sigma2=SYS.sigma2, p_fixed=SYS.p_avg)
    assert q_max_csi(ENS, EH, sys) >= q_max_csir(ENS, EH, sys) * (1 - 1e-12)


def test_sweep_two_points():
    reg = sweep_region("optimal", ENS, 2, EH, SYS, case="csir", endpoint=False)
    assert len(reg.points) == 2
    assert reg.points[0].q_target == 0.0
    assert_allclose(reg.points[1].q_target, q_max_csir(ENS, EH, SYS) * (1 - 1e-6), rtol=1e-15)
    top = sweep_region("optimal", ENS, 2, EH, SYS, case="csir").points[-1]
    assert_allclose(top.energy, q_max_csir(ENS, EH, SYS), rtol=1e-15)
    assert top.rate == 0.0


@pytest.mark.parametrize("case", ["csir", "csi"])
def test_sweep_monotone_and_feasible(case):
    ens, eh, sys = setup(32, 3, 10.0)
    reg = sweep_region("optimal", ens, 6, eh, sys, case=case)
    assert not reg.errors
    assert np.all(np.diff(reg.q_targets) > 0)
    assert np.all(np.diff(reg.rates) <= 1e-12)
    qm = reg.ensemble_meta["q_max"]
    assert np.all(reg.energies >= reg.q_targets - 1e-9 * qm)
    assert np.all(reg.rates >= 0) and np.all(reg.energies <= eh.p_s * eh.t_block)


def test_region_nesting_csir():
    opt = sweep_region("optimal", ENS, 5, EH, SYS, case="csir")
    ms = sweep_region("modeswitch", ENS, 5, EH, SYS, case="csir")
    sub = sweep_region("suboptimal", ENS, 5, EH, SYS, case="csir")
    assert_allclose(ms.q_targets, opt.q_targets)
    assert np.all(ms.rates <= opt.rates + 1e-9)
    assert np.all(sub.rates <= opt.rates + 1e-9)


def test_region_nesting_csi():
    ens, eh, sys = setup(32, 3, 10.0)
    regs = {n: sweep_region(n, ens, 4, eh, sys, case="csi") for n in
            ("suboptimal", "optimal", "longterm", "binary")}
    assert np.all(regs["suboptimal"].rates <= regs["optimal"].rates + 1e-9)
    assert np.all(regs["optimal"].rates <= regs["longterm"].rates + 1e-9)
    assert np.all(regs["binary"].rates <= regs["optimal"].rates + 1e-9)


def test_sweep_records_errors_and_continues():
    # the linear CSI baseline cannot reach high targets under its own model
    ens, eh, sys = setup(16, 1, 10.0)
    reg = sweep_region("linear", ens, 5, eh, sys, case="csi")
    assert len(reg.points) + len(reg.errors) == 5
    for e in reg.errors:
        assert e["error"] == "InfeasibleTarget"


def test_workers_match_serial():
    a = sweep_region("optimal", ENS, 4, EH, SYS, case="csir")
    b = sweep_region("optimal", ENS, 4, EH, SYS, case="csir", workers=2)
    assert a.rates.tolist() == b.rates.tolist()


def test_sweep_rejects_single_point():
    with pytest.raises(ValueError):
        sweep_region("optimal", ENS, 1, EH, SYS)
    with pytest.raises(ValueError):
        get_scheme("csir", "bogus")


def test_csv_round_trip_bit_exact(tmp_path):
    regs = [sweep_region(n, ENS, 4, EH, SYS, case="csir") for n in ("optimal", "modeswitch")]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_region_csv(regs, p1)
    back = read_region_csv(p1)
    assert [r.scheme for r in back] == ["optimal", "modeswitch"]
    for r0, r1 in zip(regs, back):
        assert r0.rates.tolist() == r1.rates.tolist()
        assert r0.energies.tolist() == r1.energies.tolist()
        assert r0.q_targets.tolist() == r1.q_targets.tolist()
    write_region_csv(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_text().splitlines()[0] == "q_target,rate,energy,scheme,mode"
    write_region_json(regs, tmp_path / "a.json")
    d = json.loads((tmp_path / "a.json").read_text())
    assert d[0]["points"][1]["lambda"] > 0


def test_oracle_guardrail():
    ens, eh, sys = setup(257, 1, 10.0)
    with pytest.raises(GuardrailExceeded):
        oracle_solve(ens, 0.0, "csir", eh, sys)


def test_oracle_single_state_zero_target():
    h = ENS.gains[:1]
    pt = oracle_solve(h, 0.0, "csir", EH, SYS)
    assert pt.rate == rate_rx(h[0] * SYS.p_fixed, SYS.sigma2)


def test_oracle_information_dominance():
    ens, eh, sys = setup(8, 2, 10.0)
    q = 0.5 * min(q_max_csir(ens, eh, sys), q_max_csi(ens, eh, sys))
    r_csir = oracle_solve(ens, q, "csir", eh, sys).rate
    r_csi = oracle_solve(ens, q, "csi", eh, sys, stages=2).rate
    assert r_csi >= r_csir
