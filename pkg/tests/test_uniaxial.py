import numpy as np
import pytest
from scipy.integrate import solve_ivp

from belh import tensor as ta
from belh import uniaxial as ux
from belh.spectral import Grid


# operators ---------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        ux.ScalarRun(nodes=2)
    with pytest.raises(ValueError):
        ux.ScalarRun(length=0)
    with pytest.raises(ValueError):
        ux.ScalarRun(profile="square")
    with pytest.raises(ValueError):
        ux.ScalarRun(profile="custom", nodes=8, q0=np.zeros(3))
    cfg = ux.ScalarRun(profile="custom", nodes=8, q0=np.arange(7.0))
    np.testing.assert_array_equal(cfg.initial_profile(), np.arange(7.0))
    assert cfg.lambda1 == pytest.approx(1.0)


def test_rhs_zero_and_constant():
    cfg = ux.ScalarRun(length=100.0, nodes=1000, Gamma=1.0, a=1.0, b=2.0, c=-1.0)
    assert np.all(ux.scalar_rhs(np.zeros(999), cfg) == 0)
    r = ux.scalar_rhs(np.ones(999), cfg)
    assert r[500] == pytest.approx(7.0, abs=1e-12)
    # the boundary only shows up next to the ends
    assert r[0] != pytest.approx(7.0)


def test_rhs_eigenfunction():
    cfg = ux.ScalarRun(length=np.pi, nodes=256, Gamma=1.3, L=0.7, a=0.4, b=0.0, c=0.0)
    phi = np.sin(np.pi * cfg.x[1:-1] / cfg.length)
    r = ux.scalar_rhs(phi, cfg)
    # discrete eigenvalue exactly, continuous one to second order in h
    lam_h = -ux.fd_eigenvalues(cfg.nodes, cfg.h)[0]
    np.testing.assert_allclose(r, -cfg.Gamma * (cfg.L * lam_h + cfg.a) * phi, atol=1e-11)
    want = -cfg.Gamma * (cfg.L * cfg.lambda1 + cfg.a) * phi
    assert np.abs(r - want).max() <= 2 * cfg.h ** 2


def test_rhs_rejects_bad_input():
    cfg = ux.ScalarRun(nodes=8)
    with pytest.raises(ValueError):
        ux.scalar_rhs(np.zeros(8), cfg)
    q = np.zeros(7)
    q[3] = np.nan
    with pytest.raises(ux.NumericalFailure):
        ux.scalar_rhs(q, cfg)


def test_fd_eigenvalues_match_matrix():
    n, h = 12, 0.3
    D = (np.diag(-2 * np.ones(n - 1)) + np.diag(np.ones(n - 2), 1) + np.diag(np.ones(n - 2), -1)) / h ** 2
    np.testing.assert_allclose(np.sort(ux.fd_eigenvalues(n, h)), np.linalg.eigvalsh(D), rtol=1e-12)


def test_kaplan_moment_examples():
    ell = 2.5
    x = np.linspace(0, ell, 513)
    assert ux.kaplan_moment(np.zeros(511), ell) == 0.0
    assert ux.kaplan_moment(np.sin(np.pi * x[1:-1] / ell), ell) == pytest.approx(ell / 2, rel=1e-12)
    s = 1.7
    got = ux.kaplan_moment(np.full(x.size, s), ell, interior=False)
    assert got == pytest.approx(s * 2 * ell / np.pi, rel=1e-5)


# stepping ------------------------------------------------------------------------

def test_linear_decay_exact():
    cfg = ux.ScalarRun(nodes=64, dt=0.01, T=0.5, a=0.3, b=0.0, c=0.0, amp=1.0, adaptive=False)
    rep = ux.run_scalar(cfg)
    lam_h = -ux.fd_eigenvalues(cfg.nodes, cfg.h)[0]
    want = cfg.initial_profile() * np.exp(-cfg.Gamma * (cfg.L * lam_h + cfg.a) * cfg.T)
    # reaction is linear here, so Heun is not exact; only the diffusion part is
    assert np.abs(rep.final_q - want).max() <= 1e-5
    cfg0 = ux.ScalarRun(nodes=64, dt=0.01, T=0.5, a=0.0, b=0.0, c=0.0, amp=1.0, adaptive=False)
    want0 = cfg0.initial_profile() * np.exp(-cfg0.Gamma * cfg0.L * lam_h * cfg0.T)
    np.testing.assert_allclose(ux.run_scalar(cfg0).final_q, want0, atol=1e-14)


def test_second_order_in_time():
    base = dict(nodes=64, T=0.2, a=-0.5, b=0.5, c=1.0, amp=1.0, adaptive=False)
    ref = ux.run_scalar(ux.ScalarRun(dt=1e-4, **base)).final_q
    errs = [np.abs(ux.run_scalar(ux.ScalarRun(dt=dt, **base)).final_q - ref).max()
            for dt in (0.02, 0.01)]
    assert np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.2)


def test_stable_run_bounded():
    rep = ux.run_scalar(ux.ScalarRun(dt=0.01, T=5.0, c=1.0, amp=2.0))
    assert not rep.blowup and rep.blowup_time is None
    assert rep.max_q[-1] < rep.max_q[0]
    assert rep.max_q.max() <= 2.0 + 1e-12
    assert rep.times[-1] == pytest.approx(5.0)
    assert not rep.comparison_valid


def test_unstable_run_blows_up_above_comparison():
    rep = ux.run_scalar(ux.ScalarRun(dt=0.01, T=5.0, c=-1.0, amp=2.0))
    assert rep.blowup and 0 < rep.blowup_time < 5.0
    assert rep.max_q[-1] >= 1e6 and rep.halvings >= 3
    assert rep.comparison_valid and rep.threshold is not None
    assert rep.threshold_time == 0.0
    assert rep.dominates_comparison()
    assert rep.moment_eventually_increasing()
    assert rep.nonnegative
    assert rep.growth_exponent == pytest.approx(3.0, abs=0.1)
    assert rep.lambda1 == pytest.approx(1.0)


def test_quadratic_focusing_blows_up():
    rep = ux.run_scalar(ux.ScalarRun(dt=0.01, T=5.0, a=0.0, b=-1.0, c=0.0, amp=-8.0))
    assert rep.sign == -1.0 and rep.comparison_valid
    assert rep.blowup
    assert rep.dominates_comparison() and rep.moment_eventually_increasing()
    assert rep.growth_exponent == pytest.approx(2.0, abs=0.1)


def test_small_data_below_threshold_does_not_blow_up():
    rep = ux.run_scalar(ux.ScalarRun(dt=0.01, T=3.0, c=-1.0, amp=0.1))
    assert not rep.blowup and rep.threshold_time is None
    assert rep.max_q[-1] < 0.1


def test_adaptive_failure_reported():
    cfg = ux.ScalarRun(dt=0.01, T=5.0, c=-1.0, amp=2.0, dt_min=1e-4)
    with pytest.raises(ux.AdaptiveFailure) as exc:
        ux.run_scalar(cfg)
    assert "halvings" in str(exc.value)


def test_csv_rows_shape():
    rep = ux.run_scalar(ux.ScalarRun(nodes=32, dt=0.1, T=0.3, c=1.0))
    rows = list(rep.csv_rows())
    assert len(rows) == len(rep.times) and all(len(r) == 4 for r in rows)
    assert rows[-1][0] == pytest.approx(0.3)


# comparison ODE ------------------------------------------------------------------

def test_comparison_threshold_is_root():
    for k1, k2, k3 in ((2.0, 0.5, 1.5), (1.0, 3.0, 0.0), (0.7, 0.0, 2.0)):
        m = ux.comparison_threshold(k1, k2, k3)
        assert m > 0 and -k1 + k2 * m + k3 * m * m == pytest.approx(0, abs=1e-12)
    assert ux.comparison_threshold(-1.0, 1.0, 1.0) == 0.0
    assert ux.comparison_threshold(1.0, 0.0, 0.0) is None


def test_comparison_solution_against_rk45():
    k1, k2, k3, G = 1.0, 0.3, 0.8, 1.2
    t = np.linspace(0, 0.4, 9)
    for m0 in (1.2, 0.5, -0.7):
        got = ux.comparison_solution(m0, t, G, k1, k2, k3)
        ref = solve_ivp(lambda _, m: G * (-k1 * m + k2 * m ** 2 + k3 * m ** 3), (0, 0.4), [m0],
                        method="RK45", rtol=1e-12, atol=1e-14, t_eval=t).y[0]
        np.testing.assert_allclose(got, ref, rtol=1e-7)
    # past the ODE's own blow-up the curve is reported as infinite
    far = ux.comparison_solution(2.0, np.array([0.0, 0.1, 5.0]), G, k1, k2, k3)
    assert np.all(np.isfinite(far[:2])) and far[2] == np.inf
    assert np.all(ux.comparison_solution(0.0, t, G, k1, k2, k3) == 0)


def test_comparison_coefficients():
    cfg = ux.ScalarRun(length=2.0, L=0.5, a=0.2, b=0.0, c=-1.5)
    sign, k1, k2, k3, valid = ux._comparison_coefficients(cfg, cfg.initial_profile())
    phi = 2 * 2.0 / np.pi
    assert sign == 1 and valid
    assert k1 == pytest.approx(0.5 * (np.pi / 2) ** 2 + 0.2)
    assert k2 == 0 and k3 == pytest.approx(9.0 / phi ** 2)
    neg = ux.ScalarRun(c=-1.0, amp=-1.0)
    assert not ux._comparison_coefficients(neg, neg.initial_profile())[-1]


def test_growth_exponent_on_model_curves():
    T = 1.0
    t = T - np.logspace(-9, -1, 400)[::-1]
    for p in (2.0, 3.0):
        q = ((p - 1) * (T - t)) ** (-1 / (p - 1))
        assert ux.growth_exponent(t, q) == pytest.approx(p, abs=1e-3)
    assert ux.growth_exponent([0, 1], [1, 2]) is None


# embedding -----------------------------------------------------------------------

def test_embed_examples():
    g = ux.embedding_grid(np.pi, (16, 8, 8))
    z = ux.embed_uniaxial(0.0, g)
    assert np.all(z.Q == 0) and np.all(z.u == 0)
    one = ux.embed_uniaxial(1.0, g)
    np.testing.assert_allclose(one.Q_matrix(), np.broadcast_to(ta.A0, g.shape + (3, 3)), atol=1e-14)
    assert np.all(one.u == 0)


def test_embed_sine_profile_odd_reflection():
    g = ux.embedding_grid(np.pi, (16, 8, 8))
    x = np.linspace(0, np.pi, 33)
    st = ux.embed_uniaxial(np.sin(x), g, np.pi)
    x1 = g.coords()[0][:, 0, 0]
    np.testing.assert_allclose(st.Q[0, :, 1, 2], np.sqrt(6) * np.sin(x1), atol=1e-14)
    q_line, dev = ux.extract_uniaxial(st)
    np.testing.assert_allclose(q_line, np.sin(x[::4]), atol=1e-14)
    assert dev == 0.0


def test_embed_incompatible_grid():
    g = ux.embedding_grid(np.pi, (16, 8, 8))
    with pytest.raises(ValueError):
        ux.embed_uniaxial(np.zeros(12), g)
    with pytest.raises(ValueError):
        ux.embed_uniaxial(np.zeros(17), Grid((16, 8, 8)), length=2.0)


def test_compare_needs_odd_reaction():
    with pytest.raises(ValueError):
        ux.compare_uniaxial(ux.ScalarRun(b=0.5, nodes=64, T=0.01))


def test_tensor_matches_scalar_short_horizon():
    cfg = ux.ScalarRun(nodes=8192, dt=1e-3, T=0.1, a=-0.5, c=1.0, amp=0.5)
    res = ux.compare_uniaxial(cfg, n=(64, 8, 8), every=10)
    assert res.times[-1] == pytest.approx(0.1)
    assert res.max_diff.max() <= 1e-8
    assert res.max_nonuniaxial.max() <= 1e-10
    assert res.max_u.max() == 0.0
    assert res.passed()
