import numpy as np
import pytest

from projnewton import oracle
from projnewton.errors import InvalidParameterError, LineSearchError, SingularJacobianError
from projnewton.linop import DenseOperator, fd1d, identity_operator, to_dense
from projnewton.penalty import lp_smooth, quadratic
from projnewton.pnewton import (
    CONVERGED,
    GENERAL,
    SUBSPACE_CONVERGED,
    TIKHONOV,
    PNConfig,
    ProjectedNewton,
    assemble_projected_system,
    kkt_residual,
    line_search,
    newton_direction,
    solve_projected_newton,
)
from projnewton.problems import smooth1d_problem, spike_problem


def test_config_validation():
    assert PNConfig(stop_rule="kkt").stop_rule == "kkt-norm"
    for bad in ({"tau": 1.0}, {"c": 0.0}, {"lambda0": -1.0}, {"stop_rule": "nope"}, {"gamma_min": 0.0}):
        with pytest.raises(InvalidParameterError):
            PNConfig(**bad)


def test_initial_residual(smooth64):
    p = smooth64
    s = ProjectedNewton.from_problem(p, lp_smooth(1))
    A = to_dense(p.A)
    expect = np.concatenate([-1e5 * A.T @ p.b, [0.5 * p.b @ p.b - 0.5 * p.sigma ** 2]])
    np.testing.assert_allclose(s.state.F, expect, rtol=1e-14)


def test_kkt_residual_costs(rng):
    A = DenseOperator(rng.standard_normal((6, 5)))
    L = fd1d(5)
    x = rng.standard_normal(5)
    b = rng.standard_normal(6)
    t, w = A._matvec(x), A._rmatvec(A._matvec(x))
    atb = A._rmatvec(b)
    F, vt = kkt_residual(b, 0.3, 2.0, t, w, atb, L=L, pen=lp_smooth(1.5, 1e-3), z=L._matvec(x))
    assert (A.forward_count, A.adjoint_count, L.forward_count, L.adjoint_count) == (0, 0, 0, 1)
    np.testing.assert_allclose(F, oracle.dense_F(A, L, lp_smooth(1.5, 1e-3), b, 0.3, x, 2.0), rtol=1e-13)
    u = L._rmatvec(L._matvec(x))
    F2, _ = kkt_residual(b, 0.3, 2.0, t, w, atb, u=u)
    assert L.adjoint_count == 1
    np.testing.assert_allclose(F2, oracle.dense_F(A, L, quadratic(), b, 0.3, x, 2.0), rtol=1e-13)
    # last block vanishes exactly when the residual norm equals sigma
    r = np.linalg.norm(t - b)
    F3, _ = kkt_residual(b, r, 1.0, t, w, atb, u=u)
    assert abs(F3[-1]) <= 1e-14 * r * r


def test_direction_two_by_two():
    a, g, r1, r2 = 3.0, -2.0, 1.5, 0.7
    J = np.array([[a, g], [g, 0.0]])
    dy, dlam = newton_direction(J, np.array([r1, r2]))
    assert dy[0] == pytest.approx(r2 / g, rel=1e-15)
    assert dlam == pytest.approx((r1 - a * r2 / g) / g, rel=1e-14)
    dy, dlam = newton_direction(J, np.zeros(2))
    assert not np.any(dy) and dlam == 0.0


def test_direction_singular():
    with pytest.raises(SingularJacobianError):
        newton_direction(np.zeros((2, 2)), np.ones(2))
    with pytest.raises(SingularJacobianError):
        newton_direction(np.array([[1.0, np.nan], [0.0, 1.0]]), np.ones(2))


def test_assembly_zero_block(rng):
    M = rng.standard_normal((4, 3))
    J, _ = assemble_projected_system(2.0, M.T @ M, rng.standard_normal(3), np.array([1.0, 0, 0]),
                                     np.eye(3), np.zeros(3), 0.5)
    assert J[3, 3] == 0.0
    assert np.array_equal(J, J.T)


def test_line_search_examples():
    F_prev = np.array([1.0, 1.0])
    gamma, n_red, _ = line_search(np.linalg.norm(F_prev), 1.0, 0.5, lambda g: 0.1 * F_prev)
    assert gamma == 1.0 and n_red == 0
    seen = []

    def trial(g):
        seen.append(g)
        return 0.1 * F_prev

    gamma, n_red, _ = line_search(np.linalg.norm(F_prev), 1.0, -2.0, trial, tau=0.9)
    assert gamma == pytest.approx(0.45) and n_red == 0
    assert 1.0 + gamma * -2.0 == pytest.approx(0.1)
    gamma, n_red, _ = line_search(1.0, 1.0, 0.1, lambda g: np.array([1.0 if g > 0.5 else 0.5]), tau=0.5)
    assert (gamma, n_red) == (0.5, 1)
    with pytest.raises(LineSearchError):
        line_search(1.0, 1.0, 0.1, lambda g: np.array([2.0]))
    with pytest.raises(LineSearchError):
        line_search(1.0, 1.0, -1e15, lambda g: np.array([0.1]))


def descent_errors(problem, pen, steps=40, **cfg):
    s = ProjectedNewton.from_problem(problem, pen, PNConfig(stop_rule="kkt", tol=1e-6, max_iterations=steps, **cfg))
    A, L = to_dense(problem.A), to_dense(problem.L)
    errs = []
    more = True
    while more:
        k0 = s.k
        more = s.step()
        if s.k == k0:
            break
        rec = s.last_step
        k = rec.ybar.size
        V = s.basis.V[:, :k]
        x_prev = V @ rec.ybar
        grad = oracle.dense_merit_gradient(A, L, pen, problem.b, s.sigma, x_prev, rec.lam_prev)
        d = np.concatenate([V @ rec.dy, [rec.dlam]])
        fn2 = rec.F_prev @ rec.F_prev
        errs.append(abs(d @ grad + fn2) / fn2)
    return errs


@pytest.mark.parametrize("pen,reg", [(quadratic(), "I"), (quadratic(), "D"), (lp_smooth(1, 1e-5), "D")])
def test_descent_identity(pen, reg):
    p = smooth1d_problem(100, level=0.1, seed=0)
    if reg == "I":
        p.L = identity_operator(p.n)
    errs = descent_errors(p, pen)
    assert len(errs) > 3
    assert max(errs) <= 1e-8


def test_projection_identity(rng):
    n = 20
    A = DenseOperator(rng.standard_normal((24, n)) / 5)
    x_true = rng.standard_normal(n)
    b = A.matrix @ x_true + 0.05 * rng.standard_normal(24)
    sigma = 0.5 * np.linalg.norm(b - A.matrix @ x_true)
    L = fd1d(n)
    pen = lp_smooth(1.3, 1e-3)
    s = ProjectedNewton(A, L, b, sigma, pen, PNConfig(stop_rule="kkt", tol=0.0, max_iterations=6))
    for _ in range(6):
        s.step()
    rec = s.last_step
    k = rec.ybar.size
    assert k == 6
    V = s.basis.V[:, :k]
    P = np.zeros((n + 1, k + 1))
    P[:n, :k] = V
    P[n, k] = 1.0
    x_prev = V @ rec.ybar
    Jd = oracle.dense_jacobian(A, L, pen, b, x_prev, rec.lam_prev)
    proj = P.T @ Jd @ P
    assert np.max(np.abs(rec.J - proj)) <= 1e-10 * np.max(np.abs(proj))
    Fd = oracle.dense_F(A, L, pen, b, sigma, x_prev, rec.lam_prev)
    np.testing.assert_allclose(rec.rhs, -P.T @ Fd, rtol=0, atol=1e-10 * np.abs(Fd).max())


def test_modes_agree_on_quadratic(smooth64):
    runs = {}
    for mode in (GENERAL, TIKHONOV):
        s = ProjectedNewton.from_problem(smooth64, quadratic(),
                                         PNConfig(mode=mode, stop_rule="kkt", tol=0.0, max_iterations=15))
        Js = []
        while s.step():
            Js.append((s.last_step.J.copy(), s.state.y.copy(), s.state.lam))
        runs[mode] = Js
    for (J1, y1, l1), (J2, y2, l2) in zip(runs[GENERAL], runs[TIKHONOV]):
        assert np.max(np.abs(J1 - J2)) <= 1e-12 * np.max(np.abs(J1))
        assert np.linalg.norm(y1 - y2) <= 1e-8 * np.linalg.norm(y1)
        assert abs(l1 - l2) <= 1e-8 * l1


def test_tikhonov_mode_rejects_nonquadratic(smooth64):
    with pytest.raises(InvalidParameterError):
        ProjectedNewton.from_problem(smooth64, lp_smooth(1), PNConfig(mode=TIKHONOV))


@pytest.mark.parametrize("pen", [quadratic(), lp_smooth(1, 1e-5)])
def test_run_invariants(smooth200, pen):
    res = solve_projected_newton(smooth200, pen)
    assert res.status == CONVERGED
    tr = res.trace
    F = [r.F_norm for r in tr]
    assert all(b < a for a, b in zip(F, F[1:]))
    for prev, r in zip(tr, tr[1:]):
        assert 0.5 * r.F_norm ** 2 <= (0.5 - 1e-4 * r.gamma) * prev.F_norm ** 2
    assert all(r.lam > 0 for r in tr)
    assert all(r.discrepancy_mismatch >= -1e-12 for r in tr)
    assert tr[-1].discrepancy_mismatch <= 1e-6
    assert np.isnan(tr[0].rel_dlambda) and np.isnan(tr[0].rel_dx)


def test_residual_floor_in_line_search(smooth200):
    mis = []

    class Probe(ProjectedNewton):
        def _trial_factory(self, *a):
            trial, cache = super()._trial_factory(*a)

            def wrapped(g):
                F = trial(g)
                mis.append(np.linalg.norm(cache["t"] - self.b) - self.sigma)
                return F

            return wrapped, cache

    Probe.from_problem(smooth200, lp_smooth(1, 1e-5)).run()
    assert len(mis) > 10 and min(mis) >= -1e-12


@pytest.mark.parametrize("pen,per_iter", [(quadratic(), lambda r: (1, 1, 1, 1)),
                                          (lp_smooth(1, 1e-5), lambda r: (1, 1, 1, 1 + r.n_backtracks))])
def test_matvec_counts(smooth200, pen, per_iter):
    tr = solve_projected_newton(smooth200, pen).trace
    assert (tr[0].matvec_A, tr[0].matvec_At, tr[0].matvec_L, tr[0].matvec_Lt) == (0, 1, 0, 0)
    for prev, r in zip(tr, tr[1:]):
        d = (r.matvec_A - prev.matvec_A, r.matvec_At - prev.matvec_At,
             r.matvec_L - prev.matvec_L, r.matvec_Lt - prev.matvec_Lt)
        assert d == per_iter(r)


def test_quadratic_matches_oracle(smooth64):
    p = smooth64
    res = solve_projected_newton(p, quadratic(), PNConfig(stop_rule="kkt", tol=1e-10))
    assert abs(np.linalg.norm(p.A.matvec(res.x) - p.b) - p.sigma) <= 1e-8 * p.sigma
    x_or, _ = oracle.tikhonov_discrepancy_bisect(p.A, p.L, p.b, p.sigma)
    assert np.linalg.norm(res.x - x_or) <= 1e-6 * np.linalg.norm(x_or)


def test_l1_matches_full_newton(smooth64):
    pen = lp_smooth(1, 1e-5)
    res = solve_projected_newton(smooth64, pen, PNConfig(stop_rule="kkt", tol=1e-10))
    x_or, lam_or = oracle.full_newton_solve(smooth64, pen)
    assert np.linalg.norm(res.x - x_or) <= 1e-6 * np.linalg.norm(x_or)
    assert res.lam == pytest.approx(lam_or, rel=1e-6)
    F0 = np.linalg.norm(oracle.dense_F(smooth64.A, smooth64.L, pen, smooth64.b, smooth64.sigma,
                                       np.zeros(64), 1e5))
    F = oracle.dense_F(smooth64.A, smooth64.L, pen, smooth64.b, smooth64.sigma, x_or, lam_or)
    assert np.linalg.norm(F) <= 1e-8 * F0


def test_smaller_beta_reconstructs_better():
    p = spike_problem(200, level=0.1, seed=0)
    errs = [solve_projected_newton(p, lp_smooth(1, beta)).trace[-1].rel_error for beta in (1e-6, 1e-3)]
    assert errs[0] < errs[1]


def test_lambda0_robustness(smooth200):
    pen = lp_smooth(1, 1e-5)
    xs = [solve_projected_newton(smooth200, pen, PNConfig(lambda0=l0, stop_rule="kkt", tol=1e-9,
                                                         max_iterations=2000)).x
          for l0 in (1e3, 1e5, 1e7)]
    for i in range(3):
        for j in range(i):
            assert np.linalg.norm(xs[i] - xs[j]) <= 1e-6 * np.linalg.norm(xs[j])


def test_stop_rules_and_budget(smooth200):
    pen = lp_smooth(1, 1e-5)
    r = solve_projected_newton(smooth200, pen, PNConfig(stop_rule="dlambda", tol=1e-4))
    assert r.status == CONVERGED and r.trace[-1].rel_dlambda <= 1e-4
    r = solve_projected_newton(smooth200, pen, PNConfig(stop_rule="dx", tol=1e-4))
    assert r.status == CONVERGED and r.trace[-1].rel_dx <= 1e-4
    r = solve_projected_newton(smooth200, pen, PNConfig(budget_matvecs=20))
    assert r.status == "budget-exhausted" and r.trace[-1].matvecs >= 20
    r = solve_projected_newton(smooth200, pen, PNConfig(max_iterations=3))
    assert r.status == "max-iterations" and r.iterations == 3
    r = solve_projected_newton(smooth200, pen, callback=lambda s, row: row.k == 2)
    assert r.status == "user-stop" and r.iterations == 2


def test_subspace_convergence_small():
    # n = 4: the basis fills R^n, and the solver either converges or reports it
    rng = np.random.default_rng(3)
    A = DenseOperator(np.eye(4) + 0.1 * rng.standard_normal((4, 4)))
    b = np.array([1.0, 2.0, 0.5, -1.0])
    s = ProjectedNewton(A, identity_operator(4), b, 0.3, quadratic(), PNConfig(stop_rule="kkt", tol=0.0))
    res = s.run()
    assert res.status in (SUBSPACE_CONVERGED, CONVERGED)
    assert s.basis.k <= 4
