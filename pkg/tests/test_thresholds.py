import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from airfl import channel as ch
from airfl.errors import DomainError
from airfl.thresholds import (
    OptInputs,
    certify_convexity,
    g_shape,
    golden_section,
    h_shape,
    h_shape_d1,
    h_shape_d2,
    objective_p1prime,
    second_difference,
    solve_thresholds,
    validate_on_grid,
)


def opt(K=1, **kw):
    base = dict(eta=0.05, L=0.1, B=0.1, Q=1, K=K, sigma2=5e-12, P=2e-6, kappa=1e-8)
    base.update(kw)
    return OptInputs(**base)


def brute(lam, inp):
    """Objective written out directly from its definition."""
    lam = np.asarray(lam, dtype=float)
    first = np.mean(48 * (1 - lam**2) / lam**2 * inp.eta**2 * inp.B**2 * inp.Q**2 * inp.L**2)
    noise = lam * inp.B**2 * inp.Q * (4 * (1 - lam**2) / lam**2 + 1) / (inp.P * inp.kappa * np.log(1 / lam))
    return first + 8 * inp.eta * inp.L * inp.sigma2 / inp.K**2 * np.max(noise)


def test_objective_matches_definition():
    r = np.random.default_rng(0)
    inp = opt(K=3, P=[1e-6, 2e-6, 3e-6], kappa=[1e-8, 3e-9, 2e-8])
    for _ in range(100):
        lam = r.uniform(0.01, 0.99, 3)
        assert objective_p1prime(lam, inp) == pytest.approx(brute(lam, inp), rel=1e-12)


def test_noiseless_objective_decreasing_and_solution_at_top():
    inp = opt(sigma2=0.0)
    grid = np.linspace(0.01, 0.99, 100)
    vals = [objective_p1prime([x], inp) for x in grid]
    assert np.all(np.diff(vals) < 0)
    assert solve_thresholds(inp).lambdas[0] == inp.bounds[1]


def test_objective_blows_up_near_one():
    inp = opt()
    assert objective_p1prime([1 - 1e-4], inp) > 1000 * objective_p1prime([0.5], inp)


def test_objective_domain():
    with pytest.raises(DomainError):
        objective_p1prime([1.0], opt())
    with pytest.raises(DomainError):
        objective_p1prime([0.5, 0.5], opt())


@pytest.mark.parametrize("kappa", [1e-6, 1e-8, 1e-10])
def test_one_device_matches_scalar_search(kappa):
    inp = opt(kappa=kappa)
    sol = solve_thresholds(inp)
    ref = minimize_scalar(lambda x: brute([x], inp), bounds=inp.bounds, method="bounded",
                          options={"xatol": 1e-12})
    assert abs(sol.lambdas[0] - ref.x) <= 1e-5
    assert sol.objective <= ref.fun * (1 + 1e-9)


def test_identical_devices_symmetric():
    sol = solve_thresholds(opt(K=4))
    assert np.ptp(sol.lambdas) <= 1e-6


def test_two_devices_match_brute_grid():
    inp = opt(K=2, P=[2e-6, 2e-6], kappa=[1e-8, 1e-10])
    sol = solve_thresholds(inp)
    grid = np.linspace(*inp.bounds, 400)
    a, b = np.meshgrid(grid, grid, indexing="ij")
    vals = np.vectorize(lambda x, y: brute([x, y], inp))(a, b)
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    cell = grid[1] - grid[0]
    assert abs(sol.lambdas[0] - grid[i]) <= cell
    assert abs(sol.lambdas[1] - grid[j]) <= cell
    assert sol.objective <= vals.min() * (1 + 1e-6)
    # the weaker device transmits less often
    assert sol.lambdas[1] < sol.lambdas[0]


def test_epigraph_and_subgradient_agree():
    inp = opt(K=2, kappa=[1e-8, 1e-10])
    a = solve_thresholds(inp)
    b = solve_thresholds(inp, method="subgradient")
    assert b.objective == pytest.approx(a.objective, rel=1e-6)
    assert a.objective <= b.objective * (1 + 1e-12)


def test_solution_beats_validation_grid():
    inp = opt(K=3, kappa=[1e-8, 3e-9, 1e-9])
    sol = solve_thresholds(inp)
    assert validate_on_grid(sol, inp, 1000) <= 1e-6 * sol.objective
    assert sol.residual <= 1e-3


def test_power_scaling_moves_lambda_up():
    lams = [solve_thresholds(opt(K=2, P=np.array([2e-6, 1e-6]) * c, kappa=[1e-8, 1e-9])).lambdas for c in (1, 10, 100)]
    assert np.all(np.diff(np.array(lams), axis=0) > 0)


def test_scale_covariance_of_terms():
    lam = np.array([0.4, 0.7])
    a = opt(K=2, P=[1e-6, 2e-6])
    b = opt(K=2, P=[1e-5, 2e-5])
    from airfl.thresholds import objective_terms

    ca, na = objective_terms(lam, a)
    cb, nb = objective_terms(lam, b)
    assert ca == cb and nb == pytest.approx(na / 10, rel=1e-14)


def test_deterministic():
    inp = opt(K=3, kappa=[1e-8, 3e-9, 1e-9])
    assert solve_thresholds(inp).lambdas.tobytes() == solve_thresholds(inp).lambdas.tobytes()


def test_eps_mapping_and_empirical_frequency():
    sol = solve_thresholds(opt(K=2, kappa=[1e-8, 1e-10]))
    assert np.array_equal(sol.eps, -np.log(sol.lambdas))
    g = ch.sample_fading(2, 100_000, np.random.default_rng(1))
    freq = ch.apply_mask(g, sol.eps).mean(axis=1)
    assert np.all(np.abs(freq - sol.lambdas) <= 3 * np.sqrt(sol.lambdas * (1 - sol.lambdas) / 1e5) + 1e-12)


def test_unknown_method():
    with pytest.raises(DomainError):
        solve_thresholds(opt(), method="newton")


def test_g_second_difference_at_half():
    fd = second_difference(lambda x: g_shape(x), np.array([0.5]))[0]
    assert fd == pytest.approx(96.0, rel=1e-3)


def test_h_closed_form_second_derivative():
    fd = second_difference(h_shape, np.array([0.5]), rel_step=1e-3)[0]
    assert fd == pytest.approx(float(h_shape_d2(0.5)), rel=1e-3)
    x = np.linspace(0.05, 0.95, 19)
    fd1 = (h_shape(x + 1e-6) - h_shape(x - 1e-6)) / 2e-6
    assert np.allclose(h_shape_d1(x), fd1, rtol=1e-6)


def test_certify_convexity_report():
    rep = certify_convexity(opt(K=2, kappa=[1e-8, 1e-9]), 1000)
    assert rep.convex and rep.closed_form_ok
    assert rep.min_second_diff_g >= -1e-9 and rep.min_second_diff_f >= -1e-9
    assert rep.max_rel_err_f <= 1e-3
    assert rep.to_dict()["grid_points"] == 1000
    with pytest.raises(DomainError):
        certify_convexity(opt(), 50)


def test_golden_section_helper():
    x, fx, _ = golden_section(lambda v: (v - 0.3) ** 2, 0.0, 1.0)
    assert abs(x - 0.3) < 1e-8


def test_opt_inputs_validation():
    with pytest.raises(DomainError):
        opt(lambda_min=0.6)
    with pytest.raises(DomainError):
        opt(P=0.0)
    with pytest.raises(DomainError):
        opt(sigma2=-1.0)
