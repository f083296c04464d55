import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from koopvd.dynamics import kinetic_energy
from koopvd.eigen import (MAX_LATTICE_POINTS, EigenvalueLattice, ObservableSet, TrajectoryBank,
                          bank_output_residual, build_eigenvalue_lattice, build_predictor, build_trajectory_bank,
                          dmd_eigenvalues, eigen_pipeline, energy_semi_axes, evaluate_eigenfunctions,
                          fit_output_matrix, generate_energy_set, load_bank, make_observables, nn_lift,
                          sample_in_ellipsoid, save_bank, tps)
from koopvd.lstsq import RCOND, RankCollapse


@pytest.fixture(scope="module")
def small_bank():
    from koopvd.params import TireParams, VehicleParams

    vp, tp = VehicleParams(), TireParams()
    es = generate_energy_set(5e4, vp, 5, 4)
    bank = build_trajectory_bank(es, vp, tp, T=0.2, Ts=0.01)
    lat = build_eigenvalue_lattice(dmd_eigenvalues(bank), 2)
    return evaluate_eigenfunctions(bank, lat, make_observables(bank.flat_states, 12, seed=3))


def linear_bank(Ac, x0, n_samples, Ts):
    Ad = expm(Ac * Ts)
    states = np.empty((len(x0), n_samples, 3))
    states[:, 0] = x0
    for k in range(1, n_samples):
        states[:, k] = states[:, k - 1] @ Ad.T
    return TrajectoryBank(states, Ts, (n_samples - 1) * Ts, np.zeros(4))


# energy set and bank


def test_energy_set_reference_point(vp):
    es = generate_energy_set(500e3, vp, 21, 21)
    assert es.states.shape == (441, 3)
    assert np.sqrt(2 * 500e3 / 1300) == pytest.approx(27.7350, abs=1e-4)
    # theta = 0 and phi = 0 sits in the middle of the first theta block
    np.testing.assert_allclose(es.states[10], [np.sqrt(2 * 500e3 / 1300), 0, 0], atol=1e-12)


def test_energy_set_membership(vp):
    es = generate_energy_set(500e3, vp, 21, 21)
    rel = np.abs(kinetic_energy(es.states, vp) - 500e3) / 500e3
    assert rel.max() <= 1e-9
    assert len({tuple(s) for s in np.round(es.states, 9)}) == 441


def test_energy_set_rejects_nonpositive(vp):
    with pytest.raises(ValueError):
        generate_energy_set(0.0, vp)


def test_bank_shape_and_first_sample(small_bank, vp):
    es = generate_energy_set(5e4, vp, 5, 4)
    assert small_bank.states.shape == (20, 21, 3)
    assert np.array_equal(small_bank.states[:, 0], es.states)


def test_bank_non_recurrence(small_bank, vp):
    e = kinetic_energy(small_bank.states, vp)
    assert np.all(e[:, 1:] < 5e4)


def test_bank_rejects_non_multiple_horizon(vp, tp):
    es = generate_energy_set(5e4, vp, 3, 3)
    with pytest.raises(ValueError, match="multiple"):
        build_trajectory_bank(es, vp, tp, T=0.105, Ts=0.01)


@given(n=st.integers(1, 200), seed=st.integers(0, 1000))
def test_ellipsoid_samples_inside(n, seed):
    axes = (27.7, 27.7, 22.4)
    x = sample_in_ellipsoid(n, axes, np.random.default_rng(seed))
    assert np.all(np.sum((x / axes) ** 2, axis=1) <= 1 + 1e-12)


# DMD


def test_dmd_recovers_linear_eigenvalues(rng):
    Ac = np.array([[-0.5, 2.0, 0.0], [-2.0, -0.5, 0.0], [0.0, 0.0, -1.2]])
    bank = linear_bank(Ac, rng.standard_normal((10, 3)), 30, 0.01)
    lam = dmd_eigenvalues(bank)
    true = np.linalg.eigvals(Ac)
    for l in true:
        assert np.min(np.abs(lam - l)) <= 1e-6
    # conjugate pairs
    assert np.allclose(np.sort_complex(lam), np.sort_complex(np.conj(lam)))


def test_dmd_row_duplication_invariance(small_bank):
    a = dmd_eigenvalues(small_bank)
    b = dmd_eigenvalues(np.concatenate([small_bank.states, small_bank.states]), Ts=small_bank.Ts)
    np.testing.assert_allclose(np.sort_complex(a), np.sort_complex(b), atol=1e-10)


def test_dmd_rank_collapse():
    states = np.zeros((3, 10, 3))
    states[:, :, 0] = np.linspace(1, 2, 10)
    with pytest.raises(RankCollapse):
        dmd_eigenvalues(states, Ts=0.01)
    with pytest.raises(ValueError):
        dmd_eigenvalues(states)


# lattice


def test_lattice_examples():
    assert build_eigenvalue_lattice([-1.0], 3).values.tolist() == [-1, -2, -3]
    lat = build_eigenvalue_lattice([-1 + 2j, -1 - 2j], 2)
    assert lat.values.tolist() == [-1 - 2j, -1 + 2j, -2, -2 - 4j, -2 + 4j]


@given(re=st.lists(st.floats(-3, 0.3), min_size=1, max_size=3), im=st.floats(0.1, 5), order=st.integers(1, 4))
def test_lattice_conjugate_closed_and_capped(re, im, order):
    base = [complex(r, 0) for r in re[:-1]] + [complex(re[-1], im), complex(re[-1], -im)]
    try:
        lat = build_eigenvalue_lattice(base, order, cap=0.5)
    except ValueError as exc:
        assert "empty" in str(exc)
        return
    vals = lat.values
    assert np.all(vals.real <= 0.5)
    for v in vals:
        assert np.any(vals == np.conj(v))
    assert len(vals) <= MAX_LATTICE_POINTS


def test_lattice_limits():
    with pytest.raises(ValueError, match="empty"):
        build_eigenvalue_lattice([1.0], 2)
    with pytest.raises(ValueError, match="ceiling"):
        build_eigenvalue_lattice(-np.arange(1, 13) * (1 + 0.01j) ** np.arange(12), 5, max_points=50)
    with pytest.raises(ValueError):
        build_eigenvalue_lattice([-1.0], 0)


# observables


def test_tps_values():
    c = np.zeros(3)
    assert tps(c, c) == 0.0
    assert tps(np.array([1.0, 0, 0]), c) == 0.0
    assert tps(np.array([np.e, 0, 0]), c) == pytest.approx(np.e**2, rel=1e-14)


def test_tps_broadcast():
    centers = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    out = tps(np.zeros((4, 5, 3)), centers)
    assert out.shape == (4, 5, 2) and np.all(out == 0)


def test_observables_constant_bank():
    obs = make_observables(np.tile([1.0, 2.0, 3.0], (50, 1)), 7, seed=1)
    assert np.all(obs.centers == [1.0, 2.0, 3.0])


def test_observables_deterministic_and_unbiased(rng):
    states = rng.normal([3, -1, 2], [1, 2, 0.5], (1000, 3))
    a = make_observables(states, 10, seed=4)
    assert np.array_equal(a.centers, make_observables(states, 10, seed=4).centers)
    big = make_observables(states, 100_000, seed=5)
    mu, sigma = states.mean(axis=0), states.std(axis=0)
    assert np.all(np.abs(big.centers.mean(axis=0) - mu) <= 3 * sigma / np.sqrt(1e5))


def test_observables_reject_empty():
    with pytest.raises(ValueError):
        make_observables(np.zeros((3, 3)), 0)
    with pytest.raises(ValueError):
        ObservableSet(np.zeros((0, 3)))


# eigenfunction values


def test_psi_at_start_is_g(small_bank):
    g = small_bank.observables(small_bank.initial_states)
    psi0 = small_bank.psi(np.arange(small_bank.n_traj) * small_bank.n_samples)
    n_lam = len(small_bank.eigenvalues)
    np.testing.assert_array_equal(psi0, np.tile(g, (1, n_lam)))


def test_psi_step_ratio(small_bank):
    lam = small_bank.lifted_eigenvalues
    idx = np.arange(small_bank.n_traj * small_bank.n_samples).reshape(small_bank.n_traj, -1)
    a = small_bank.psi(idx[:, :-1])
    b = small_bank.psi(idx[:, 1:])
    ratio = np.exp(lam * small_bank.Ts)
    nz = np.abs(a) > 0
    rel = np.abs(b[nz] - a[nz] * np.broadcast_to(ratio, a.shape)[nz]) / np.abs(a[nz])
    assert rel.max() <= 1e-12


def test_zero_eigenvalue_is_constant(small_bank):
    bank = TrajectoryBank(small_bank.states, small_bank.Ts, small_bank.T, small_bank.inputs)
    evaluate_eigenfunctions(bank, EigenvalueLattice(np.zeros(1), np.zeros(1, complex), 1, 0.5), small_bank.observables)
    p = bank.psi(np.arange(bank.n_samples))
    assert np.all(p == p[0])


def test_overflow_guard(small_bank):
    bank = TrajectoryBank(small_bank.states, small_bank.Ts, small_bank.T, small_bank.inputs)
    lat = EigenvalueLattice(np.array([4000.0]), np.array([4000.0 + 0j]), 1, 1e4)
    with pytest.raises(OverflowError):
        evaluate_eigenfunctions(bank, lat, small_bank.observables)


# nearest-neighbour lift


def test_nn_lift_on_bank_points_is_identity(small_bank):
    flat = small_bank.flat_states
    idx = np.arange(len(flat))
    assert np.array_equal(small_bank.nearest_index(flat), idx)
    assert np.array_equal(nn_lift(flat[17], small_bank), small_bank.psi(17))


def test_nn_lift_near_point(small_bank):
    x = small_bank.flat_states[40] + 1e-6
    assert small_bank.nearest_index(x) == 40


def test_nn_tie_goes_to_lower_index():
    states = np.array([[[0.0, 0, 0], [2.0, 0, 0]], [[-2.0, 0, 0], [0.0, 2, 0]]])
    bank = TrajectoryBank(states, 0.01, 0.01, np.zeros(4))
    assert bank.nearest_index(np.array([1.0, 0, 0])) == 0
    assert bank.nearest_index(np.array([-1.0, 0, 0])) == 0
    assert bank.nearest_index(np.array([1.0, 1.0, 0])) == 0  # equidistant to 0, 1 and 3
    assert bank.nearest_index(np.array([1.0, 2.0, 0])) == 3


@given(q=st.tuples(*[st.integers(-3, 3)] * 3))
def test_nn_matches_brute_force_with_ties(q):
    grid = np.array(np.meshgrid(*[np.arange(-2, 3, 2.0)] * 3, indexing="ij")).reshape(3, -1).T
    bank = TrajectoryBank(grid.reshape(3, 9, 3), 0.01, 0.08, np.zeros(4))
    x = np.array(q, dtype=float)
    d = np.sum((grid - x) ** 2, axis=1)
    assert bank.nearest_index(x) == np.flatnonzero(d == d.min())[0]


# output fit and predictor


def test_fit_zero_target(small_bank):
    C = fit_output_matrix(small_bank, target=np.zeros(small_bank.states.shape))
    assert np.all(C == 0)
    assert bank_output_residual(small_bank, C, np.zeros(small_bank.states.shape)) == 0.0


def test_kron_matches_dense(small_bank):
    a = fit_output_matrix(small_bank, rcond=RCOND, method="kron")
    b = fit_output_matrix(small_bank, rcond=RCOND, method="dense")
    ra, rb = bank_output_residual(small_bank, a), bank_output_residual(small_bank, b)
    # the two cut different spectra, so compare against the target energy
    assert abs(ra - rb) <= 1e-6 * np.sum(small_bank.states**2)


def test_interpolation_regime(vp, tp):
    es = generate_energy_set(5e4, vp, 2, 2)
    bank = build_trajectory_bank(es, vp, tp, T=0.05, Ts=0.01)
    lat = build_eigenvalue_lattice(dmd_eigenvalues(bank), 2)
    evaluate_eigenfunctions(bank, lat, make_observables(bank.flat_states, 10, seed=0))
    assert bank.n_lift >= bank.n_traj * bank.n_samples
    C = fit_output_matrix(bank, rcond=RCOND)
    assert bank_output_residual(bank, C) <= 1e-6


def test_residual_invariant_under_reordering(small_bank):
    perm = np.random.default_rng(0).permutation(small_bank.n_traj)
    other = TrajectoryBank(small_bank.states[perm], small_bank.Ts, small_bank.T, small_bank.inputs)
    evaluate_eigenfunctions(other, EigenvalueLattice(None, small_bank.eigenvalues, 2, 0.5), small_bank.observables)
    r1 = bank_output_residual(small_bank, fit_output_matrix(small_bank))
    r2 = bank_output_residual(other, fit_output_matrix(other))
    assert r1 == pytest.approx(r2, rel=1e-8)


def test_output_is_real_with_conjugate_closure(rng):
    Ac = np.array([[-0.5, 2.0, 0.0], [-2.0, -0.5, 0.0], [0.0, 0.0, -1.2]])
    bank = linear_bank(Ac, rng.standard_normal((12, 3)) * 3, 51, 0.01)
    lat = build_eigenvalue_lattice(dmd_eigenvalues(bank), 2)
    evaluate_eigenfunctions(bank, lat, make_observables(bank.flat_states, 20, seed=0))
    C = fit_output_matrix(bank)
    z = bank.psi(np.arange(60))
    assert np.max(np.abs((z @ C.T).imag)) <= 1e-9 * max(1.0, np.max(np.abs(z @ C.T)))


def test_predictor_reproduces_bank_trajectory(small_bank):
    C = fit_output_matrix(small_bank)
    model = build_predictor(small_bank, C)
    j = 7
    pred = model.predict(small_bank.states[j, 0], n_steps=small_bank.n_samples - 1)
    stored = (small_bank.psi(j * small_bank.n_samples + np.arange(small_bank.n_samples)) @ C.T).real
    np.testing.assert_allclose(pred, stored, rtol=1e-10, atol=1e-10)


def test_predictor_contracts_for_stable_lattice(small_bank):
    assert np.all(small_bank.eigenvalues.real < 0)
    model = build_predictor(small_bank, fit_output_matrix(small_bank))
    z = model.lift(small_bank.states[3, 0])
    norms = []
    for _ in range(30):
        norms.append(np.linalg.norm(z))
        z = z * model.step_multiplier()
    assert np.all(np.diff(norms) <= 0)


def test_predictor_rejects_bad_C(small_bank):
    with pytest.raises(ValueError):
        build_predictor(small_bank, np.zeros((3, 5)))


def test_linear_system_out_of_sample(rng):
    Ac = np.array([[-0.5, 2.0, 0.0], [-2.0, -0.5, 0.0], [0.0, 0.0, -1.2]])
    bank = linear_bank(Ac, sample_in_ellipsoid(200, (3, 3, 3), rng), 51, 0.01)
    lat = build_eigenvalue_lattice(dmd_eigenvalues(bank), 2)
    evaluate_eigenfunctions(bank, lat, make_observables(bank.flat_states, 30, seed=0))
    model = build_predictor(bank, fit_output_matrix(bank))
    x0 = sample_in_ellipsoid(50, (2.5, 2.5, 2.5), rng)
    Ad = expm(Ac * 0.01)
    truth = [x0]
    for _ in range(50):
        truth.append(truth[-1] @ Ad.T)
    truth = np.array(truth)
    pred = model.predict(x0, n_steps=50)
    err = 100 * np.sqrt(np.sum((pred - truth) ** 2, axis=(0, 2)) / np.sum(truth**2, axis=(0, 2)))
    assert np.mean(err) < 25.0


def test_bank_roundtrip(tmp_path, small_bank):
    s, p = tmp_path / "b_states.csv", tmp_path / "b_psi.txt"
    small_bank.meta["seed"] = "3"
    save_bank(s, p, small_bank)
    assert s.read_text().splitlines()[0] == "traj_id,k,vx,vy,psidot"
    back = load_bank(s, p)
    assert np.array_equal(back.states, small_bank.states)
    assert np.array_equal(back.eigenvalues, small_bank.eigenvalues)
    assert np.array_equal(back.g0, small_bank.g0)
    assert np.array_equal(back.observables.centers, small_bank.observables.centers)
    assert back.Ts == small_bank.Ts and back.T == small_bank.T and back.meta["seed"] == "3"
    assert np.array_equal(back.psi(np.arange(50)), small_bank.psi(np.arange(50)))


def test_pipeline_defaults(vp, tp):
    bank, model, es = eigen_pipeline(vp, tp, n_theta=6, n_phi=5, max_total_order=2, n_centers=8)
    assert bank.states.shape == (30, 101, 3)
    assert model.n_lift == bank.n_lift and model.Ts == 0.01
    assert energy_semi_axes(500e3, vp)[0] == pytest.approx(np.sqrt(2 * 500e3 / 1300))
