import numpy as np
import pytest
from numpy.testing import assert_allclose

import flowfilt.integrate as integrate
from flowfilt import (
    DivergenceError,
    GaussianPrior,
    LambdaGrid,
    LinearMeasurement,
    NoiseStream,
    closed_form_posterior,
    preset,
    propagate_ensemble,
    propagate_particle,
    sample_prior,
    use_backend,
)
from flowfilt.integrate import build_tables
from flowfilt.kernels import NUMBA_AVAILABLE


def test_noise_stream_is_pure():
    a = NoiseStream(42, 7).normals(10, 3)
    b = NoiseStream(42, 7).normals(10, 3)
    assert np.array_equal(a, b)
    c = NoiseStream(42, 8).normals(10, 3)
    assert not np.array_equal(a, c)
    d = NoiseStream(43, 7).normals(10, 3)
    assert not np.array_equal(a, d)


def test_noise_stream_replays_from_the_key():
    s = NoiseStream(5, 1)
    first = s.normals(4, 2)
    again = s.normals(4, 2)
    assert np.array_equal(first, again)
    # A longer block extends the shorter one; the prefix never moves.
    longer = NoiseStream(5, 1).normals(8, 2)
    assert np.array_equal(longer[:4], first)
    assert s.counter == 4


def test_single_euler_step_by_hand(canonical):
    prior, meas = canonical
    params = preset("fixed_q", prior, meas)
    grid = LambdaGrid.uniform(1)
    tables = build_tables(params, grid, prior, meas)
    noise = NoiseStream(99, 0)
    xi = NoiseStream(99, 0).normals(1, tables.m_max)[0]
    x0 = np.array([0.3])

    path = propagate_particle(x0, params, grid, noise, prior, meas)
    a, b, q = tables.a_nodes[0], tables.b_nodes[0], tables.q_factors[0]
    expected = (x0 + (a @ x0 + b) * 1.0) + (q @ xi) * 1.0
    assert np.array_equal(path.states[1], expected)
    assert np.array_equal(path.states[0], x0)


def test_path_shape_and_nodes(canonical):
    prior, meas = canonical
    params = preset("fixed_q", prior, meas)
    grid = LambdaGrid.uniform(25)
    path = propagate_particle(np.zeros(1), params, grid, NoiseStream(1, 0),
                              prior, meas)
    assert path.states.shape == (26, 1)
    assert_allclose(path.nodes, grid.nodes)
    assert np.array_equal(path.terminal, path.states[-1])


def test_ensemble_rows_replay_single_particle_runs(make_model):
    rng = np.random.default_rng(20)
    prior, meas = make_model(rng, 2, 2)
    params = preset("fixed_q", prior, meas)
    grid = LambdaGrid.uniform(50)
    ens = sample_prior(6, prior, seed=123)
    out = propagate_ensemble(ens, params, grid, prior, meas)
    tables = build_tables(params, grid, prior, meas)
    for i in range(6):
        solo = propagate_particle(ens.particles[i], params, grid,
                                  NoiseStream(123, i), prior, meas,
                                  tables=tables)
        assert np.array_equal(out.particles[i], solo.terminal)


def test_ensemble_output_depends_only_on_slot(make_model):
    rng = np.random.default_rng(21)
    prior, meas = make_model(rng, 2, 1)
    params = preset("fixed_q", prior, meas)
    grid = LambdaGrid.uniform(40)
    from flowfilt import ParticleEnsemble

    base = sample_prior(5, prior, seed=77)
    perm = np.array([3, 1, 4, 0, 2])
    shuffled = ParticleEnsemble(base.particles[perm], 0.0, 77)
    out_base = propagate_ensemble(base, params, grid, prior, meas)
    out_shuf = propagate_ensemble(shuffled, params, grid, prior, meas)
    tables = build_tables(params, grid, prior, meas)
    for slot in range(5):
        solo = propagate_particle(shuffled.particles[slot], params, grid,
                                  NoiseStream(77, slot), prior, meas,
                                  tables=tables)
        assert np.array_equal(out_shuf.particles[slot], solo.terminal)
    # Slot 1 holds the same state in both orderings, so it must agree.
    assert np.array_equal(out_base.particles[1], out_shuf.particles[1])


def test_chunked_and_unchunked_ensembles_agree(monkeypatch, canonical):
    prior, meas = canonical
    params = preset("fixed_q", prior, meas)
    grid = LambdaGrid.uniform(30)
    ens = sample_prior(17, prior, seed=5)
    full = propagate_ensemble(ens, params, grid, prior, meas)
    monkeypatch.setattr(integrate, "_CHUNK_BUDGET", 100)
    chunked = propagate_ensemble(ens, params, grid, prior, meas)
    assert np.array_equal(full.particles, chunked.particles)


@pytest.mark.skipif(not NUMBA_AVAILABLE, reason="numba backend unavailable")
def test_backends_agree_bitwise(make_model):
    rng = np.random.default_rng(22)
    for n, d in [(1, 1), (2, 2), (3, 1)]:
        prior, meas = make_model(rng, n, d)
        grid = LambdaGrid.uniform(60)
        ens = sample_prior(8, prior, seed=9)
        stoch = preset("fixed_q", prior, meas)
        with use_backend("numba"):
            em_nb = propagate_ensemble(ens, stoch, grid, prior, meas)
        with use_backend("numpy"):
            em_np = propagate_ensemble(ens, stoch, grid, prior, meas)
        assert np.array_equal(em_nb.particles, em_np.particles)

        rk_grid = LambdaGrid.uniform(60, scheme="rk4")
        smooth = preset("exact", prior, meas)
        with use_backend("numba"):
            rk_nb = propagate_ensemble(ens, smooth, rk_grid, prior, meas)
        with use_backend("numpy"):
            rk_np = propagate_ensemble(ens, smooth, rk_grid, prior, meas)
        assert np.array_equal(rk_nb.particles, rk_np.particles)


def test_rk4_rejects_stochastic_flow(canonical):
    prior, meas = canonical
    params = preset("fixed_q", prior, meas)
    grid = LambdaGrid.uniform(20, scheme="rk4")
    with pytest.raises(ValueError, match="diffusion-free"):
        build_tables(params, grid, prior, meas)


def test_rk4_exact_flow_reaches_posterior_mean(make_model):
    rng = np.random.default_rng(23)
    prior, meas = make_model(rng, 3, 2)
    params = preset("exact", prior, meas)
    grid = LambdaGrid.uniform(200, scheme="rk4")
    # Starting at the prior mean, the deterministic flow rides the mean
    # trajectory all the way to the posterior mean.
    path = propagate_particle(prior.x_prior, params, grid, NoiseStream(0, 0),
                              prior, meas)
    oracle_mean, _ = closed_form_posterior(1.0, prior, meas)
    assert_allclose(path.terminal, oracle_mean, atol=1e-10)


def test_divergence_reports_first_step_and_particle():
    prior = GaussianPrior(np.zeros(1), np.eye(1))
    meas = LinearMeasurement(np.eye(1), np.eye(1), np.array([1e15]))
    params = preset("fixed_q", prior, meas)
    grid = LambdaGrid.uniform(20)
    ens = sample_prior(4, prior, seed=3)
    with pytest.raises(DivergenceError) as info:
        propagate_ensemble(ens, params, grid, prior, meas)
    assert info.value.step == 0
    assert info.value.particle == 0


@pytest.mark.skipif(not NUMBA_AVAILABLE, reason="numba backend unavailable")
def test_divergence_slot_agrees_across_backends():
    prior = GaussianPrior(np.zeros(1), np.eye(1))
    meas = LinearMeasurement(np.eye(1), np.eye(1), np.array([1e15]))
    params = preset("fixed_q", prior, meas)
    grid = LambdaGrid.uniform(20)
    ens = sample_prior(4, prior, seed=3)
    found = {}
    for backend in ("numba", "numpy"):
        with use_backend(backend):
            with pytest.raises(DivergenceError) as info:
                propagate_ensemble(ens, params, grid, prior, meas)
            found[backend] = (info.value.step, info.value.particle)
    assert found["numba"] == found["numpy"]


def test_propagate_ensemble_requires_initial_lam_zero(canonical):
    prior, meas = canonical
    from flowfilt import ParticleEnsemble

    params = preset("fixed_q", prior, meas)
    grid = LambdaGrid.uniform(20)
    ens = ParticleEnsemble(np.zeros((3, 1)), lam=1.0, seed=0)
    with pytest.raises(ValueError, match="lam 0.0"):
        propagate_ensemble(ens, params, grid, prior, meas)


def test_propagate_particle_rejects_wrong_dimension(canonical):
    prior, meas = canonical
    params = preset("fixed_q", prior, meas)
    grid = LambdaGrid.uniform(20)
    with pytest.raises(ValueError, match="shape"):
        propagate_particle(np.zeros(2), params, grid, NoiseStream(0, 0),
                           prior, meas)
