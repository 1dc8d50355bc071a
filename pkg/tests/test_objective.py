
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import grid_pairs, phi_ref, random_scene
from inhomfind import (
    CandidateParams,
    Dataset,
    InvariantError,
    MeasurementPair,
    Scatterer,
    Scene,
    UnderdeterminedError,
    green,
    pair_kernel,
    phi,
    phi_gradient,
    project_intensities,
    reduce,
    simulate,
)
from inhomfind.objective import ReducedData, project_batch, screen_batch


def _reduced(scene, pairs, k=5.0):
    return reduce(simulate(scene, pairs, k))


@pytest.fixture(scope="module")
def two_scatterers():
    scene = Scene((Scatterer((0.4, -0.3, -1.8), 0.1, 0.012), Scatterer((-0.6, 0.5, -2.4), 0.1, 0.007)))
    return scene, _reduced(scene, grid_pairs(4))


# --------------------------------------------------------------------------
# reduce
# --------------------------------------------------------------------------


def test_reduce_empty_scene_is_zero(pairs4):
    r = reduce(simulate(Scene(), pairs4, 3.0))
    assert np.all(r.f == 0)


def test_reduce_point_born_is_kernel_sum(pairs4, two_scatterers):
    scene, r = two_scatterers
    expected = [
        sum(pair_kernel(p, s.center, 5.0) * s.intensity for s in scene.scatterers) for p in pairs4
    ]
    np.testing.assert_allclose(r.f, expected, rtol=1e-9)


def test_reduce_external_value():
    pair = MeasurementPair((1, 0, 0), (0, 0, 0))
    u = green(pair.receiver, pair.source, 2.0) + 4 * (0.003 + 0j)
    r = reduce(Dataset(2.0, [pair], [u]))
    assert r.f[0] == pytest.approx(0.003, rel=1e-12)


def test_reduced_data_length_check(pairs4):
    with pytest.raises(InvariantError):
        ReducedData(1.0, pairs4, np.zeros(3))


# --------------------------------------------------------------------------
# phi
# --------------------------------------------------------------------------


def test_phi_zero_at_truth(two_scatterers):
    scene, r = two_scatterers
    value = phi(CandidateParams(scene.centers, scene.intensities), r)
    assert value < 1e-20 * r.norm2


def test_phi_zero_intensities_is_data_energy(two_scatterers):
    _, r = two_scatterers
    value = phi(CandidateParams([(0, 0, -1), (1, 1, -2)], [0, 0]), r)
    assert value == pytest.approx(np.sum(np.abs(r.f) ** 2), rel=1e-14)


def test_phi_single_pair_cancels():
    pair = MeasurementPair((1, 0, 0), (-1, 0.5, 0))
    z, v = (0.2, 0.1, -1.3), 0.02
    r = ReducedData(4.0, [pair], np.array([pair_kernel(pair, z, 4.0) * v]))
    assert phi(CandidateParams([z], [v]), r) <= 1e-28 * r.norm2


def test_candidate_on_surface_rejected():
    pair = MeasurementPair((1, 0, 0), (-1, 0.5, 0))
    r = ReducedData(4.0, [pair], np.array([0.1 + 0j]))
    with pytest.raises(InvariantError):
        phi(CandidateParams([(1, 0, 0)], [1.0]), r)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.floats(0.5, 8))
def test_phi_matches_double_loop(seed, M, k):
    rng = np.random.default_rng(seed)
    pairs = grid_pairs(3)
    f = rng.normal(size=len(pairs)) + 1j * rng.normal(size=len(pairs))
    f *= 1e-3
    r = ReducedData(k, pairs, f)
    z = np.column_stack([rng.uniform(-2, 2, M), rng.uniform(-2, 2, M), -rng.uniform(0.5, 3, M)])
    v = rng.normal(size=M) * 0.05
    value = phi(CandidateParams(z, v), r)
    assert value >= 0
    assert value == pytest.approx(phi_ref(z, v, pairs, f, k), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_phi_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    pairs = grid_pairs(3)
    r = _reduced(random_scene(rng, 3), pairs)
    z = np.column_stack([rng.uniform(-2, 2, 4), rng.uniform(-2, 2, 4), -rng.uniform(0.5, 3, 4)])
    v = rng.normal(size=4) * 0.01
    perm = rng.permutation(4)
    a = phi(CandidateParams(z, v), r)
    b = phi(CandidateParams(z[perm], v[perm]), r)
    assert b == pytest.approx(a, rel=1e-13)


def test_candidate_vector_round_trip():
    p = CandidateParams([(0.1, 0.2, -1), (0.3, -0.4, -2)], [0.5, -0.25])
    q = CandidateParams.from_vector(p.as_vector())
    np.testing.assert_array_equal(q.positions, p.positions)
    np.testing.assert_array_equal(q.intensities, p.intensities)
    with pytest.raises(InvariantError):
        CandidateParams([(0, 0, 0.5)], [1.0])


# --------------------------------------------------------------------------
# gradient
# --------------------------------------------------------------------------


def _central_difference(params, r, h=1e-6):
    x0 = params.as_vector()
    out = np.empty_like(x0)
    for i in range(len(x0)):
        e = np.zeros_like(x0)
        e[i] = h
        out[i] = (
            phi(CandidateParams.from_vector(x0 + e), r) - phi(CandidateParams.from_vector(x0 - e), r)
        ) / (2 * h)
    return out


def test_gradient_matches_finite_differences(rng):
    pairs = grid_pairs(3)
    for _ in range(10):
        r = _reduced(random_scene(rng, 2), pairs)
        z = np.column_stack([rng.uniform(-1.5, 1.5, 2), rng.uniform(-1.5, 1.5, 2), -rng.uniform(1, 3, 2)])
        params = CandidateParams(z, rng.uniform(0.005, 0.02, 2))
        g = phi_gradient(params, r)
        fd = _central_difference(params, r)
        assert np.linalg.norm(g - fd) < 1e-6 * np.linalg.norm(fd)


def test_gradient_vanishes_at_truth(two_scatterers):
    scene, r = two_scatterers
    g = phi_gradient(CandidateParams(scene.centers, scene.intensities), r)
    assert np.linalg.norm(g) < 1e-10 * (1 + r.norm2)


def test_gradient_position_part_zero_without_intensity(two_scatterers):
    _, r = two_scatterers
    g = phi_gradient(CandidateParams([(0.1, 0.2, -1), (0.5, -0.5, -2)], [0.0, 0.0]), r)
    assert np.all(g[:6] == 0)
    assert np.any(g[6:] != 0)


# --------------------------------------------------------------------------
# projection
# --------------------------------------------------------------------------


def test_projection_exact_at_truth(two_scatterers):
    scene, r = two_scatterers
    v, value = project_intensities(scene.centers, r)
    np.testing.assert_allclose(v, scene.intensities, rtol=1e-10)
    assert value < 1e-20 * r.norm2


def test_projection_zero_data(pairs4):
    r = ReducedData(5.0, pairs4, np.zeros(len(pairs4), complex))
    v, value = project_intensities([(0, 0, -1), (1, 0, -2)], r)
    assert np.all(v == 0) and value == 0


def test_projection_worse_off_truth(two_scatterers):
    scene, r = two_scatterers
    _, at_truth = project_intensities(scene.centers, r)
    _, off = project_intensities(scene.centers + 0.05, r)
    assert off > 0 and off > at_truth


def test_projection_is_optimal(rng, two_scatterers):
    _, r = two_scatterers
    z = np.array([[0.2, -0.1, -1.5], [-0.3, 0.8, -2.0]])
    v, value = project_intensities(z, r)
    assert value == pytest.approx(phi(CandidateParams(z, v), r), rel=1e-10)
    for _ in range(100):
        dv = rng.normal(size=2) * np.abs(v) * rng.choice([1e-6, 1e-3, 1e-1])
        assert value <= phi(CandidateParams(z, v + dv), r)


def test_projection_degenerate_positions(two_scatterers):
    # two identical candidates: minimum-norm split of the single intensity
    _, r = two_scatterers
    z1 = np.array([0.4, -0.3, -1.8])
    v1, p1 = project_intensities([z1], r)
    v2, p2 = project_intensities([z1, z1], r)
    assert v2[0] == pytest.approx(v2[1], rel=1e-8)
    assert v2.sum() == pytest.approx(v1[0], rel=1e-8)
    assert p2 == pytest.approx(p1, rel=1e-8)


def test_projection_underdetermined():
    pair = MeasurementPair((1, 0, 0), (-1, 0.5, 0))
    r = ReducedData(4.0, [pair], np.array([0.1 + 0j]))
    with pytest.raises(UnderdeterminedError):
        project_intensities([(0, 0, -1), (1, 1, -1)], r)


def test_batch_paths_agree(rng, two_scatterers):
    _, r = two_scatterers
    z = np.stack(
        [
            np.column_stack([rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2), -rng.uniform(0.5, 4, 2)])
            for _ in range(20)
        ]
    )
    _, exact = project_batch(z, r)
    screened = screen_batch(z, r)
    scalar = [project_intensities(zi, r)[1] for zi in z]
    np.testing.assert_allclose(exact, scalar, rtol=1e-10, atol=1e-14 * r.norm2)
    np.testing.assert_allclose(screened, scalar, rtol=1e-6, atol=1e-12 * r.norm2)
