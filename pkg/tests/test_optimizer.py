import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_force_assignment, random_scene
from inhomfind import (
    CandidateParams,
    ConfigError,
    InvariantError,
    MeasurementPair,
    Scatterer,
    Scene,
    SearchBox,
    SearchConfig,
    UnderdeterminedError,
    estimate_order,
    global_search,
    local_refine,
    match_scatterers,
    order_scan,
    phi,
    reduce,
    simulate,
)
from inhomfind.files import ArraySpec, GridSpec, generate_pairs
from inhomfind.objective import ReducedData

FAST = SearchConfig(popsize=10, generations=100, multistarts=2)


@pytest.fixture(scope="module")
def pairs64():
    src = GridSpec((-2, 2), (-2, -1), 4, 2)
    rec = GridSpec((-2, 2), (1, 2), 4, 2)
    pairs = generate_pairs(ArraySpec(src, rec))
    assert len(pairs) == 64
    return pairs


@pytest.fixture(scope="module")
def single(pairs64):
    scene = Scene((Scatterer((0.3, -0.2, -2), 0.1, 0.01),))
    return scene, reduce(simulate(scene, pairs64, 5.0))


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def test_infeasible_box():
    with pytest.raises(ConfigError):
        SearchBox(depth=(3.0, 2.0))
    with pytest.raises(ConfigError):
        SearchBox(depth=(0.0, 2.0))
    with pytest.raises(ConfigError):
        SearchBox(x1=(1.0, -1.0))


def test_config_validation():
    with pytest.raises(ConfigError):
        SearchConfig(M=0)
    with pytest.raises(ConfigError):
        SearchConfig(M=16)
    with pytest.raises(ConfigError):
        SearchConfig(multistarts=0)
    with pytest.raises(ConfigError):
        SearchConfig(grad_tol=0.0)


# --------------------------------------------------------------------------
# local stage
# --------------------------------------------------------------------------


def test_local_refine_at_truth(single):
    scene, r = single
    start = CandidateParams(scene.centers, scene.intensities)
    res = local_refine(start, r, SearchConfig())
    assert res.converged
    assert res.phi_value <= phi(start, r)
    assert res.phi_value < 1e-20 * r.norm2


def test_local_refine_from_perturbed_start(single):
    scene, r = single
    start = CandidateParams(scene.centers + 0.1, [0.008])
    res = local_refine(start, r, SearchConfig())
    assert np.max(np.abs(res.params.positions - scene.centers)) < 1e-8
    assert res.params.intensities[0] == pytest.approx(0.01, rel=1e-8)


def test_local_refine_monotone_from_far(single):
    _, r = single
    start = CandidateParams([(-1.8, 1.7, -3.9)], [0.05])
    res = local_refine(start, r, SearchConfig())
    assert res.phi_value <= phi(start, r)
    assert SearchBox().contains(res.params.positions)


def test_local_refine_clamps_to_box(pairs64):
    scene = Scene((Scatterer((0.3, -0.2, -5), 0.1, 0.01),))
    r = reduce(simulate(scene, pairs64, 5.0))
    box = SearchBox(depth=(0.5, 3.0))
    res = local_refine(CandidateParams([(0, 0, -2.9)], [0.01]), r, SearchConfig(box=box))
    assert box.contains(res.params.positions)


# --------------------------------------------------------------------------
# global stage
# --------------------------------------------------------------------------


def test_global_search_single_scatterer(single):
    scene, r = single
    res = global_search(r, SearchConfig())
    assert np.max(np.abs(res.params.positions - scene.centers)) < 1e-6
    assert res.params.intensities[0] == pytest.approx(0.01, rel=1e-6)
    assert res.phi_value < 1e-18
    assert res.phi_value == pytest.approx(phi(res.params, r), rel=1e-12)
    assert len(res.history) == SearchConfig().multistarts


def test_global_search_zero_data(pairs64):
    r = ReducedData(5.0, pairs64, np.zeros(64, complex))
    for M in (1, 3):
        res = global_search(r, FAST.with_M(M))
        assert np.all(res.params.intensities == 0)
        assert res.phi_value == 0
        assert res.nothing_found


def test_global_search_deterministic(pairs4):
    scene = random_scene(np.random.default_rng(1), 2)
    r = reduce(simulate(scene, pairs4, 5.0))
    a = global_search(r, FAST.with_M(2))
    b = global_search(r, FAST.with_M(2))
    np.testing.assert_array_equal(a.params.positions, b.params.positions)
    np.testing.assert_array_equal(a.params.intensities, b.params.intensities)
    assert a.phi_value == b.phi_value and a.evaluations == b.evaluations


def test_global_search_two_scatterers(pairs4):
    scene = random_scene(np.random.default_rng(2), 2)
    r = reduce(simulate(scene, pairs4, 5.0))
    res = global_search(r, SearchConfig(M=2))
    assert res.phi_value == pytest.approx(phi(res.params, r), rel=1e-12)
    for m in match_scatterers(res.params, scene):
        assert m.position_error < 1e-4


def test_global_search_seed_is_kept(pairs4):
    scene = random_scene(np.random.default_rng(3), 2)
    r = reduce(simulate(scene, pairs4, 5.0))
    cfg = SearchConfig(M=2, popsize=5, generations=1, multistarts=1)
    res = global_search(r, cfg, seeds=[scene.centers])
    assert res.phi_value < 1e-20 * r.norm2


def test_global_search_errors(pairs64):
    with pytest.raises(InvariantError):
        global_search(ReducedData(5.0, [], np.zeros(0, complex)), FAST)
    one = [MeasurementPair((1, 0, 0), (0, 0, 0))]
    with pytest.raises(UnderdeterminedError):
        global_search(ReducedData(5.0, one, np.ones(1, complex)), FAST.with_M(2))


# --------------------------------------------------------------------------
# model order
# --------------------------------------------------------------------------


def test_order_zero_data(pairs64):
    r = ReducedData(5.0, pairs64, np.zeros(64, complex))
    scan = order_scan(r, FAST, M_max=4)
    assert scan.selected == 1
    assert np.all(scan.best.params.intensities == 0)


def test_order_two_scatterers(pairs4):
    scene = random_scene(np.random.default_rng(4), 2)
    r = reduce(simulate(scene, pairs4, 5.0))
    scan = order_scan(r, SearchConfig(), M_max=4)
    assert scan.selected == 2
    assert scan.phis[1] < 1e-6 * scan.phis[0]
    assert all(b <= a for a, b in zip(scan.phis, scan.phis[1:]))


def test_order_invalid_arguments(single):
    _, r = single
    for bad in (0, 16, 2.5):
        with pytest.raises(ConfigError):
            estimate_order(r, FAST, M_max=bad)
    with pytest.raises(ConfigError):
        estimate_order(r, FAST, M_max=2, drop_threshold=1.0)


# --------------------------------------------------------------------------
# matching
# --------------------------------------------------------------------------


def _truth():
    return Scene(
        (
            Scatterer((0.5, 0.0, -2.0), 0.1, 0.01),
            Scatterer((-0.5, 0.2, -1.5), 0.1, 0.02),
            Scatterer((0.0, -1.0, -2.5), 0.1, 0.015),
        )
    )


def test_match_permuted_labels():
    truth = _truth()
    perm = [2, 0, 1]
    est = CandidateParams(truth.centers[perm], truth.intensities[perm])
    matches = match_scatterers(est, truth)
    assert [m.truth_index for m in matches] == [0, 1, 2]
    assert [m.estimate_index for m in matches] == [1, 2, 0]
    assert all(m.position_error == 0 and m.intensity_error == 0 for m in matches)


def test_match_uniform_offset():
    truth = _truth()
    est = CandidateParams(truth.centers + [0.01, 0, 0], truth.intensities * 1.1)
    for m in match_scatterers(est, truth):
        assert m.position_error == pytest.approx(0.01, rel=1e-9)
        assert m.intensity_error == pytest.approx(0.1, rel=1e-9)


def test_match_cardinality():
    with pytest.raises(InvariantError):
        match_scatterers(CandidateParams([(0, 0, -1)], [1.0]), _truth())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_match_minimizes_total_error(seed, M):
    rng = np.random.default_rng(seed)
    truth = random_scene(rng, M, min_sep=0.0, radius=0.0)
    est = truth.centers[rng.permutation(M)] + rng.normal(scale=0.5, size=(M, 3))
    est[:, 2] = -np.abs(est[:, 2]) - 0.1
    matches = match_scatterers(CandidateParams(est, np.ones(M)), truth)
    total = sum(m.position_error for m in matches)
    best, _ = brute_force_assignment(est, truth.centers)
    assert total == pytest.approx(best, rel=1e-12)


def test_match_near_symmetric_pair():
    truth = Scene((Scatterer((-0.5, 0, -2), 0.0, 0.01), Scatterer((0.5, 0, -2), 0.0, 0.01)))
    est = np.array([[0.02, 0, -2], [-0.02, 0, -2]])
    matches = match_scatterers(CandidateParams(est, [0.01, 0.01]), truth)
    total = sum(m.position_error for m in matches)
    best, perm = brute_force_assignment(est, truth.centers)
    assert total == pytest.approx(best)
    assert [m.estimate_index for m in matches] == [1, 0] == list(perm)
