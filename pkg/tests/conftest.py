import cmath
import math
from itertools import permutations

import numpy as np
import pytest

from inhomfind import Scatterer, Scene
from inhomfind.files import ArraySpec, GridSpec, generate_pairs


def grid_pairs(n, extent=2.0):
    """All ordered pairs of an n x n surface grid with itself, minus coincident ones."""
    grid = GridSpec((-extent, extent), (-extent, extent), n, n)
    return generate_pairs(ArraySpec(grid, grid))


def random_scene(rng, M, depth=(1.5, 3.0), lateral=1.5, min_sep=1.0, v=(0.005, 0.02), radius=0.1):
    while True:
        c = np.column_stack(
            [
                rng.uniform(-lateral, lateral, M),
                rng.uniform(-lateral, lateral, M),
                -rng.uniform(*depth, M),
            ]
        )
        d = np.linalg.norm(c[:, None] - c[None], axis=-1) + 10 * np.eye(M)
        if M == 1 or d.min() >= min_sep:
            break
    vals = rng.uniform(*v, M)
    return Scene(tuple(Scatterer(tuple(ci), radius, vi) for ci, vi in zip(c, vals)))


# independent scalar reference evaluators -----------------------------------


def green_ref(a, b, k):
    r = math.dist(a, b)
    return cmath.exp(1j * k * r) / (4 * math.pi * r)


def phi_ref(positions, intensities, pairs, f, k):
    """Explicit double loop over pairs and scatterers."""
    total = 0.0
    for pair, fj in zip(pairs, f):
        model = 0j
        for z, v in zip(positions, intensities):
            model += green_ref(pair.receiver, z, k) * green_ref(pair.source, z, k) * v
        total += abs(fj - model) ** 2
    return total


def brute_force_assignment(est_positions, true_positions):
    M = len(true_positions)
    best = None
    for perm in permutations(range(M)):
        total = sum(math.dist(est_positions[i], true_positions[j]) for i, j in enumerate(perm))
        if best is None or total < best[0]:
            best = (total, perm)
    return best


@pytest.fixture(scope="session")
def pairs4():
    return grid_pairs(4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
