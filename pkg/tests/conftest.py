import numpy as np
import pytest

import squasplat as sq


def random_superquadric(rng, num_classes=4, center_span=2.0, scale_range=(0.4, 1.2),
                        eps_range=(0.3, 1.7), sem_floor=0.0):
    """Random valid primitive; sem_floor keeps class weights away from the
    clip boundary for finite-difference tests."""
    sem = rng.dirichlet(np.ones(num_classes))
    if sem_floor:
        sem = (sem + sem_floor) / (1.0 + num_classes * sem_floor)
    return sq.normalize(sq.Superquadric(
        center=rng.uniform(-center_span, center_span, 3),
        rotation=rng.normal(size=4),
        scale=rng.uniform(*scale_range, 3),
        eps=rng.uniform(*eps_range, 2),
        sigma=rng.uniform(0.25, 0.9),
        sem=sem))


def random_scene(rng, n, **kw):
    return [random_superquadric(rng, **kw) for _ in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    return sq.GridSpec([-3.0, -3.0, -3.0], [3.0, 3.0, 3.0], (16, 16, 16))


@pytest.fixture
def cfg():
    return sq.FieldConfig()
