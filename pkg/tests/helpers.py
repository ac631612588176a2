import numpy as np
from lmmridge import build_design


def make_design(
    n_groups=10,
    n_per_group=6,
    p=40,
    q=1,
    seed=0,
    random_intercept=True,
    ragged=False,
):
    """Random standardized design, optionally with ragged group sizes."""
    rng = np.random.default_rng(seed)
    if ragged:
        sizes = rng.integers(2, n_per_group + 1, size=n_groups)
    else:
        sizes = np.full(n_groups, n_per_group)
    n = int(sizes.sum())
    raw_x = rng.standard_normal((n, p))
    if random_intercept and q == 1:
        raw_zu = np.ones((n, 1))
    else:
        raw_zu = rng.standard_normal((n, q))
    gids = np.repeat(np.arange(n_groups), sizes)
    return build_design(raw_x, raw_zu, gids)


def simulate_response(design, beta, sigma, tau, seed=0):
    """Draw y = X beta + Z v + e on the standardized scale."""
    rng = np.random.default_rng(seed)
    ups = rng.standard_normal(design.z.shape[1]) * tau
    eps = rng.standard_normal(design.n_obs) * sigma
    return design.with_response(design.x @ beta + design.z @ ups + eps)
