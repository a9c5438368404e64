"""Construction of planted-signal selection instances on the unit sphere.

All vectors are unit-norm, so normalized-mode distances equal raw chord
distances and the geometry below is exact: queries live in a cap of chord
radius eps/2 around a center, the planted region embedding lies in the same
cap, and distractors sit at chord distance >= 10*eps from every query.
"""

from __future__ import annotations

import numpy as np


def _unit(v):
    return v / np.linalg.norm(v)


def _cap_point(rng, center, chord):
    """Random unit vector at chord distance about ``chord`` from ``center``."""
    d = center.shape[0]
    tangent = rng.standard_normal(d)
    tangent -= tangent @ center * center
    tangent = _unit(tangent) * chord * 0.98
    return _unit(center + tangent)


def make_planted_instance(rng, m=5, n=10, d=8, eps=0.01, with_planted=True):
    """Queries clustered within ``eps``; one in-cluster region (optional);
    the remaining regions at distance >= 10*eps from every query.

    Half the queries sit at the cluster center and half on its rim, which
    keeps the reference deviation large enough (relative to the cluster
    radius) that any in-cluster point verifies. Returns
    (queries, regions, planted_index); construction invariants are asserted
    so a failing test always points at the algorithm, not the data.
    """
    center = _unit(rng.standard_normal(d))
    radii = [0.0 if i < m // 2 else eps / 2 for i in range(m)]
    queries = np.asarray([_cap_point(rng, center, r) for r in radii])

    regions = []
    planted_index = None
    if with_planted:
        planted_index = int(rng.integers(0, n))
    for j in range(n):
        if j == planted_index:
            regions.append(_cap_point(rng, center, rng.uniform(0, eps / 2)))
            continue
        while True:
            u = _unit(rng.standard_normal(d))
            if np.linalg.norm(u - center) >= 12 * eps:
                regions.append(u)
                break
    regions = np.asarray(regions)

    # intra-cluster pairwise distances <= eps
    for i in range(m):
        for k in range(i + 1, m):
            assert np.linalg.norm(queries[i] - queries[k]) <= eps
    for j in range(n):
        dists = np.linalg.norm(queries - regions[j], axis=1)
        if j == planted_index:
            assert dists.max() <= eps
        else:
            assert dists.min() >= 10 * eps
    return queries, regions, planted_index
