import numpy as np
import pytest

from hmlab import domains, dyadic, whitney


@pytest.fixture(scope="session")
def disk_stack():
    """Shared disk fixture: oracle, sample, Whitney decomposition, tree,
    assignment.  Session-scoped; tests must not mutate it."""
    spec = domains.ball(1.0, dim=2)
    oracle = domains.build_domain(spec)
    sample = domains.sample_boundary(oracle, spec, 4000, seed=7)
    decomp = whitney.whitney_decompose(oracle, ell_min=2.0 ** -8)
    k_lo, k_hi = whitney.usable_tree_range(decomp)
    tree = dyadic.build_tree(sample, k_lo, min(k_hi, k_lo + 2))
    asg = whitney.assign_wq(decomp, tree, whitney.RegionParams(c0=32.0), oracle)
    return {"spec": spec, "oracle": oracle, "sample": sample,
            "decomp": decomp, "tree": tree, "asg": asg}


@pytest.fixture(scope="session")
def circle_sample():
    spec = domains.ball(1.0, dim=2)
    oracle = domains.build_domain(spec)
    return oracle, domains.sample_boundary(oracle, spec, 1024, seed=3)


@pytest.fixture(scope="session")
def sphere_sample():
    spec = domains.ball(1.0, dim=3)
    oracle = domains.build_domain(spec)
    return oracle, domains.sample_boundary(oracle, spec, 10000, seed=3)
