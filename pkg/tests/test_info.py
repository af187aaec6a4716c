import math

import numpy as np
import pytest

from ibsep import info


def random_distribution(rng, k):
    return info.DiscreteDistribution(rng.dirichlet(np.ones(k)))


def random_channel(rng, k_in, k_out):
    return info.DiscreteChannel(rng.dirichlet(np.ones(k_out), size=k_in))


# ---------------------------------------------------------------------------
# entropy
# ---------------------------------------------------------------------------


def test_entropy_delta_is_zero():
    assert info.entropy(info.DiscreteDistribution.delta(4, 2)) == 0.0


def test_entropy_uniform_closed_form():
    assert info.entropy(info.DiscreteDistribution.uniform(2)) == pytest.approx(math.log(2), abs=1e-15)
    for k in (3, 5, 17):
        assert info.entropy(info.DiscreteDistribution.uniform(k)) == pytest.approx(math.log(k), abs=1e-12)


def test_entropy_nonnegative_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = random_distribution(rng, int(rng.integers(2, 9)))
        assert info.entropy(p) >= 0.0


# ---------------------------------------------------------------------------
# discrete KL
# ---------------------------------------------------------------------------


def test_kl_equal_distributions_zero():
    p = info.DiscreteDistribution([0.3, 0.2, 0.5])
    assert info.kl_discrete(p, p) == 0.0


def test_kl_single_term():
    val = info.kl_discrete(info.DiscreteDistribution([1.0, 0.0]),
                           info.DiscreteDistribution([0.5, 0.5]))
    assert val == pytest.approx(math.log(2), abs=1e-15)


def test_kl_closed_form_two_point():
    val = info.kl_discrete(info.DiscreteDistribution([0.5, 0.5]),
                           info.DiscreteDistribution([0.25, 0.75]))
    expected = 0.5 * math.log(2) + 0.5 * math.log(2.0 / 3.0)
    assert val == pytest.approx(expected, abs=1e-15)
    assert val == pytest.approx(0.14384, abs=5e-6)


def test_kl_absolute_continuity_violation_flagged():
    val = info.kl_discrete(info.DiscreteDistribution([0.5, 0.5]),
                           info.DiscreteDistribution([1.0, 0.0]))
    assert math.isinf(val)
    assert getattr(val, "diverged", False)


def test_kl_nonnegative_random():
    rng = np.random.default_rng(1)
    for _ in range(100):
        k = int(rng.integers(2, 8))
        p, q = random_distribution(rng, k), random_distribution(rng, k)
        kl = info.kl_discrete(p, q)
        assert kl >= 0.0


# ---------------------------------------------------------------------------
# mutual information
# ---------------------------------------------------------------------------


def test_mi_product_joint_zero():
    joint = info.DiscreteJoint(("a", "b"), np.outer([0.3, 0.7], [0.6, 0.4]))
    assert info.mutual_information(joint, "a", "b") == pytest.approx(0.0, abs=1e-15)


def test_mi_identity_channel_binary():
    joint = info.DiscreteJoint(("y", "z"), np.diag([0.5, 0.5]))
    assert info.mutual_information(joint, "y", "z") == pytest.approx(math.log(2), abs=1e-15)


def test_mi_binary_symmetric_channel():
    # uniform input, flip probability 0.25: I = ln 2 - H_b(0.25)
    flip = 0.25
    table = 0.5 * np.array([[1 - flip, flip], [flip, 1 - flip]])
    joint = info.DiscreteJoint(("y", "x"), table)
    h_b = -flip * math.log(flip) - (1 - flip) * math.log(1 - flip)
    got = info.mutual_information(joint, "y", "x")
    assert got == pytest.approx(math.log(2) - h_b, abs=1e-14)
    assert got == pytest.approx(0.130812, abs=5e-7)


def test_conditional_mi_chain():
    # z -> y -> x: conditioning on y must remove all dependence of x on z
    rng = np.random.default_rng(2)
    pz = rng.dirichlet(np.ones(3))
    p_y_given_z = rng.dirichlet(np.ones(4), size=3)
    p_x_given_y = rng.dirichlet(np.ones(2), size=4)
    table = pz[:, None, None] * p_y_given_z[:, :, None] * p_x_given_y[None, :, :]
    joint = info.DiscreteJoint(("z", "y", "x"), table)
    assert info.mutual_information(joint, "z", "x", given="y") == pytest.approx(0.0, abs=1e-13)
    # and unconditionally z and x are dependent in general
    assert info.mutual_information(joint, "z", "x") > 0.0


def test_mi_overlapping_axes_rejected():
    joint = info.DiscreteJoint(("a", "b"), np.full((2, 2), 0.25))
    with pytest.raises(ValueError):
        info.mutual_information(joint, "a", "a")


# ---------------------------------------------------------------------------
# the MI identity
# ---------------------------------------------------------------------------


def test_identity_constant_channel():
    prior = info.DiscreteDistribution([0.4, 0.6])
    channel = info.DiscreteChannel([[0.0, 1.0], [0.0, 1.0]])
    result = info.mi_identity_check(prior, channel)
    assert result["lhs"] == pytest.approx(0.0, abs=1e-15)
    assert result["rhs"] == pytest.approx(0.0, abs=1e-15)


def test_identity_identity_channel_uniform():
    for k in (2, 5):
        result = info.mi_identity_check(info.DiscreteDistribution.uniform(k),
                                        info.DiscreteChannel.identity(k))
        assert result["lhs"] == pytest.approx(math.log(k), abs=1e-12)
        assert result["rhs"] == pytest.approx(math.log(k), abs=1e-12)


def test_identity_random_pairs():
    rng = np.random.default_rng(3)
    for _ in range(200):
        k_in = int(rng.integers(2, 7))
        k_out = int(rng.integers(2, 7))
        prior = random_distribution(rng, k_in)
        channel = random_channel(rng, k_in, k_out)
        result = info.mi_identity_check(prior, channel)
        assert abs(result["lhs"] - result["rhs"]) < 1e-12


# ---------------------------------------------------------------------------
# total correlation
# ---------------------------------------------------------------------------


def test_tc_product_zero():
    joint = info.DiscreteJoint(("a", "b"), np.outer([0.2, 0.8], [0.5, 0.5]))
    assert info.total_correlation_discrete(joint) == pytest.approx(0.0, abs=1e-15)


def test_tc_correlated_bits():
    joint = info.DiscreteJoint(("a", "b"), np.diag([0.5, 0.5]))
    assert info.total_correlation_discrete(joint) == pytest.approx(math.log(2), abs=1e-15)


def test_tc_three_independent_bits():
    table = np.full((2, 2, 2), 1 / 8)
    joint = info.DiscreteJoint(("a", "b", "c"), table)
    assert info.total_correlation_discrete(joint) == pytest.approx(0.0, abs=1e-15)


def test_tc_equals_mi_on_two_axes():
    rng = np.random.default_rng(4)
    for _ in range(50):
        table = rng.dirichlet(np.ones(12)).reshape(3, 4)
        joint = info.DiscreteJoint(("a", "b"), table)
        tc = info.total_correlation_discrete(joint)
        mi = info.mutual_information(joint, "a", "b")
        assert abs(tc - mi) < 1e-12


# ---------------------------------------------------------------------------
# Gaussian quantities
# ---------------------------------------------------------------------------


def test_kl_gaussian_identical_zero():
    g = info.GaussianDistribution([1.0, -2.0], [[2.0, 0.3], [0.3, 1.0]])
    assert info.kl_gaussian(g, g) == pytest.approx(0.0, abs=1e-12)


def test_kl_gaussian_scalar_closed_forms():
    n01 = info.GaussianDistribution([0.0], [[1.0]])
    n11 = info.GaussianDistribution([1.0], [[1.0]])
    n02 = info.GaussianDistribution([0.0], [[2.0]])
    assert info.kl_gaussian(n01, n11) == pytest.approx(0.5, abs=1e-14)
    expected = 0.5 * (2.0 - 1.0 - math.log(2.0))
    assert info.kl_gaussian(n02, n01) == pytest.approx(expected, abs=1e-14)
    assert info.kl_gaussian(n02, n01) == pytest.approx(0.153426, abs=5e-7)


def test_kl_gaussian_singular_q_errors():
    p = info.GaussianDistribution([0.0, 0.0], np.eye(2))
    q = info.GaussianDistribution([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(np.linalg.LinAlgError):
        info.kl_gaussian(p, q)


def test_kl_gaussian_matches_numerical_integration():
    # 1-D oracle: midpoint rule, spacing 1e-3, range +-10 sigma around p
    rng = np.random.default_rng(5)
    for _ in range(5):
        mp, mq = rng.normal(0, 1), rng.normal(0, 1)
        sp, sq = rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)
        p = info.GaussianDistribution([mp], [[sp**2]])
        q = info.GaussianDistribution([mq], [[sq**2]])
        xs = np.arange(mp - 10 * sp, mp + 10 * sp, 1e-3) + 0.5e-3
        logp = -0.5 * ((xs - mp) / sp) ** 2 - math.log(sp * math.sqrt(2 * math.pi))
        logq = -0.5 * ((xs - mq) / sq) ** 2 - math.log(sq * math.sqrt(2 * math.pi))
        grid = np.sum(np.exp(logp) * (logp - logq)) * 1e-3
        assert info.kl_gaussian(p, q) == pytest.approx(grid, abs=1e-4)


def test_tc_gaussian_diagonal_zero():
    assert info.total_correlation_gaussian(np.diag([1.0, 2.0, 0.5])) == pytest.approx(0.0, abs=1e-14)


def test_tc_gaussian_correlated_pair():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    expected = -0.5 * math.log(0.75)
    assert info.total_correlation_gaussian(cov) == pytest.approx(expected, abs=1e-14)
    assert info.total_correlation_gaussian(cov) == pytest.approx(0.143841, abs=5e-7)


def test_tc_gaussian_permutation_invariant():
    rng = np.random.default_rng(6)
    root = rng.standard_normal((4, 4))
    cov = root @ root.T + 0.5 * np.eye(4)
    perm = rng.permutation(4)
    assert info.total_correlation_gaussian(cov[np.ix_(perm, perm)]) == pytest.approx(
        info.total_correlation_gaussian(cov), abs=1e-12)


def test_tc_gaussian_rejects_non_pd():
    with pytest.raises(ValueError):
        info.total_correlation_gaussian([[1.0, 1.0], [1.0, 1.0]])


# ---------------------------------------------------------------------------
# channel composition / DPI
# ---------------------------------------------------------------------------


def test_compose_identity():
    ident = info.DiscreteChannel.identity(3)
    composed = info.compose_channels(ident, ident)
    assert np.allclose(composed.matrix, np.eye(3))


def test_compose_constant_output():
    rng = np.random.default_rng(7)
    c1 = random_channel(rng, 3, 4)
    const = info.DiscreteChannel(np.tile([0.0, 1.0], (4, 1)))
    composed = info.compose_channels(c1, const)
    assert np.allclose(composed.matrix, np.tile([0.0, 1.0], (3, 1)))


def test_compose_dimension_mismatch():
    rng = np.random.default_rng(8)
    with pytest.raises(ValueError):
        info.compose_channels(random_channel(rng, 2, 3), random_channel(rng, 4, 2))


def test_data_processing_inequality_random():
    rng = np.random.default_rng(9)
    for _ in range(100):
        k_y = int(rng.integers(2, 6))
        k1 = int(rng.integers(2, 6))
        k2 = int(rng.integers(2, 6))
        prior = random_distribution(rng, k_y)
        c1 = random_channel(rng, k_y, k1)
        c2 = random_channel(rng, k1, k2)
        i_x1 = info.mi_identity_check(prior, c1)["lhs"]
        i_x2 = info.mi_identity_check(prior, info.compose_channels(c1, c2))["lhs"]
        assert i_x2 <= i_x1 + 1e-12


# ---------------------------------------------------------------------------
# validation and helpers
# ---------------------------------------------------------------------------


def test_distribution_validation():
    with pytest.raises(ValueError):
        info.DiscreteDistribution([0.5, 0.4])  # sums to 0.9
    with pytest.raises(ValueError):
        info.DiscreteDistribution([1.5, -0.5])
    # tiny drift renormalizes
    d = info.DiscreteDistribution([0.5 + 1e-12, 0.5])
    assert d.probs.sum() == pytest.approx(1.0, abs=1e-15)


def test_joint_marginal_ordering():
    table = np.arange(1, 7, dtype=float).reshape(2, 3)
    table /= table.sum()
    joint = info.DiscreteJoint(("a", "b"), table)
    ab = joint.marginal_table(("a", "b"))
    ba = joint.marginal_table(("b", "a"))
    assert np.allclose(ab.T, ba)


def test_gaussian_bin_masses_rows_sum_to_one():
    edges = np.arange(-5.0, 5.0001, 0.05)
    masses = info.gaussian_bin_masses([0.0, 1.3], [1.0, 0.1], edges)
    assert np.allclose(masses.sum(axis=1), 1.0, atol=1e-12)
    # mass concentrates near the mean
    mid = np.argmax(masses[1])
    center = 0.5 * (edges[mid - 1] + edges[mid]) if 0 < mid <= len(edges) - 1 else None
    assert abs(center - 1.3) < 0.1


def test_cross_entropy_discrete_decomposition():
    rng = np.random.default_rng(10)
    for _ in range(100):
        k = int(rng.integers(2, 9))
        p = random_distribution(rng, k)
        q = random_distribution(rng, k)
        lhs = info.cross_entropy_discrete(p, q)
        rhs = info.entropy(p) + info.kl_discrete(p, q)
        assert abs(lhs - rhs) < 1e-12
