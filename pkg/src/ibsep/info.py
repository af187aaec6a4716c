"""Exact information-theoretic quantities on finite alphabets and Gaussians.

Everything here is computed in closed form (no sampling, no estimators) so
that the rest of the library can be checked against it: entropies, KL
divergences, (conditional) mutual information and total correlation on
explicit probability tables, plus the standard Gaussian closed forms.

Conventions
-----------
* All quantities are in nats (natural logarithm).
* ``0 * log 0 := 0`` throughout.
* A KL divergence whose absolute-continuity requirement fails does not
  raise; it returns ``+inf`` carrying a ``diverged`` flag (see
  :class:`DivergedKL`) so that inequality checks stay total.
* Covariance matrices are symmetrized on construction and validated as
  positive semi-definite with eigenvalue tolerance ``-1e-10``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import norm

__all__ = [
    "DiscreteDistribution",
    "DiscreteJoint",
    "DiscreteChannel",
    "GaussianDistribution",
    "DivergedKL",
    "entropy",
    "cross_entropy_discrete",
    "kl_discrete",
    "mutual_information",
    "mi_identity_check",
    "total_correlation_discrete",
    "kl_gaussian",
    "total_correlation_gaussian",
    "compose_channels",
    "joint_from_prior_channel",
    "gaussian_bin_masses",
]

_SUM_TOL = 1e-12
# Distributions may arrive with sums off by accumulated roundoff; anything
# within this tolerance is renormalized exactly, anything worse is rejected.
_RENORM_TOL = 1e-9


class DivergedKL(float):
    """A ``+inf`` KL value flagging an absolute-continuity violation.

    Behaves exactly like ``float('inf')`` in arithmetic and comparisons;
    the ``diverged`` attribute records why it is infinite.
    """

    diverged = True


def _as_prob_array(table, name="probability table"):
    """Validate and renormalize a nonnegative table summing to one."""
    arr = np.asarray(table, dtype=float)
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(arr < -_SUM_TOL):
        raise ValueError(f"{name} contains negative entries")
    arr = np.clip(arr, 0.0, None)
    total = arr.sum()
    if abs(total - 1.0) > _RENORM_TOL:
        raise ValueError(f"{name} sums to {total!r}, not 1")
    return arr / total


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability vector over a finite alphabet.

    Parameters
    ----------
    probs : array_like
        Non-negative entries summing to 1 (renormalized if off by at most
        1e-9, rejected otherwise).
    """

    probs: np.ndarray

    def __post_init__(self):
        arr = _as_prob_array(self.probs, "distribution")
        if arr.ndim != 1:
            raise ValueError("distribution table must be one-dimensional")
        object.__setattr__(self, "probs", arr)

    def __len__(self):
        return self.probs.shape[0]

    @staticmethod
    def uniform(k: int) -> "DiscreteDistribution":
        return DiscreteDistribution(np.full(k, 1.0 / k))

    @staticmethod
    def delta(k: int, i: int) -> "DiscreteDistribution":
        p = np.zeros(k)
        p[i] = 1.0
        return DiscreteDistribution(p)


@dataclass(frozen=True)
class DiscreteJoint:
    """Joint distribution over named finite axes.

    Parameters
    ----------
    axes : tuple of str
        One name per table dimension, all distinct.
    table : ndarray
        Joint probability table, one dimension per axis.
    """

    axes: tuple
    table: np.ndarray

    def __post_init__(self):
        axes = tuple(self.axes)
        if len(set(axes)) != len(axes):
            raise ValueError(f"duplicate axis names in {axes}")
        table = _as_prob_array(self.table, "joint table")
        if table.ndim != len(axes):
            raise ValueError(
                f"table has {table.ndim} dimensions but {len(axes)} axes named"
            )
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "table", table)

    def _axis_indices(self, names):
        if isinstance(names, str):
            names = (names,)
        idx = []
        for name in names:
            if name not in self.axes:
                raise KeyError(f"axis {name!r} not in {self.axes}")
            idx.append(self.axes.index(name))
        return tuple(idx)

    def marginal_table(self, names) -> np.ndarray:
        """Marginal probability table over ``names``, in the order given."""
        keep = self._axis_indices(names)
        drop = tuple(i for i in range(self.table.ndim) if i not in keep)
        marg = self.table.sum(axis=drop) if drop else self.table
        # reorder surviving axes to the requested order
        surviving = [i for i in range(self.table.ndim) if i in keep]
        perm = [surviving.index(i) for i in keep]
        return np.transpose(marg, perm)

    def marginal(self, names) -> "DiscreteJoint":
        names = (names,) if isinstance(names, str) else tuple(names)
        return DiscreteJoint(names, self.marginal_table(names))

    def entropy_of(self, names) -> float:
        """Joint Shannon entropy (nats) of the named axes."""
        return _entropy_table(self.marginal_table(names))


@dataclass(frozen=True)
class DiscreteChannel:
    """Row-stochastic conditional table p(out | in).

    Row i is the output distribution given input symbol i.
    """

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        if mat.ndim != 2:
            raise ValueError("channel matrix must be 2-D")
        if not np.all(np.isfinite(mat)):
            raise ValueError("channel matrix contains non-finite entries")
        if np.any(mat < -_SUM_TOL):
            raise ValueError("channel matrix contains negative entries")
        mat = np.clip(mat, 0.0, None)
        sums = mat.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > _RENORM_TOL):
            raise ValueError("channel rows must sum to 1")
        object.__setattr__(self, "matrix", mat / sums[:, None])

    @property
    def in_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def out_size(self) -> int:
        return self.matrix.shape[1]

    @staticmethod
    def identity(k: int) -> "DiscreteChannel":
        return DiscreteChannel(np.eye(k))

    def push(self, prior: DiscreteDistribution) -> DiscreteDistribution:
        """Output marginal induced by ``prior`` on the input."""
        return DiscreteDistribution(prior.probs @ self.matrix)


def _check_symmetric(cov, tol=1e-10):
    asym = np.max(np.abs(cov - cov.T)) if cov.size else 0.0
    if asym > tol * max(1.0, np.max(np.abs(cov))):
        raise ValueError(f"covariance asymmetric by {asym!r}")


@dataclass(frozen=True)
class GaussianDistribution:
    """Multivariate normal given by mean vector and covariance matrix."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("mean/covariance shapes inconsistent")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("non-finite Gaussian parameters")
        _check_symmetric(cov)
        cov = (cov + cov.T) / 2.0
        min_eig = np.min(np.linalg.eigvalsh(cov)) if cov.size else 0.0
        if min_eig < -1e-10 * max(1.0, np.max(np.abs(cov))):
            raise ValueError(f"covariance not PSD (min eigenvalue {min_eig!r})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, x) -> float:
        """Log density at ``x``; requires a positive-definite covariance."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        chol = np.linalg.cholesky(self.cov)
        dev = solve_triangular(chol, x - self.mean, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        return float(
            -0.5 * (self.dim * math.log(2.0 * math.pi) + logdet + dev @ dev)
        )


def _entropy_table(table) -> float:
    t = np.asarray(table, dtype=float)
    pos = t[t > 0]
    return float(-np.sum(pos * np.log(pos)))


def entropy(p) -> float:
    """Shannon entropy -sum p log p in nats, with 0 log 0 := 0."""
    if isinstance(p, DiscreteDistribution):
        return _entropy_table(p.probs)
    if isinstance(p, DiscreteJoint):
        return _entropy_table(p.table)
    return _entropy_table(_as_prob_array(p))


def cross_entropy_discrete(p, q) -> float:
    """Cross-entropy -sum p log q in nats.

    Returns ``+inf`` (flagged, see :class:`DivergedKL`) when q assigns zero
    mass where p does not.
    """
    pa = p.probs if isinstance(p, DiscreteDistribution) else _as_prob_array(p)
    qa = q.probs if isinstance(q, DiscreteDistribution) else _as_prob_array(q)
    if pa.shape != qa.shape:
        raise ValueError("alphabet sizes differ")
    mask = pa > 0
    if np.any(qa[mask] == 0.0):
        return DivergedKL(math.inf)
    return float(-np.sum(pa[mask] * np.log(qa[mask])))


def kl_discrete(p, q) -> float:
    """KL divergence sum p log(p/q) in nats.

    An absolute-continuity violation (p puts mass where q has none) yields
    ``+inf`` flagged as :class:`DivergedKL` instead of raising.
    """
    pa = p.probs if isinstance(p, DiscreteDistribution) else _as_prob_array(p)
    qa = q.probs if isinstance(q, DiscreteDistribution) else _as_prob_array(q)
    if pa.shape != qa.shape:
        raise ValueError("alphabet sizes differ")
    mask = pa > 0
    if np.any(qa[mask] == 0.0):
        return DivergedKL(math.inf)
    return float(np.sum(pa[mask] * (np.log(pa[mask]) - np.log(qa[mask]))))


def mutual_information(joint: DiscreteJoint, axes_a, axes_b, given=()) -> float:
    """(Conditional) mutual information I(A; B | C) in nats.

    Parameters
    ----------
    joint : DiscreteJoint
    axes_a, axes_b : str or sequence of str
        The two groups of axes; must be disjoint from each other and from
        ``given``.
    given : str or sequence of str, optional
        Conditioning axes C.

    Notes
    -----
    Computed as H(A,C) + H(B,C) - H(A,B,C) - H(C), which reduces to
    H(A) + H(B) - H(A,B) when C is empty.
    """
    a = (axes_a,) if isinstance(axes_a, str) else tuple(axes_a)
    b = (axes_b,) if isinstance(axes_b, str) else tuple(axes_b)
    c = (given,) if isinstance(given, str) else tuple(given)
    groups = a + b + c
    if len(set(groups)) != len(groups):
        raise ValueError(f"axis groups overlap: {a}, {b}, given {c}")
    h_ac = joint.entropy_of(a + c)
    h_bc = joint.entropy_of(b + c)
    h_abc = joint.entropy_of(a + b + c)
    h_c = joint.entropy_of(c) if c else 0.0
    return h_ac + h_bc - h_abc - h_c


def joint_from_prior_channel(
    prior: DiscreteDistribution,
    channel: DiscreteChannel,
    axes=("y", "x"),
) -> DiscreteJoint:
    """Joint p(in)·p(out|in) as a two-axis table (input axis first)."""
    if channel.in_size != len(prior):
        raise ValueError("prior and channel input alphabets differ")
    return DiscreteJoint(tuple(axes), prior.probs[:, None] * channel.matrix)


def mi_identity_check(prior: DiscreteDistribution, channel: DiscreteChannel) -> dict:
    """Mutual information two ways: from the joint, and as E_y KL(p(x|y) || p(x)).

    Returns
    -------
    dict with keys ``lhs`` (I(x;y) from the induced joint table) and ``rhs``
    (the prior-weighted KL of each channel row against the output marginal).
    The two are equal in exact arithmetic; callers check |lhs - rhs|.
    """
    joint = joint_from_prior_channel(prior, channel)
    lhs = mutual_information(joint, "x", "y")
    marginal = channel.push(prior)
    rhs = 0.0
    for py, row in zip(prior.probs, channel.matrix):
        if py == 0.0:
            continue
        rhs += py * kl_discrete(DiscreteDistribution(row), marginal)
    return {"lhs": lhs, "rhs": float(rhs)}


def total_correlation_discrete(joint: DiscreteJoint) -> float:
    """Total correlation KL(joint || product of axis marginals), in nats."""
    if len(joint.axes) < 2:
        raise ValueError("total correlation needs at least two axes")
    tc = -entropy(joint)
    for name in joint.axes:
        tc += joint.entropy_of(name)
    return float(tc)


def kl_gaussian(p: GaussianDistribution, q: GaussianDistribution) -> float:
    """Closed-form KL(p || q) between multivariate Gaussians, in nats.

    Raises ``numpy.linalg.LinAlgError`` when q's covariance is singular.
    A singular p covariance gives ``+inf`` (absolute-continuity failure).
    """
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    d = p.dim
    chol_q = np.linalg.cholesky(q.cov)  # raises LinAlgError if singular
    logdet_q = 2.0 * np.sum(np.log(np.diag(chol_q)))
    sign_p, logdet_p = np.linalg.slogdet(p.cov)
    if sign_p <= 0:
        return DivergedKL(math.inf)
    half = solve_triangular(chol_q, p.cov, lower=True)
    trace_term = np.trace(solve_triangular(chol_q, half.T, lower=True))
    dev = solve_triangular(chol_q, q.mean - p.mean, lower=True)
    return float(0.5 * (trace_term + dev @ dev - d + logdet_q - logdet_p))


def total_correlation_gaussian(cov) -> float:
    """Gaussian total correlation ½(Σ_i ln cov_ii − ln det cov), in nats."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    _check_symmetric(cov)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0 or np.any(np.diag(cov) <= 0):
        raise ValueError("covariance must be positive definite")
    return float(0.5 * (np.sum(np.log(np.diag(cov))) - logdet))


def compose_channels(c1: DiscreteChannel, c2: DiscreteChannel) -> DiscreteChannel:
    """Compose y→x1 with x1→x2 into y→x2 by the matrix product."""
    if c1.out_size != c2.in_size:
        raise ValueError(
            f"cannot chain alphabets: {c1.out_size} -> {c2.in_size}"
        )
    return DiscreteChannel(c1.matrix @ c2.matrix)


def gaussian_bin_masses(means, stds, edges) -> np.ndarray:
    """Exact bin masses of 1-D Gaussians on a shared grid.

    Parameters
    ----------
    means, stds : array_like, shape (k,)
        Parameters of k univariate Gaussians.
    edges : array_like, shape (B+1,)
        Increasing interior bin edges. Two extra unbounded bins
        (-inf, edges[0]) and (edges[-1], inf) are prepended/appended so
        every row sums to 1 exactly.

    Returns
    -------
    ndarray, shape (k, B+2)
        Row i is the probability of each bin under N(means[i], stds[i]²).
    """
    means = np.asarray(means, dtype=float)[:, None]
    stds = np.asarray(stds, dtype=float)[:, None]
    if np.any(stds <= 0):
        raise ValueError("standard deviations must be positive")
    edges = np.asarray(edges, dtype=float)[None, :]
    cdf = norm.cdf((edges - means) / stds)
    left = cdf[:, :1]
    right = 1.0 - cdf[:, -1:]
    inner = np.diff(cdf, axis=1)
    masses = np.concatenate([left, inner, right], axis=1)
    return np.clip(masses, 0.0, None)
