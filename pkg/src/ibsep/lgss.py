"""Linear-Gaussian state-space simulation and exact Kalman filtering.

The model is

    x_{t+1} = A x_t + B u_t + w_t,   w_t ~ N(0, Q)
    y_t     = C x_t + v_t,           v_t ~ N(0, R)

with x_0 ~ N(mu0, P0). The recursive filter (predict/update with
Joseph-form covariances and Cholesky solves) is checked against an
independent oracle that builds the joint Gaussian of (x_t, y_1..y_t)
explicitly and conditions by Schur complement.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .info import GaussianDistribution

__all__ = [
    "LGSSModel",
    "KalmanState",
    "Trajectory",
    "random_stable_model",
    "simulate",
    "kalman_predict",
    "kalman_update",
    "predictive_density",
    "riccati_iterate",
    "batch_posterior_oracle",
    "run_filter",
    "model_to_json",
    "model_from_json",
    "trajectory_to_csv",
    "trajectory_from_csv",
]


def _check_psd(mat, name, strict=False):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.size and np.max(np.abs(mat - mat.T)) > 1e-10 * max(1.0, np.max(np.abs(mat))):
        raise ValueError(f"{name} must be symmetric")
    mat = (mat + mat.T) / 2.0
    if mat.size:
        eigs = np.linalg.eigvalsh(mat)
        if strict and eigs.min() <= 0:
            raise ValueError(f"{name} must be positive definite")
        if not strict and eigs.min() < -1e-10 * max(1.0, abs(eigs.max())):
            raise ValueError(f"{name} must be positive semi-definite")
    return mat


@dataclass(frozen=True)
class LGSSModel:
    """Parameters (A, B, C, Q, R, mu0, P0) with dimensions (n, m, p)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    mu0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        m = C.shape[0]
        if A.shape != (n, n) or C.shape != (m, n):
            raise ValueError("A must be n×n and C must be m×n")
        mu0 = np.asarray(self.mu0, dtype=float).reshape(n)
        Q = _check_psd(self.Q, "Q")
        R = _check_psd(self.R, "R", strict=True)
        P0 = _check_psd(self.P0, "P0")
        if Q.shape != (n, n) or R.shape != (m, m) or P0.shape != (n, n):
            raise ValueError("noise covariance dimensions inconsistent")
        for field_name, value in (("A", A), ("B", B), ("C", C), ("Q", Q),
                                  ("R", R), ("mu0", mu0), ("P0", P0)):
            object.__setattr__(self, field_name, value)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    def initial_state(self) -> "KalmanState":
        return KalmanState(0, self.mu0.copy(), self.P0.copy())


@dataclass(frozen=True)
class KalmanState:
    """Filter state at time t: posterior (or prior) mean and covariance."""

    t: int
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("non-finite filter state")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", (cov + cov.T) / 2.0)


@dataclass(frozen=True)
class Trajectory:
    """Simulated rollout: controls u_0..T-1, states x_1..T, observations y_1..T.

    ``z`` optionally carries task targets z_1..T (None when the task is
    defined elsewhere, e.g. next-observation prediction).
    """

    u: np.ndarray  # (T, p)
    x: np.ndarray  # (T, n)
    y: np.ndarray  # (T, m)
    z: np.ndarray | None = None

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        T = y.shape[0]
        if x.shape[0] != T or u.shape[0] != T:
            raise ValueError("controls/states/observations lengths differ")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.z is not None:
            z = np.asarray(self.z, dtype=float)
            if z.shape[0] != T:
                raise ValueError("task targets length differs from horizon")
            object.__setattr__(self, "z", z)

    @property
    def T(self) -> int:
        return self.y.shape[0]


def random_stable_model(rng, n=2, m=1, p=0, max_radius=0.95) -> LGSSModel:
    """Random well-posed model: A rescaled to spectral radius <= max_radius."""
    A = rng.standard_normal((n, n))
    radius = max(np.abs(np.linalg.eigvals(A)))
    if radius > 0:
        A = A * (max_radius * rng.uniform(0.5, 1.0) / radius)
    B = rng.standard_normal((n, p)) if p else np.zeros((n, 0))
    C = rng.standard_normal((m, n))
    q_root = rng.standard_normal((n, n)) * 0.3
    Q = q_root @ q_root.T + 0.05 * np.eye(n)
    r_root = rng.standard_normal((m, m)) * 0.3
    R = r_root @ r_root.T + 0.05 * np.eye(m)
    mu0 = rng.standard_normal(n)
    p_root = rng.standard_normal((n, n)) * 0.3
    P0 = p_root @ p_root.T + 0.05 * np.eye(n)
    return LGSSModel(A=A, B=B, C=C, Q=Q, R=R, mu0=mu0, P0=P0)


def _sample_gaussian(rng, cov, size):
    """Draw size samples of N(0, cov) without requiring PD (PSD is enough)."""
    n = cov.shape[0]
    if n == 0:
        return np.zeros((size, 0))
    if not cov.any():
        return np.zeros((size, n))
    eigval, eigvec = np.linalg.eigh(cov)
    root = eigvec * np.sqrt(np.clip(eigval, 0.0, None))
    return rng.standard_normal((size, n)) @ root.T


def simulate(model: LGSSModel, controls, T: int, rng) -> Trajectory:
    """Roll the generative model forward for T steps.

    ``controls`` is (T, p) (or None when p == 0); row t is u_t, applied in
    the transition from x_t to x_{t+1}. Deterministic given the rng state.
    """
    if controls is None:
        controls = np.zeros((T, model.p))
    u = np.asarray(controls, dtype=float).reshape(T, model.p)
    x0 = model.mu0 + _sample_gaussian(rng, model.P0, 1)[0]
    w = _sample_gaussian(rng, model.Q, T)
    v = _sample_gaussian(rng, model.R, T)
    xs = np.empty((T, model.n))
    ys = np.empty((T, model.m))
    x = x0
    for t in range(T):
        x = model.A @ x + model.B @ u[t] + w[t]
        xs[t] = x
        ys[t] = model.C @ x + v[t]
    return Trajectory(u=u, x=xs, y=ys)


def kalman_predict(state: KalmanState, model: LGSSModel, u=None) -> KalmanState:
    """Time update: the prior over x_{t+1} given data up to t."""
    u = np.zeros(model.p) if u is None else np.asarray(u, dtype=float).reshape(model.p)
    mean = model.A @ state.mean + model.B @ u
    cov = model.A @ state.cov @ model.A.T + model.Q
    return KalmanState(state.t + 1, mean, cov)


def kalman_update(prior: KalmanState, y, model: LGSSModel) -> KalmanState:
    """Measurement update with Joseph-form covariance.

    Gain solves go through a Cholesky factorization of the innovation
    covariance S = C P Cᵀ + R; a singular S raises.
    """
    y = np.asarray(y, dtype=float).reshape(model.m)
    P = prior.cov
    C = model.C
    S = C @ P @ C.T + model.R
    try:
        chol = cho_factor((S + S.T) / 2.0, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises its own
        raise np.linalg.LinAlgError(f"innovation covariance singular: {exc}")
    K = cho_solve(chol, C @ P).T  # P Cᵀ S⁻¹
    innovation = y - C @ prior.mean
    mean = prior.mean + K @ innovation
    U = np.eye(model.n) - K @ C
    cov = U @ P @ U.T + K @ model.R @ K.T
    return KalmanState(prior.t, mean, cov)


def predictive_density(state: KalmanState, model: LGSSModel, u=None) -> GaussianDistribution:
    """Exact one-step predictive p(y_{t+1} | data up to t, u_t)."""
    prior = kalman_predict(state, model, u)
    mean = model.C @ prior.mean
    cov = model.C @ prior.cov @ model.C.T + model.R
    return GaussianDistribution(mean, cov)


def riccati_iterate(model: LGSSModel, P_init, n_iters: int) -> np.ndarray:
    """Iterate the posterior-covariance map (predict then update) n times.

    The iteration is independent of data; its fixed point is the
    steady-state posterior covariance of the filter.
    """
    P = np.atleast_2d(np.asarray(P_init, dtype=float))
    for _ in range(int(n_iters)):
        state = KalmanState(0, np.zeros(model.n), P)
        prior = kalman_predict(state, model)
        P = kalman_update(prior, np.zeros(model.m), model).cov
    return P


def run_filter(model: LGSSModel, trajectory: Trajectory):
    """Filter a whole trajectory.

    Returns (posteriors, predictives, loglik): the posterior after each
    y_t, the one-step predictive density for each y_t, and the total
    predictive log-likelihood sum_t log p(y_t | y^{t-1}).
    """
    state = model.initial_state()
    posteriors, predictives = [], []
    loglik = 0.0
    for t in range(trajectory.T):
        u_t = trajectory.u[t]
        pred = predictive_density(state, model, u_t)
        loglik += pred.logpdf(trajectory.y[t])
        predictives.append(pred)
        prior = kalman_predict(state, model, u_t)
        state = kalman_update(prior, trajectory.y[t], model)
        posteriors.append(state)
    return posteriors, predictives, loglik


def batch_posterior_oracle(model: LGSSModel, trajectory: Trajectory, t: int) -> GaussianDistribution:
    """Posterior over x_t given y_1..t by explicit joint-Gaussian conditioning.

    Builds the mean and covariance of the joint Gaussian of
    (x_0..x_t, y_1..y_t) from the model recursions, then conditions x_t on
    the stacked observations via a Schur complement. Entirely independent
    of the recursive filter; t = 0 returns the prior.
    """
    if not 0 <= t <= trajectory.T:
        raise ValueError(f"t={t} outside 0..{trajectory.T}")
    n, m = model.n, model.m
    if t == 0:
        return GaussianDistribution(model.mu0, model.P0)

    # State means and pairwise covariances Sigma[s, r] = Cov(x_s, x_r).
    means = [model.mu0]
    for s in range(t):
        means.append(model.A @ means[-1] + model.B @ trajectory.u[s])
    cov = np.zeros(((t + 1) * n, (t + 1) * n))

    def blk(i, j):
        return (slice(i * n, (i + 1) * n), slice(j * n, (j + 1) * n))

    cov[blk(0, 0)] = model.P0
    for s in range(t):
        prev = cov[blk(s, s)]
        cov[blk(s + 1, s + 1)] = model.A @ prev @ model.A.T + model.Q
        for r in range(s + 1):
            c = cov[blk(r, s)] @ model.A.T
            cov[blk(r, s + 1)] = c
            cov[blk(s + 1, r)] = c.T

    # Joint of (x_t, y_1..y_t): y_s = C x_s + v_s with independent v_s.
    mean_xt = means[t]
    mean_y = np.concatenate([model.C @ means[s] for s in range(1, t + 1)])
    cov_xx = cov[blk(t, t)]
    cov_xy = np.hstack([cov[blk(t, s)] @ model.C.T for s in range(1, t + 1)])
    cov_yy = np.zeros((t * m, t * m))
    for s in range(1, t + 1):
        for r in range(1, t + 1):
            block = model.C @ cov[blk(s, r)] @ model.C.T
            if s == r:
                block = block + model.R
            cov_yy[(s - 1) * m : s * m, (r - 1) * m : r * m] = block

    try:
        chol = cho_factor((cov_yy + cov_yy.T) / 2.0, lower=True)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("joint observation covariance singular")
    y_stack = trajectory.y[:t].reshape(-1)
    gain = cho_solve(chol, cov_xy.T).T
    mean_post = mean_xt + gain @ (y_stack - mean_y)
    cov_post = cov_xx - gain @ cov_xy.T
    return GaussianDistribution(mean_post, cov_post)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def model_to_json(model: LGSSModel, path=None) -> str:
    """Serialize to JSON with keys n, m, p, A, B, C, Q, R, mu0, P0."""
    payload = {
        "n": model.n,
        "m": model.m,
        "p": model.p,
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "Q": model.Q.tolist(),
        "R": model.R.tolist(),
        "mu0": model.mu0.tolist(),
        "P0": model.P0.tolist(),
    }
    text = json.dumps(payload, indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def model_from_json(source) -> LGSSModel:
    """Load a model written by :func:`model_to_json` (path or JSON string)."""
    if hasattr(source, "read"):
        payload = json.load(source)
    else:
        text = str(source)
        if text.lstrip().startswith("{"):
            payload = json.loads(text)
        else:
            with open(text) as fh:
                payload = json.load(fh)
    required = {"n", "m", "p", "A", "B", "C", "Q", "R", "mu0", "P0"}
    missing = required - payload.keys()
    if missing:
        raise ValueError(f"model JSON missing keys: {sorted(missing)}")
    n, m, p = int(payload["n"]), int(payload["m"]), int(payload["p"])
    model = LGSSModel(
        A=np.array(payload["A"], dtype=float).reshape(n, n),
        B=np.array(payload["B"], dtype=float).reshape(n, p),
        C=np.array(payload["C"], dtype=float).reshape(m, n),
        Q=np.array(payload["Q"], dtype=float).reshape(n, n),
        R=np.array(payload["R"], dtype=float).reshape(m, m),
        mu0=np.array(payload["mu0"], dtype=float).reshape(n),
        P0=np.array(payload["P0"], dtype=float).reshape(n, n),
    )
    return model


def trajectory_to_csv(trajectory: Trajectory, path) -> None:
    """Write rows t, u..., y..., x..., z... (t = 1..T; row t carries u_{t-1})."""
    p = trajectory.u.shape[1]
    n = trajectory.x.shape[1]
    m = trajectory.y.shape[1]
    has_z = trajectory.z is not None
    zdim = trajectory.z.shape[1] if has_z else 0
    header = (
        ["t"]
        + [f"u{i}" for i in range(p)]
        + [f"y{i}" for i in range(m)]
        + [f"x{i}" for i in range(n)]
        + [f"z{i}" for i in range(zdim)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(trajectory.T):
            row = [t + 1]
            row += [repr(float(v)) for v in trajectory.u[t]]
            row += [repr(float(v)) for v in trajectory.y[t]]
            row += [repr(float(v)) for v in trajectory.x[t]]
            if has_z:
                row += [repr(float(v)) for v in trajectory.z[t]]
            writer.writerow(row)


def trajectory_from_csv(path) -> Trajectory:
    """Read a trajectory written by :func:`trajectory_to_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    counts = {"u": 0, "y": 0, "x": 0, "z": 0}
    for col in header[1:]:
        counts[col[0]] += 1
    p, m, n, zdim = counts["u"], counts["y"], counts["x"], counts["z"]
    T = len(rows)
    u = np.zeros((T, p))
    y = np.zeros((T, m))
    x = np.zeros((T, n))
    z = np.zeros((T, zdim)) if zdim else None
    for i, row in enumerate(rows):
        vals = [float(v) for v in row[1:]]
        u[i] = vals[:p]
        y[i] = vals[p : p + m]
        x[i] = vals[p + m : p + m + n]
        if zdim:
            z[i] = vals[p + m + n :]
    return Trajectory(u=u, x=x, y=y, z=z)
