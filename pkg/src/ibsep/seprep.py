"""Learned separating representations for time series.

A recurrent filter keeps a finite-dimensional statistic φ_t of the history
(y^t, u^t) and uses it two ways: a task decoder predicts z_{t+k} from
samples of the diagonal-Gaussian posterior q(x_t | φ_t), and an update
network maps (φ_t, y_{t+1}, u_t) to φ_{t+1}. The update consumes only the
previous statistic and the new data — no observation likelihood is ever
evaluated, which is the structural point of the construction. Training
minimizes per-step prediction cross-entropy plus β times a closed-form
KL(q(x_t|φ_t) || N(0, I)) information penalty.

Two exact references keep the learner honest: a hand-built filter that
packs the Kalman mean and covariance into φ and reproduces the optimal
predictive density in closed form, and full enumeration of small HMMs,
which yields the entropy lower bound that every history-to-prediction
candidate must respect.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import info, lgss, nn

__all__ = [
    "SepFilterModel",
    "DynIBConfig",
    "FiniteHMM",
    "KalmanSepFilter",
    "HMMExactFilter",
    "TrainedFilter",
    "init_sep_filter",
    "filter_step",
    "predict_task",
    "predictive_nll",
    "dyn_ibl_loss",
    "train_filter",
    "lgss_source",
    "evaluate_vs_kalman",
    "write_eval_csv",
    "hmm_exact_reference",
    "nstep_bound_check",
    "exact_posterior_candidate",
    "marginal_candidate",
    "save_filter_json",
    "load_filter_json",
]

LOG_STD_MIN = -6.0
LOG_STD_MAX = 2.0
LOG2PI = math.log(2.0 * math.pi)
_PROB_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SepFilterModel:
    """Recurrent filter with posterior parameters φ ∈ R^{2d}.

    ``update`` maps (φ_t, y_{t+1}, u_t) to φ_{t+1}; ``heads[k]`` maps a
    sample of x_t (and the controls u_t..u_{t+k}, when there are controls)
    to the parameters of the predictive over z_{t+k}. ``output`` selects
    the predictive family: "gaussian" heads emit (mean, log-std) per target
    dimension, "categorical" heads emit logits. Log-stds are clamped to
    [-6, 2] wherever they are interpreted.
    """

    rep_dim: int
    obs_dim: int
    ctrl_dim: int
    horizon: int
    output: str
    target_dim: int
    update: nn.MLP
    heads: tuple
    phi0: np.ndarray

    def __post_init__(self):
        if self.output not in ("gaussian", "categorical"):
            raise ValueError(f"unknown output family {self.output!r}")
        d = self.rep_dim
        if self.update.widths[0] != 2 * d + self.obs_dim + self.ctrl_dim:
            raise ValueError("update network input dimension inconsistent")
        if self.update.widths[-1] != 2 * d:
            raise ValueError("update network output dimension inconsistent")
        if len(self.heads) != self.horizon + 1:
            raise ValueError("need one decoder head per prediction offset")
        for k, head in enumerate(self.heads):
            if head.widths[0] != d + self.ctrl_dim * (k + 1):
                raise ValueError(f"decoder head {k} input dimension inconsistent")
            want = 2 * self.target_dim if self.output == "gaussian" else self.target_dim
            if head.widths[-1] != want:
                raise ValueError(f"decoder head {k} output dimension inconsistent")
        phi0 = np.asarray(self.phi0, dtype=float).reshape(2 * d)
        object.__setattr__(self, "phi0", phi0)

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> dict:
        out = {"phi0": self.phi0}
        for name, value in self.update.params().items():
            out[f"upd.{name}"] = value
        for k, head in enumerate(self.heads):
            for name, value in head.params().items():
                out[f"dec{k}.{name}"] = value
        return out

    def with_params(self, params: dict) -> "SepFilterModel":
        update = self.update.with_params(
            {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("upd.")}
        )
        heads = tuple(
            head.with_params(
                {k.split(".", 1)[1]: v for k, v in params.items()
                 if k.startswith(f"dec{i}.")}
            )
            for i, head in enumerate(self.heads)
        )
        return SepFilterModel(self.rep_dim, self.obs_dim, self.ctrl_dim,
                              self.horizon, self.output, self.target_dim,
                              update, heads, params["phi0"])

    # -- filtering protocol ---------------------------------------------------

    def initial_phi(self) -> np.ndarray:
        return self.phi0.copy()

    def posterior_params(self, phi):
        phi = np.asarray(phi, dtype=float).reshape(2 * self.rep_dim)
        mu = phi[: self.rep_dim]
        log_std = np.clip(phi[self.rep_dim :], LOG_STD_MIN, LOG_STD_MAX)
        return mu, np.exp(log_std)

    def step(self, phi, y_next, u=None, t=None):
        phi = np.asarray(phi, dtype=float).reshape(2 * self.rep_dim)
        y_next = np.asarray(y_next, dtype=float).reshape(self.obs_dim)
        u = (np.zeros(self.ctrl_dim) if u is None
             else np.asarray(u, dtype=float).reshape(self.ctrl_dim))
        out = nn.forward(self.update, np.concatenate([phi, y_next, u])).value
        if not np.all(np.isfinite(out)):
            at = "" if t is None else f" at step {t}"
            raise FloatingPointError(f"filter update produced non-finite state{at}")
        return out

    def predict(self, phi, controls=None, samples=1, rng=None) -> dict:
        mu, sigma = self.posterior_params(phi)
        if controls is None:
            controls = np.zeros((1, self.ctrl_dim))
        else:
            controls = np.asarray(controls, dtype=float)
            if self.ctrl_dim:
                controls = controls.reshape(-1, self.ctrl_dim)
            elif controls.ndim != 2 or controls.shape[1] != 0:
                raise ValueError(
                    "without controls, select the offset with shape (k+1, 0)"
                )
        k = controls.shape[0] - 1
        if not 0 <= k <= self.horizon:
            raise ValueError(f"offset {k} outside trained horizon {self.horizon}")
        if rng is None:
            eps = np.zeros((samples, self.rep_dim))
        else:
            eps = rng.standard_normal((samples, self.rep_dim))
        x = mu + sigma * eps
        if self.ctrl_dim:
            x = np.hstack([x, np.tile(controls.ravel(), (samples, 1))])
        out = nn.forward(self.heads[k], x).value
        if self.output == "gaussian":
            means = out[:, : self.target_dim]
            log_stds = np.clip(out[:, self.target_dim :], LOG_STD_MIN, LOG_STD_MAX)
            variances = np.exp(2.0 * log_stds)
            mean = means.mean(axis=0)
            var = (variances + means**2).mean(axis=0) - mean**2
            return {
                "family": "gaussian",
                "mean": mean,
                "cov": np.diag(np.maximum(var, 1e-300)),
                "component_means": means,
                "component_vars": variances,
            }
        shifted = out - out.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        return {
            "family": "categorical",
            "probs": probs.mean(axis=0),
            "component_probs": probs,
        }

    def info(self, phi) -> float:
        """Closed-form KL(q(x|φ) || N(0, I)) — the per-step information rate."""
        mu, sigma = self.posterior_params(phi)
        return float(0.5 * np.sum(mu**2 + sigma**2 - 1.0 - 2.0 * np.log(sigma)))


def init_sep_filter(rep_dim, obs_dim, ctrl_dim=0, horizon=0, output="gaussian",
                    target_dim=None, update_hidden=(32,), decoder_hidden=(32,),
                    rng=None) -> SepFilterModel:
    """Seeded construction; the default task target is the next observation."""
    rng = np.random.default_rng(0) if rng is None else rng
    if target_dim is None:
        if output != "gaussian":
            raise ValueError("categorical output needs an explicit target_dim")
        target_dim = obs_dim
    upd_widths = [2 * rep_dim + obs_dim + ctrl_dim, *update_hidden, 2 * rep_dim]
    update = nn.init_mlp(upd_widths, ["relu"] * len(update_hidden) + ["identity"], rng)
    heads = []
    out_dim = 2 * target_dim if output == "gaussian" else target_dim
    for k in range(horizon + 1):
        widths = [rep_dim + ctrl_dim * (k + 1), *decoder_hidden, out_dim]
        heads.append(nn.init_mlp(widths, ["relu"] * len(decoder_hidden) + ["identity"], rng))
    phi0 = np.zeros(2 * rep_dim)  # q(x_0) starts at the reference N(0, I)
    return SepFilterModel(rep_dim, obs_dim, ctrl_dim, horizon, output,
                          target_dim, update, tuple(heads), phi0)


def filter_step(model, phi, y_next, u=None, t=None):
    """Advance the statistic one step: φ_{t+1} = g(φ_t, y_{t+1}, u_t).

    Purely functional and deterministic; raises with the time index when
    the update produces a non-finite state.
    """
    return model.step(phi, y_next, u, t)


def predict_task(model, phi, controls=None, samples=1, rng=None) -> dict:
    """Monte-Carlo predictive over z_{t+k} from ``samples`` posterior draws.

    ``controls`` stacks u_t..u_{t+k} (its length selects the offset k).
    With ``rng=None`` the draw collapses to the posterior mean — the
    degenerate/Dirac evaluation. Gaussian outputs report the mixture
    components and the moment-matched (mean, cov).
    """
    return model.predict(phi, controls, samples, rng)


def predictive_nll(params: dict, z) -> float:
    """Negative log-likelihood of a target under predictive parameters."""
    if params["family"] == "categorical":
        prob = params["probs"][int(np.asarray(z).ravel()[0])]
        return float(-math.log(max(prob, _PROB_FLOOR)))
    z = np.asarray(z, dtype=float).reshape(-1)
    means = params.get("component_means")
    if means is None:
        return float(-info.GaussianDistribution(params["mean"], params["cov"]).logpdf(z))
    variances = params["component_vars"]
    logps = -0.5 * (
        np.sum((z - means) ** 2 / variances, axis=1)
        + np.sum(np.log(variances), axis=1)
        + z.size * LOG2PI
    )
    return float(-(logsumexp(logps) - math.log(means.shape[0])))


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DynIBConfig:
    """Training configuration for the recurrent bottleneck objective."""

    beta: float
    traj_len: int
    steps: int
    batch: int
    seed: int
    horizon: int = 0
    tbptt: int = 16
    rep_dim: int = 4
    mc_samples: int = 1
    learning_rate: float = 0.03
    momentum: float = 0.9
    update_hidden: tuple = (32,)
    decoder_hidden: tuple = (32,)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not 0 <= self.horizon < self.traj_len:
            raise ValueError("horizon must be shorter than the trajectories")
        if self.tbptt < 1:
            raise ValueError("backpropagation window must be positive")


def _as_batch(trajectories, ctrl_dim_hint=0):
    ys, us = trajectories
    ys = np.asarray(ys)
    if us is None:
        us = np.zeros((ys.shape[0], ys.shape[1], ctrl_dim_hint))
    else:
        us = np.asarray(us, dtype=float)
    return ys, us


def dyn_ibl_loss(model, trajectories, config: DynIBConfig, samples=None, rng=None) -> dict:
    """Evaluate total = ce_term + β·info_term over a batch of trajectories.

    ce_term is (1/T) Σ_t Σ_{k=0..n} NLL(z_{t+k} | predict from φ_t);
    info_term is (1/T) Σ_t KL(q(x_t|φ_t) || N(0,I)), the per-step upper
    bound on the representation's information about the history. The
    target is the next observation: z_{t+k} = y_{t+k+1}.
    """
    ys, us = _as_batch(trajectories, getattr(model, "ctrl_dim", 0))
    B, T = ys.shape[0], ys.shape[1]
    n = config.horizon
    if n >= T:
        raise ValueError("horizon must be shorter than the trajectories")
    samples = config.mc_samples if samples is None else samples
    ce_total = 0.0
    info_total = 0.0
    for b in range(B):
        phi = model.initial_phi()
        for t in range(T):
            info_total += model.info(phi)
            for k in range(min(n, T - 1 - t) + 1):
                params = model.predict(phi, us[b, t : t + k + 1], samples, rng)
                ce_total += predictive_nll(params, ys[b, t + k])
            phi = model.step(phi, ys[b, t], us[b, t], t)
    ce_term = ce_total / (B * T)
    info_term = info_total / (B * T)
    return {
        "total": ce_term + config.beta * info_term,
        "ce_term": ce_term,
        "info_term": info_term,
    }


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainedFilter:
    model: SepFilterModel
    curve: list


def lgss_source(model: lgss.LGSSModel, T: int):
    """Trajectory source drawing from a linear-Gaussian state-space model."""

    def draw(batch, rng):
        ys = np.empty((batch, T, model.m))
        us = np.empty((batch, T, model.p))
        for b in range(batch):
            traj = lgss.simulate(model, None, T, rng)
            ys[b] = traj.y
            us[b] = traj.u
        return ys, us

    return draw


def _sep_loss_graph(model, param_nodes, ys, us, config, eps_draws):
    """Recurrent training graph over a batch; returns (total, ce, info) nodes."""
    B, T = ys.shape[0], ys.shape[1]
    d = model.rep_dim
    n = config.horizon
    upd_nodes = {k.split(".", 1)[1]: v for k, v in param_nodes.items()
                 if k.startswith("upd.")}
    head_nodes = [
        {k.split(".", 1)[1]: v for k, v in param_nodes.items()
         if k.startswith(f"dec{i}.")}
        for i in range(len(model.heads))
    ]
    phi = nn.constant(np.zeros((B, 2 * d))) + param_nodes["phi0"]
    ce_terms = []
    info_terms = []
    draw_at = 0
    for t in range(T):
        mu = phi[:, :d]
        log_std = nn.clip_n(phi[:, d:], LOG_STD_MIN, LOG_STD_MAX)
        sigma = log_std.exp()
        var = (log_std * 2.0).exp()
        kl = (0.5 * (mu * mu + var - 1.0) - log_std).sum() * (1.0 / B)
        info_terms.append(kl)
        for k in range(min(n, T - 1 - t) + 1):
            for _ in range(config.mc_samples):
                x = mu + sigma * nn.constant(eps_draws[draw_at])
                draw_at += 1
                if model.ctrl_dim:
                    flat_u = us[:, t : t + k + 1].reshape(B, -1)
                    x = nn.concat([x, nn.constant(flat_u)])
                out = nn.forward(model.heads[k], x, param_nodes=head_nodes[k])
                z = ys[:, t + k]
                if model.output == "gaussian":
                    mean = out[:, : model.target_dim]
                    dls = nn.clip_n(out[:, model.target_dim :], LOG_STD_MIN, LOG_STD_MAX)
                    resid = (nn.constant(z) - mean) * (-dls).exp()
                    nll = (0.5 * resid.square() + dls + 0.5 * LOG2PI).sum() * (1.0 / B)
                else:
                    logp = nn.log_softmax_n(out)
                    nll = -nn.gather_logprob(logp, z.astype(int)).sum() * (1.0 / B)
                ce_terms.append(nll)
        obs = ys[:, t].reshape(B, -1).astype(float)
        upd_in = nn.concat([phi, nn.constant(obs), nn.constant(us[:, t])]) \
            if model.ctrl_dim else nn.concat([phi, nn.constant(obs)])
        phi = nn.forward(model.update, upd_in, param_nodes=upd_nodes)
        if (t + 1) % config.tbptt == 0:
            phi = nn.detach(phi)
    ce = ce_terms[0]
    for term in ce_terms[1:]:
        ce = ce + term
    ce = ce * (1.0 / (T * config.mc_samples))
    kl_sum = info_terms[0]
    for term in info_terms[1:]:
        kl_sum = kl_sum + term
    kl_sum = kl_sum * (1.0 / T)
    total = ce + config.beta * kl_sum
    return total, ce, kl_sum


def train_filter(source, config: DynIBConfig, obs_dim=None, ctrl_dim=None) -> TrainedFilter:
    """Train a SepFilterModel on trajectories from ``source``.

    ``source(batch, rng)`` returns ``(ys, us)`` with shapes (B, T, obs_dim)
    and (B, T, ctrl_dim) (``us`` may be None). Gradients flow through the
    recurrent update with truncation every ``config.tbptt`` steps. The
    curve records (step, loss, ce, info). Raises
    :class:`~ibsep.nn.TrainingDiverged` with the step on non-finite loss.
    """
    seq = np.random.SeedSequence(config.seed)
    init_ss, data_ss, noise_ss = seq.spawn(3)
    data_rng = np.random.default_rng(data_ss)
    noise_rng = np.random.default_rng(noise_ss)

    probe_ys, probe_us = _as_batch(source(1, np.random.default_rng(data_ss)))
    obs_dim = probe_ys.shape[2] if obs_dim is None else obs_dim
    ctrl_dim = probe_us.shape[2] if ctrl_dim is None else ctrl_dim
    model = init_sep_filter(
        config.rep_dim, obs_dim, ctrl_dim, config.horizon, "gaussian",
        update_hidden=config.update_hidden, decoder_hidden=config.decoder_hidden,
        rng=np.random.default_rng(init_ss),
    )
    params = model.params()
    state = nn.OptimizerState(schedule=config.learning_rate, momentum=config.momentum)

    T, n = config.traj_len, config.horizon
    n_draws = config.mc_samples * sum(min(n, T - 1 - t) + 1 for t in range(T))
    curve = []
    for step in range(config.steps):
        ys, us = _as_batch(source(config.batch, data_rng), ctrl_dim)
        if ys.shape[1] != T:
            raise ValueError("source produced trajectories of the wrong length")
        eps = noise_rng.standard_normal((n_draws, config.batch, config.rep_dim))
        current = model.with_params(params)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            total, ce, kl = _sep_loss_graph(current, _param_nodes(params), ys, us,
                                            config, eps)
            if not np.isfinite(total.value):
                raise nn.TrainingDiverged(step)
            grads = nn.backward(total)
        curve.append({
            "step": step,
            "loss": float(total.value),
            "ce": float(ce.value),
            "info": float(kl.value),
        })
        try:
            params, state = nn.sgd_step(params, grads, state)
        except FloatingPointError:
            raise nn.TrainingDiverged(step)
    return TrainedFilter(model.with_params(params), curve)


def _param_nodes(params: dict) -> dict:
    return {name: nn.parameter(value, name=name) for name, value in params.items()}


# ---------------------------------------------------------------------------
# Kalman oracle embedding
# ---------------------------------------------------------------------------


class KalmanSepFilter:
    """The Kalman filter packed into the filtering protocol.

    φ stacks the posterior mean and flattened covariance, the update is the
    exact Kalman predict/update map — a deterministic function of
    (φ_t, y_{t+1}, u_t), which is what makes the Kalman filter itself a
    separating statistic — and the predictive is the closed-form Gaussian.
    ``info`` is 0: the statistic is deterministic given the history, so no
    extra stochastic coding cost is charged.
    """

    output = "gaussian"

    def __init__(self, model: lgss.LGSSModel):
        self.model = model
        self.ctrl_dim = model.p

    def initial_phi(self) -> np.ndarray:
        return np.concatenate([self.model.mu0, self.model.P0.ravel()])

    def _unpack(self, phi, t=0):
        n = self.model.n
        return lgss.KalmanState(t, phi[:n], phi[n:].reshape(n, n))

    def step(self, phi, y_next, u=None, t=None):
        state = self._unpack(np.asarray(phi, dtype=float), 0 if t is None else t)
        prior = lgss.kalman_predict(state, self.model, u)
        post = lgss.kalman_update(prior, y_next, self.model)
        return np.concatenate([post.mean, post.cov.ravel()])

    def predict(self, phi, controls=None, samples=1, rng=None) -> dict:
        state = self._unpack(np.asarray(phi, dtype=float))
        u = None
        if controls is not None:
            controls = np.atleast_2d(np.asarray(controls, dtype=float))
            if controls.shape[0] != 1:
                raise ValueError("the exact filter predicts one step ahead")
            if self.model.p:
                u = controls[0].reshape(self.model.p)
        pred = lgss.predictive_density(state, self.model, u)
        return {"family": "gaussian", "mean": pred.mean, "cov": pred.cov,
                "component_means": None, "component_vars": None}

    def info(self, phi) -> float:
        return 0.0


# ---------------------------------------------------------------------------
# evaluation against the Kalman oracle
# ---------------------------------------------------------------------------


def evaluate_vs_kalman(model, lgss_model: lgss.LGSSModel, T: int, num_traj: int,
                       seed: int, samples: int = 64) -> dict:
    """Held-out comparison of a filter against the exact Kalman predictives.

    Fresh trajectories are simulated from ``lgss_model`` (zero controls);
    for every step the learned one-step predictive of y_{t+1} is scored
    beside the Kalman one. Returns nll_learned, nll_kalman, their gap, and
    mean_kl = average KL(kalman || moment-matched learned); ``records``
    carries the per-(trajectory, step) rows.
    """
    seq = np.random.SeedSequence(seed)
    records = []
    for traj_id, child in enumerate(seq.spawn(num_traj)):
        sim_ss, eval_ss = child.spawn(2)
        traj = lgss.simulate(lgss_model, None, T, np.random.default_rng(sim_ss))
        eval_rng = np.random.default_rng(eval_ss)
        _, predictives, _ = lgss.run_filter(lgss_model, traj)
        phi = model.initial_phi()
        for t in range(T):
            params = model.predict(phi, traj.u[t : t + 1], samples, eval_rng)
            y_next = traj.y[t]
            nll_learned = predictive_nll(params, y_next)
            kal = predictives[t]
            nll_kalman = float(-kal.logpdf(y_next))
            kl = info.kl_gaussian(
                info.GaussianDistribution(kal.mean, kal.cov),
                info.GaussianDistribution(params["mean"], params["cov"]),
            )
            records.append({
                "traj_id": traj_id,
                "t": t,
                "nll_learned": nll_learned,
                "nll_kalman": nll_kalman,
                "kl": float(kl),
            })
            phi = model.step(phi, y_next, traj.u[t], t)
    nll_learned = float(np.mean([r["nll_learned"] for r in records]))
    nll_kalman = float(np.mean([r["nll_kalman"] for r in records]))
    mean_kl = float(np.mean([r["kl"] for r in records]))
    return {
        "nll_learned": nll_learned,
        "nll_kalman": nll_kalman,
        "mean_kl": mean_kl,
        "gap": nll_learned - nll_kalman,
        "records": records,
    }


def write_eval_csv(records, path) -> None:
    """Write evaluation rows as traj_id,t,nll_learned,nll_kalman,kl."""
    with open(path, "w") as fh:
        fh.write("traj_id,t,nll_learned,nll_kalman,kl\n")
        for r in records:
            fh.write(
                f"{r['traj_id']},{r['t']},{r['nll_learned']!r},"
                f"{r['nll_kalman']!r},{r['kl']!r}\n"
            )


# ---------------------------------------------------------------------------
# exact finite-HMM references
# ---------------------------------------------------------------------------

_ENUM_MAX_T = 8
_ENUM_MAX_OBS = 4


@dataclass(frozen=True)
class FiniteHMM:
    """Hidden Markov chain with finite states and observations.

    s_0 ~ init carries no emission; thereafter s_{t+1} ~ trans(s_t) and
    y_{t+1} ~ emit(s_{t+1}). The prediction task is the next observation:
    z_t = y_{t+1}.
    """

    trans: np.ndarray  # (S, S), rows p(s'|s)
    emit: np.ndarray  # (S, O), rows p(o|s)
    init: np.ndarray  # (S,)

    def __post_init__(self):
        trans = np.asarray(self.trans, dtype=float)
        emit = np.asarray(self.emit, dtype=float)
        init = np.asarray(self.init, dtype=float).reshape(-1)
        S = init.size
        if trans.shape != (S, S) or emit.shape[0] != S:
            raise ValueError("table dimensions inconsistent")
        for name, table in (("transition", trans), ("emission", emit)):
            if np.any(table < -1e-12):
                raise ValueError(f"{name} table has negative entries")
            if np.max(np.abs(table.sum(axis=1) - 1.0)) > 1e-12:
                raise ValueError(f"{name} table rows must sum to 1")
        if abs(init.sum() - 1.0) > 1e-12:
            raise ValueError("initial distribution must sum to 1")
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "emit", emit)
        object.__setattr__(self, "init", init)

    @property
    def n_states(self) -> int:
        return self.init.size

    @property
    def n_obs(self) -> int:
        return self.emit.shape[1]

    def simulate(self, T, rng):
        states = np.empty(T, dtype=int)
        obs = np.empty(T, dtype=int)
        s = rng.choice(self.n_states, p=self.init)
        for t in range(T):
            s = rng.choice(self.n_states, p=self.trans[s])
            states[t] = s
            obs[t] = rng.choice(self.n_obs, p=self.emit[s])
        return obs, states

    def forward_update(self, belief, obs):
        """One Bayes step: p(s_t | y^t) from p(s_{t-1} | y^{t-1}) and y_t."""
        pred = self.trans.T @ belief
        weighted = self.emit[:, obs] * pred
        total = weighted.sum()
        if total <= 0.0:
            raise ValueError("observation has zero probability under the model")
        return weighted / total

    def next_obs_dist(self, belief, k=0):
        """p(y_{t+k+1} | y^t) given the current posterior p(s_t | y^t)."""
        state = belief
        for _ in range(k + 1):
            state = self.trans.T @ state
        return self.emit.T @ state


class HMMExactFilter:
    """Exact Bayes filter over a FiniteHMM in the filtering protocol.

    The statistic is the forward posterior itself; the predictive is the
    exact p(z_{t+k} | y^t). This is the reference the learned filters are
    measured against — it attains the entropy lower bound by construction.
    """

    output = "categorical"
    ctrl_dim = 0

    def __init__(self, hmm: FiniteHMM):
        self.hmm = hmm

    def initial_phi(self) -> np.ndarray:
        return self.hmm.init.copy()

    def step(self, phi, y_next, u=None, t=None):
        obs = int(np.asarray(y_next).ravel()[0])
        return self.hmm.forward_update(np.asarray(phi, dtype=float), obs)

    def predict(self, phi, controls=None, samples=1, rng=None) -> dict:
        k = 0 if controls is None else np.atleast_2d(np.asarray(controls)).shape[0] - 1
        probs = self.hmm.next_obs_dist(np.asarray(phi, dtype=float), k)
        return {"family": "categorical", "probs": probs, "component_probs": None}

    def info(self, phi) -> float:
        return 0.0


def _check_enumerable(hmm: FiniteHMM, T: int):
    if T > _ENUM_MAX_T or hmm.n_obs > _ENUM_MAX_OBS:
        raise ValueError(
            f"enumeration cap exceeded: need T <= {_ENUM_MAX_T} and "
            f"|O| <= {_ENUM_MAX_OBS}, got T={T}, |O|={hmm.n_obs}"
        )


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def hmm_exact_reference(hmm: FiniteHMM, T: int, n: int = 0) -> dict:
    """Exact enumeration of all observation histories up to length T.

    Returns the entropy lower bound
    (1/T) Σ_{k=0..n} Σ_t E_{y^t} H(z_{t+k} | y^t), the per-history forward
    posteriors for every prefix, each prefix's probability, and the
    per-(t, k) expected entropies. Any predictor's loss on this chain is
    bounded below by ``entropy_lower_bound``.
    """
    _check_enumerable(hmm, T)
    if n < 0 or n >= T:
        raise ValueError("need 0 <= n < T")
    posteriors = {(): hmm.init.copy()}
    probs = {(): 1.0}
    prefixes = {0: [()]}
    for t in range(1, T + 1):
        level = []
        for prefix in prefixes[t - 1]:
            belief = posteriors[prefix]
            obs_dist = hmm.next_obs_dist(belief)
            for o in range(hmm.n_obs):
                if obs_dist[o] <= 0.0:
                    continue
                child = prefix + (o,)
                posteriors[child] = hmm.forward_update(belief, o)
                probs[child] = probs[prefix] * float(obs_dist[o])
                level.append(child)
        prefixes[t] = level
    term_entropies = {}
    total = 0.0
    for k in range(n + 1):
        for t in range(T - k):
            h = 0.0
            for prefix in prefixes[t]:
                h += probs[prefix] * _entropy(hmm.next_obs_dist(posteriors[prefix], k))
            term_entropies[(t, k)] = h
            total += h
    return {
        "entropy_lower_bound": total / T,
        "posteriors": posteriors,
        "prefix_probs": probs,
        "term_entropies": term_entropies,
    }


def nstep_bound_check(hmm: FiniteHMM, candidate, T: int, n: int = 0) -> dict:
    """Exact loss of a history→prediction candidate against the lower bound.

    ``candidate(history, k)`` returns a probability vector over the next
    observation alphabet for target z_{t+k}, where t = len(history). The
    loss is the exact expected cross-entropy (1/T) Σ_{k} Σ_t
    E_{y^t} H_x(p(z_{t+k}|y^t), candidate); slack = loss − bound is a KL
    average, hence ≥ 0, and 0 exactly when the candidate matches the true
    conditional on every positive-probability history.
    """
    reference = hmm_exact_reference(hmm, T, n)
    posteriors = reference["posteriors"]
    probs = reference["prefix_probs"]
    loss = 0.0
    for k in range(n + 1):
        for t in range(T - k):
            for prefix, belief in posteriors.items():
                if len(prefix) != t:
                    continue
                truth = hmm.next_obs_dist(belief, k)
                guess = np.asarray(candidate(prefix, k), dtype=float)
                with np.errstate(divide="ignore"):
                    logs = np.log(np.maximum(guess, _PROB_FLOOR))
                loss += probs[prefix] * float(-(truth * logs).sum())
    loss /= T
    bound = reference["entropy_lower_bound"]
    return {"loss": loss, "bound": bound, "slack": loss - bound}


def exact_posterior_candidate(hmm: FiniteHMM):
    """The Bayes-optimal candidate: replay the history, predict exactly."""

    def candidate(history, k):
        belief = hmm.init.copy()
        for obs in history:
            belief = hmm.forward_update(belief, int(obs))
        return hmm.next_obs_dist(belief, k)

    return candidate


def marginal_candidate(hmm: FiniteHMM, T: int):
    """History-ignoring candidate: the exact marginal p(z_{t+k}) per time.

    Its slack against the lower bound equals (1/T) Σ I(z_{t+k}; y^t) — the
    information the history carries that this candidate throws away.
    """
    state = hmm.init.copy()
    marginals = []
    for _ in range(T + 1):
        state = hmm.trans.T @ state
        marginals.append(hmm.emit.T @ state)

    def candidate(history, k):
        return marginals[len(history) + k]

    return candidate


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_ARCH_KEYS = {"rep_dim", "obs_dim", "ctrl_dim", "horizon", "output", "target_dim"}


def _mlp_payload(mlp: nn.MLP) -> dict:
    return {
        "widths": list(mlp.widths),
        "activations": list(mlp.activations),
        "weights": [w.tolist() for w in mlp.weights],
        "biases": [b.tolist() for b in mlp.biases],
    }


def _mlp_from_payload(payload: dict) -> nn.MLP:
    return nn.MLP(
        tuple(payload["widths"]),
        tuple(np.asarray(w, dtype=float) for w in payload["weights"]),
        tuple(np.asarray(b, dtype=float) for b in payload["biases"]),
        tuple(payload["activations"]),
    )


def save_filter_json(model: SepFilterModel, path=None) -> str:
    """Serialize architecture and weights; floats round-trip exactly.

    Values are written with shortest round-trip formatting (at most 17
    significant digits), so loading reproduces the arrays bit for bit.
    """
    payload = {
        "rep_dim": model.rep_dim,
        "obs_dim": model.obs_dim,
        "ctrl_dim": model.ctrl_dim,
        "horizon": model.horizon,
        "output": model.output,
        "target_dim": model.target_dim,
        "phi0": model.phi0.tolist(),
        "update": _mlp_payload(model.update),
        "heads": [_mlp_payload(h) for h in model.heads],
    }
    text = json.dumps(payload, indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
            fh.write("\n")
    return text


def load_filter_json(source) -> SepFilterModel:
    """Load a model written by :func:`save_filter_json` (path or string)."""
    if isinstance(source, str) and source.lstrip().startswith("{"):
        payload = json.loads(source)
    else:
        with open(source) as fh:
            payload = json.load(fh)
    missing = (_ARCH_KEYS | {"phi0", "update", "heads"}) - set(payload)
    if missing:
        raise ValueError(f"model file missing keys: {sorted(missing)}")
    return SepFilterModel(
        rep_dim=int(payload["rep_dim"]),
        obs_dim=int(payload["obs_dim"]),
        ctrl_dim=int(payload["ctrl_dim"]),
        horizon=int(payload["horizon"]),
        output=payload["output"],
        target_dim=int(payload["target_dim"]),
        update=_mlp_from_payload(payload["update"]),
        heads=tuple(_mlp_from_payload(h) for h in payload["heads"]),
        phi0=np.asarray(payload["phi0"], dtype=float),
    )
