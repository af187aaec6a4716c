"""Experiment batteries, configuration, metric files, and the sepctl CLI.

Each named experiment is a deterministic battery of checks that returns
:class:`MetricRecord` rows; the CLI persists them as ``metrics.csv`` (no
timing, so reruns with the same seed are byte-identical) plus a
``summary.json`` that carries wall-clock times. The batteries are plain
functions so the test suite can call them directly.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import control_sep, info, lgss, nn, seprep, static_ib

__all__ = [
    "EXPERIMENT_NAMES",
    "ExperimentConfig",
    "MetricRecord",
    "experiment_seed",
    "run_gradcheck",
    "run_info",
    "run_kalman",
    "run_static_ib",
    "run_seprep",
    "run_control_sep",
    "run",
    "load_config",
    "write_metrics_csv",
    "main",
]

EXPERIMENT_NAMES = ("gradcheck", "info", "kalman", "static-ib", "seprep",
                    "control-sep")


@dataclass(frozen=True)
class ExperimentConfig:
    """What to run: experiment name, root seed, output dir, overrides."""

    experiment: str
    seed: int = 0
    out: str = "results"
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_NAMES + ("all",):
            raise ValueError(
                f"unknown experiment {self.experiment!r}; choose from "
                f"{', '.join(EXPERIMENT_NAMES + ('all',))}"
            )


@dataclass(frozen=True)
class MetricRecord:
    """One checked quantity: value, tolerance, verdict, wall-clock seconds."""

    experiment: str
    key: str
    value: float
    tolerance: float | None
    status: str  # "pass" | "fail" | "report"
    seconds: float

    def __post_init__(self):
        if self.status not in ("pass", "fail", "report"):
            raise ValueError(f"bad status {self.status!r}")
        if not np.isfinite(self.value) and self.status == "pass":
            raise ValueError("non-finite value cannot pass")


def experiment_seed(root_seed: int, name: str) -> int:
    """Derived 64-bit stream seed: hash of (root seed, experiment name).

    Running a subset of experiments must draw the same randomness for each
    as running them all, so the streams are decoupled by hashing instead
    of splitting sequentially.
    """
    digest = hashlib.sha256(f"{int(root_seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class _Clock:
    def __init__(self):
        self._last = time.perf_counter()

    def lap(self) -> float:
        now = time.perf_counter()
        dt = now - self._last
        self._last = now
        return dt


_DEFAULTS = {
    "gradcheck": {"models": 100, "fd_step": 1e-4, "tol": 1e-5},
    "info": {"instances": 1000, "tol": 1e-12},
    "kalman": {"models": 20, "tol": 1e-8, "riccati_models": 5,
               "riccati_T": 1000},
    "static-ib": {"encoders": 100, "train_seeds": 3, "train_steps": 400,
                  "flatness_steps": 150},
    "seprep": {"train_seeds": 3, "train_steps": 1000,
               "betas": (1e-1, 1e-2, 1e-3), "traj_len": 40, "batch": 16,
               "rep_dim": 4, "eval_traj": 50, "hmm_T": 6,
               "rand_candidates": 20},
    "control-sep": {"instances": 20},
}


def _opts(name: str, overrides) -> dict:
    merged = dict(_DEFAULTS[name])
    for key, value in (overrides or {}).items():
        if key in merged:
            merged[key] = value
    return merged


def _check(experiment, key, value, tolerance, ok, clock) -> MetricRecord:
    status = "pass" if ok else "fail"
    return MetricRecord(experiment, key, float(value), tolerance, status,
                        clock.lap())


def _report(experiment, key, value, clock) -> MetricRecord:
    return MetricRecord(experiment, key, float(value), None, "report",
                        clock.lap())


# ---------------------------------------------------------------------------
# gradcheck: backward pass vs central finite differences
# ---------------------------------------------------------------------------


def _fd_gradients(loss_fn, params, step):
    grads = {}
    for name, value in params.items():
        g = np.zeros_like(value)
        flat = value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn(params)
            flat[i] = orig - step
            lo = loss_fn(params)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        grads[name] = g
    return grads


def _min_preactivation_gap(mlp, x) -> float:
    """Distance of the nearest hidden pre-activation from the ReLU kink."""
    gap = np.inf
    h = x
    for w, b, act in zip(mlp.weights, mlp.biases, mlp.activations):
        pre = h @ w + b
        if act == "relu":
            gap = min(gap, float(np.min(np.abs(pre))))
            h = np.maximum(pre, 0.0)
        else:
            h = pre
    return gap


def run_gradcheck(seed: int, overrides=None) -> list:
    """Random MLP battery: analytic gradients vs central finite differences.

    Finite differences are only valid away from the ReLU kink, so each
    (model, input) pair is resampled until every hidden pre-activation
    clears the kink by more than any FD perturbation can move it.
    """
    opts = _opts("gradcheck", overrides)
    rng = np.random.default_rng(seed)
    clock = _Clock()
    margin = 50.0 * float(opts["fd_step"])
    worst = 0.0
    for index in range(int(opts["models"])):
        while True:
            depth = int(rng.integers(1, 3))
            widths = [int(rng.integers(2, 6)) for _ in range(depth + 2)]
            acts = ["relu"] * depth + ["identity"]
            mlp = nn.init_mlp(widths, acts, rng)
            params = mlp.params()
            for name in params:
                if name.startswith("b"):
                    params[name] = rng.normal(0.0, 0.1, size=params[name].shape)
            mlp = mlp.with_params(params)
            x = rng.standard_normal((3, widths[0]))
            if _min_preactivation_gap(mlp, x) > margin:
                break
        mode = "ce" if index % 2 == 0 else "quad"
        labels = rng.integers(0, widths[-1], size=3)

        def graph_loss(nodes):
            out = nn.forward(mlp, x, param_nodes=nodes)
            if mode == "ce":
                return -(nn.gather_logprob(nn.log_softmax_n(out), labels).mean())
            return (out.square().sum()) * 0.5

        nodes = {k: nn.parameter(v, name=k) for k, v in params.items()}
        analytic = nn.backward(graph_loss(nodes))
        fd = _fd_gradients(
            lambda p: float(graph_loss({k: nn.constant(v) for k, v in p.items()}).value),
            {k: v.copy() for k, v in params.items()},
            opts["fd_step"],
        )
        for name in params:
            a, f = analytic[name], fd[name]
            denom = max(1e-8, float(np.max(np.abs(a))), float(np.max(np.abs(f))))
            worst = max(worst, float(np.max(np.abs(a - f))) / denom)
    return [
        _check("gradcheck", "max_rel_error", worst, opts["tol"],
               worst < opts["tol"], clock),
        _report("gradcheck", "models_checked", int(opts["models"]), clock),
    ]


# ---------------------------------------------------------------------------
# info: exact identities on random discrete instances
# ---------------------------------------------------------------------------


def run_info(seed: int, overrides=None) -> list:
    """Mutual-information identity and cross-entropy decomposition."""
    opts = _opts("info", overrides)
    rng = np.random.default_rng(seed)
    clock = _Clock()
    n = int(opts["instances"])

    mi_err = 0.0
    for _ in range(n):
        kx = int(rng.integers(2, 6))
        ky = int(rng.integers(2, 6))
        prior = info.DiscreteDistribution(rng.dirichlet(np.ones(kx)))
        channel = info.DiscreteChannel(rng.dirichlet(np.ones(ky), size=kx))
        sides = info.mi_identity_check(prior, channel)
        mi_err = max(mi_err, abs(sides["lhs"] - sides["rhs"]))
    records = [_check("info", "mi_identity_max_abs_err", mi_err,
                      opts["tol"], mi_err < opts["tol"], clock)]

    ce_err = 0.0
    for _ in range(n):
        k = int(rng.integers(2, 9))
        p = info.DiscreteDistribution(rng.dirichlet(np.ones(k)))
        q = info.DiscreteDistribution(rng.dirichlet(np.ones(k)))
        lhs = info.cross_entropy_discrete(p, q)
        rhs = info.entropy(p) + info.kl_discrete(p, q)
        ce_err = max(ce_err, abs(lhs - rhs))
    records.append(_check("info", "ce_decomposition_max_abs_err", ce_err,
                          opts["tol"], ce_err < opts["tol"], clock))
    return records


# ---------------------------------------------------------------------------
# kalman: recursive filter vs batch conditioning, Riccati fixed point
# ---------------------------------------------------------------------------


def run_kalman(seed: int, overrides=None) -> list:
    """Filter-vs-oracle agreement on random stable state-space models."""
    opts = _opts("kalman", overrides)
    rng = np.random.default_rng(seed)
    clock = _Clock()

    filter_dev = 0.0
    models = []
    for _ in range(int(opts["models"])):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 3))
        model = lgss.random_stable_model(rng, n=n, m=m)
        models.append(model)
        T = int(rng.integers(10, 51))
        traj = lgss.simulate(model, None, T, rng)
        posteriors, _, _ = lgss.run_filter(model, traj)
        for t in (max(1, T // 2), T):
            oracle = lgss.batch_posterior_oracle(model, traj, t)
            state = posteriors[t - 1]
            filter_dev = max(
                filter_dev,
                float(np.max(np.abs(state.mean - oracle.mean))),
                float(np.max(np.abs(state.cov - oracle.cov))),
            )
    records = [_check("kalman", "filter_vs_batch_max_dev", filter_dev,
                      opts["tol"], filter_dev < opts["tol"], clock)]

    riccati_dev = 0.0
    T = int(opts["riccati_T"])
    for model in models[: int(opts["riccati_models"])]:
        fixed = lgss.riccati_iterate(model, 2.0 * np.eye(model.n), 5 * T)
        traj = lgss.simulate(model, None, T, rng)
        posteriors, _, _ = lgss.run_filter(model, traj)
        riccati_dev = max(riccati_dev,
                          float(np.max(np.abs(posteriors[-1].cov - fixed))))
    records.append(_check("kalman", "riccati_vs_filter_max_dev", riccati_dev,
                          opts["tol"], riccati_dev < opts["tol"], clock))
    return records


# ---------------------------------------------------------------------------
# static-ib: invariance bound, stacking, endpoints, flatness
# ---------------------------------------------------------------------------


def _flatness_records(opts, seed, clock) -> list:
    rng = np.random.default_rng(seed)
    xs = np.vstack([rng.normal(-1.0, 0.4, (20, 2)),
                    rng.normal(1.0, 0.4, (20, 2))])
    labels = np.array([0] * 20 + [1] * 20)
    post, _, _ = static_ib.train_weight_posterior(
        xs, labels, [2, 4, 2], 1e-2, seed, steps=int(opts["flatness_steps"]))
    names = sorted(post.mu)
    shapes = [post.mu[k].shape for k in names]
    sizes = [int(np.prod(s)) for s in shapes]

    def unflatten(w):
        parts, at = {}, 0
        for name, shape, size in zip(names, shapes, sizes):
            parts[name] = w[at:at + size].reshape(shape)
            at += size
        return parts

    def loss(w):
        logits = nn.forward(post.template.with_params(unflatten(w)), xs).value
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return -float(np.mean(logp[np.arange(labels.size), labels]))

    w_hat = np.concatenate([post.mu[k].ravel() for k in names])
    out = static_ib.flatness_diagnostic(loss, w_hat, beta=1e-2, K=w_hat.size)
    records = [
        _check("static-ib", "flatness_all_finite", 1.0 if out["finite"] else 0.0,
               None, bool(out["finite"]), clock),
        _report("static-ib", "flatness_info_estimate", out["info_estimate"], clock),
        _report("static-ib", "flatness_bound_rhs", out["bound_rhs"], clock),
        _report("static-ib", "flatness_hessian_trace", out["hessian_trace"], clock),
    ]
    # analytic probe: quadratic loss with known Hessian trace
    lam, K = 0.7, 6
    probe = static_ib.flatness_diagnostic(
        lambda w: 0.5 * lam * float(np.dot(w, w)), np.full(K, 0.3),
        beta=1e-2, K=K)
    err = abs(probe["hessian_trace"] - lam * K)
    records.append(_check("static-ib", "flatness_quadratic_trace_err", err,
                          1e-6, err < 1e-6, clock))
    return records


def run_static_ib(seed: int, overrides=None) -> list:
    """Invariance battery, stacked channels, training endpoints, flatness."""
    opts = _opts("static-ib", overrides)
    rng = np.random.default_rng(seed)
    clock = _Clock()
    records = []

    # invariance bound over random separated encoders on bijective tasks
    min_margin = np.inf
    min_eps = np.inf
    max_excess = -np.inf
    for index in range(int(opts["encoders"])):
        task = static_ib.make_nuisance_task(int(rng.integers(2, 5)),
                                            int(rng.integers(2, 5)),
                                            seed=int(rng.integers(2**31)))
        encoder = static_ib.random_separated_encoder(task, rng)
        rep = static_ib.measure_invariance(encoder, task)
        min_margin = min(min_margin, rep.i_xy - rep.i_yz + 0.02 - rep.i_xn)
        min_eps = min(min_eps, rep.epsilon)
        max_excess = max(max_excess, rep.epsilon - rep.h_z_given_y - 0.02)
    records.append(_check("static-ib", "invariance_min_bound_margin",
                          min_margin, 0.02, min_margin >= 0.0, clock))
    # epsilon >= 0 holds exactly for sufficient encoders; the floor absorbs
    # the Gaussian tail overlap of the near-deterministic encoder family
    # (means 0.3 apart, sigma <= 0.03) plus grid roundoff
    records.append(_check("static-ib", "epsilon_min", min_eps, 1e-6,
                          min_eps >= -1e-6, clock))
    records.append(_check("static-ib", "epsilon_max_excess_over_hzy",
                          max_excess, 0.02, max_excess <= 0.0, clock))

    # stacking: deterministic second layer keeps information exactly;
    # injected noise can only lose it, about the task and the nuisance both
    task = static_ib.make_nuisance_task(3, 2, seed=11)
    exact = static_ib.stacked_bottleneck_experiment(
        task, widths=[1, 4, 4], noise_levels=[0.05, 0.0, 0.0],
        seed=int(rng.integers(2**31)))
    dpi_violation = max(b.i_xy - a.i_xy for a, b in zip(exact, exact[1:]))
    records.append(_check("static-ib", "stack_exact_dpi_max_violation",
                          dpi_violation, 1e-12, dpi_violation <= 1e-12, clock))
    noisy = static_ib.stacked_bottleneck_experiment(
        task, widths=[1, 4, 4], noise_levels=[0.05, 0.05, 0.1],
        seed=int(rng.integers(2**31)))
    nuisance_rise = max(b.i_xn - a.i_xn for a, b in zip(noisy, noisy[1:]))
    records.append(_check("static-ib", "stack_noisy_nuisance_max_increase",
                          nuisance_rise, 1e-12, nuisance_rise <= 1e-12, clock))

    # training endpoints, averaged over seeds
    task = static_ib.make_nuisance_task(2, 2, seed=0)
    steps = int(opts["train_steps"])
    n_seeds = int(opts["train_seeds"])
    accs, bounds, devs = [], [], []
    for s in range(n_seeds):
        free = static_ib.train_ib(task, static_ib.IBLConfig(
            beta=0.0, rep_dim=1, steps=steps, batch=64, seed=seed + s))
        accs.append(static_ib.eval_accuracy(free.encoder, free.decoder, task,
                                            256, np.random.default_rng(123 + s)))
        squeezed = static_ib.train_ib(task, static_ib.IBLConfig(
            beta=1e3, rep_dim=1, steps=steps, batch=64, seed=seed + s,
            learning_rate=1e-4))
        bounds.append(static_ib.info_bound_exact(squeezed.encoder, task))
        acc = static_ib.eval_accuracy(squeezed.encoder, squeezed.decoder,
                                      task, 512, np.random.default_rng(321 + s))
        devs.append(abs(acc - 1.0 / task.z_card))
    mean_acc = float(np.mean(accs))
    mean_bound = float(np.mean(bounds))
    mean_dev = float(np.mean(devs))
    records.append(_check("static-ib", "beta0_mean_accuracy", mean_acc,
                          0.01, mean_acc >= 0.99, clock))
    records.append(_check("static-ib", "hi_beta_mean_info_bound", mean_bound,
                          0.01, mean_bound < 0.01, clock))
    records.append(_check("static-ib", "hi_beta_mean_accuracy_dev", mean_dev,
                          0.05, mean_dev <= 0.05, clock))

    records.extend(_flatness_records(opts, seed, clock))
    return records


# ---------------------------------------------------------------------------
# seprep: prediction bounds, Kalman embedding, trained filters
# ---------------------------------------------------------------------------


def _scalar_lgss() -> lgss.LGSSModel:
    return lgss.LGSSModel(A=[[0.9]], B=np.zeros((1, 0)), C=[[1.0]],
                          Q=[[0.1]], R=[[0.1]], mu0=[0.0], P0=[[1.0]])


def _hmm_instances(rng):
    fixed = seprep.FiniteHMM(trans=[[0.8, 0.2], [0.3, 0.7]],
                             emit=[[0.9, 0.1], [0.2, 0.8]],
                             init=[0.6, 0.4])
    random3 = seprep.FiniteHMM(trans=rng.dirichlet(np.ones(3) * 5, size=3),
                               emit=rng.dirichlet(np.ones(3) * 5, size=3),
                               init=rng.dirichlet(np.ones(3) * 5))
    return [fixed, random3]


def _marginal_slack_identity_err(hmm, T) -> float:
    """|slack(marginal candidate) - (1/T) sum_t I(z_t; y^t)|, both exact."""
    ref = seprep.hmm_exact_reference(hmm, T)
    mi_sum = 0.0
    for t in range(T):
        prefixes = [p for p in ref["prefix_probs"] if len(p) == t]
        truths = {p: hmm.next_obs_dist(ref["posteriors"][p]) for p in prefixes}
        marginal = sum(ref["prefix_probs"][p] * truths[p] for p in prefixes)
        for p in prefixes:
            ratio = np.log(truths[p] / marginal, where=truths[p] > 0,
                           out=np.zeros_like(marginal))
            mi_sum += ref["prefix_probs"][p] * float((truths[p] * ratio).sum())
    out = seprep.nstep_bound_check(hmm, seprep.marginal_candidate(hmm, T), T)
    return abs(out["slack"] - mi_sum / T)


def run_seprep(seed: int, overrides=None) -> list:
    """Entropy bounds on enumerable HMMs, the Kalman embedding, training."""
    opts = _opts("seprep", overrides)
    rng = np.random.default_rng(seed)
    clock = _Clock()
    records = []

    # n-step prediction loss: bound, attainment, and the marginal's slack
    T = int(opts["hmm_T"])
    exact_slack = 0.0
    marginal_err = 0.0
    min_slack = np.inf
    for hmm in _hmm_instances(rng):
        out = seprep.nstep_bound_check(
            hmm, seprep.exact_posterior_candidate(hmm), T)
        exact_slack = max(exact_slack, abs(out["slack"]))
        marginal_err = max(marginal_err, _marginal_slack_identity_err(hmm, T))
        for _ in range(int(opts["rand_candidates"])):
            table = {}

            def candidate(history, k, _t=table, _h=hmm):
                key = (history, k)
                if key not in _t:
                    _t[key] = rng.dirichlet(np.ones(_h.n_obs))
                return _t[key]

            chk = seprep.nstep_bound_check(hmm, candidate, T)
            min_slack = min(min_slack, chk["slack"])
    records.append(_check("seprep", "hmm_exact_candidate_max_abs_slack",
                          exact_slack, 1e-9, exact_slack < 1e-9, clock))
    records.append(_check("seprep", "hmm_marginal_slack_identity_err",
                          marginal_err, 1e-9, marginal_err < 1e-9, clock))
    records.append(_check("seprep", "hmm_min_candidate_slack", min_slack,
                          1e-12, min_slack >= -1e-12, clock))

    # the Kalman filter, embedded as a filtering model, is exact
    scalar = _scalar_lgss()
    embed = seprep.evaluate_vs_kalman(seprep.KalmanSepFilter(scalar), scalar,
                                      T=int(opts["traj_len"]), num_traj=10,
                                      seed=int(rng.integers(2**31)))
    records.append(_check("seprep", "kalman_embed_abs_nll_gap",
                          abs(embed["gap"]), 1e-9,
                          abs(embed["gap"]) < 1e-9, clock))
    records.append(_check("seprep", "kalman_embed_mean_kl", embed["mean_kl"],
                          1e-9, embed["mean_kl"] < 1e-9, clock))

    # trained filters: a beta sweep; the smallest beta doubles as the
    # near-optimality candidate evaluated against the Kalman oracle
    betas = sorted((float(b) for b in opts["betas"]), reverse=True)
    steps = int(opts["train_steps"])
    n_seeds = int(opts["train_seeds"])
    source = seprep.lgss_source(scalar, int(opts["traj_len"]))
    tail = max(1, min(50, steps // 4))
    ce_by_beta = {}
    models_smallest = []
    drops = []
    for beta in betas:
        finals = []
        for s in range(n_seeds):
            cfg = seprep.DynIBConfig(
                beta=beta, traj_len=int(opts["traj_len"]), steps=steps,
                batch=int(opts["batch"]), seed=seed + s,
                rep_dim=int(opts["rep_dim"]),
                # linear warmup tames the early recurrent instability,
                # then a 1/k decay takes over
                learning_rate=lambda k: (0.04 * min((k + 1) / 100.0, 1.0)
                                         / (1.0 + k / 250.0)),
                momentum=0.9)
            trained = seprep.train_filter(source, cfg)
            finals.append(float(np.mean([r["ce"] for r in trained.curve[-tail:]])))
            drops.append(1.0 - trained.curve[-1]["loss"] / trained.curve[0]["loss"])
            if beta == betas[-1]:
                models_smallest.append(trained.model)
        ce_by_beta[beta] = (float(np.mean(finals)), float(np.std(finals)))
    worst_rise = -np.inf
    for hi, lo in zip(betas, betas[1:]):
        allowance = 2.0 * max(ce_by_beta[hi][1], ce_by_beta[lo][1])
        worst_rise = max(worst_rise,
                         ce_by_beta[lo][0] - ce_by_beta[hi][0] - allowance)
    records.append(_check("seprep", "sweep_ce_max_increase", worst_rise,
                          0.0, worst_rise <= 0.0, clock))
    records.append(_report("seprep", "sweep_min_loss_drop",
                           float(np.min(drops)), clock))

    rel_gaps, kls = [], []
    for index, model in enumerate(models_smallest):
        ev = seprep.evaluate_vs_kalman(model, scalar, T=int(opts["traj_len"]),
                                       num_traj=int(opts["eval_traj"]),
                                       seed=90_000 + index, samples=64)
        rel_gaps.append(ev["gap"] / abs(ev["nll_kalman"]))
        kls.append(ev["mean_kl"])
    mean_rel = float(np.mean(rel_gaps))
    mean_kl = float(np.mean(kls))
    records.append(_check("seprep", "learned_mean_rel_nll_gap", mean_rel,
                          0.05, mean_rel < 0.05, clock))
    records.append(_check("seprep", "learned_mean_kl", mean_kl, 0.05,
                          mean_kl < 0.05, clock))
    return records


# ---------------------------------------------------------------------------
# control-sep: belief separation on random POMDPs
# ---------------------------------------------------------------------------


def run_control_sep(seed: int, overrides=None) -> list:
    """Q* separation, belief-policy optimality, reward sufficiency."""
    opts = _opts("control-sep", overrides)
    rng = np.random.default_rng(seed)
    clock = _Clock()

    instances = [control_sep.belief_collision_pomdp()]
    for _ in range(int(opts["instances"])):
        instances.append(control_sep.random_pomdp(
            rng,
            n_states=int(rng.integers(2, 5)),
            n_actions=int(rng.integers(2, 4)),
            n_obs=int(rng.integers(2, 4)),
            horizon=int(rng.integers(3, 6)),
        ))
    max_spread = 0.0
    max_gap = 0.0
    max_dev = 0.0
    for pomdp in instances:
        nodes = control_sep.brute_force_q(pomdp)
        report = control_sep.verify_separation(pomdp, nodes=nodes)
        max_spread = max(max_spread, report["max_q_spread"])
        policy = control_sep.belief_policy(pomdp, nodes=nodes)
        gap = abs(control_sep.policy_return(pomdp, policy)
                  - control_sep.optimal_return(pomdp, nodes=nodes))
        max_gap = max(max_gap, gap)
        rep = control_sep.exact_belief_representation(pomdp)
        out = control_sep.reward_sufficiency_check(pomdp, rep, nodes=nodes)
        max_dev = max(max_dev, out["max_dev"])
    records = [
        _check("control-sep", "separation_max_q_spread", max_spread, 1e-9,
               max_spread < 1e-9, clock),
        _check("control-sep", "policy_max_return_gap", max_gap, 1e-9,
               max_gap < 1e-9, clock),
        _check("control-sep", "reward_sufficiency_max_dev", max_dev, 1e-9,
               max_dev < 1e-9, clock),
    ]
    collision = instances[0]
    nodes = control_sep.brute_force_q(collision)
    report = control_sep.verify_separation(collision, nodes=nodes)
    compression = len(nodes) - report["groups"]
    records.append(_check("control-sep", "collision_group_compression",
                          compression, None, compression >= 1, clock))
    insufficient = control_sep.reward_sufficiency_check(
        control_sep.counterexample_pomdp(),
        control_sep.collapsing_representation(control_sep.counterexample_pomdp()))
    records.append(_check("control-sep", "collapsing_rep_max_dev",
                          insufficient["max_dev"], None,
                          insufficient["max_dev"] > 1e-3, clock))
    return records


_BATTERIES = {
    "gradcheck": run_gradcheck,
    "info": run_info,
    "kalman": run_kalman,
    "static-ib": run_static_ib,
    "seprep": run_seprep,
    "control-sep": run_control_sep,
}


# ---------------------------------------------------------------------------
# persistence and orchestration
# ---------------------------------------------------------------------------


def write_metrics_csv(records, path) -> None:
    """CSV with shortest round-trip floats; excludes timing so identical
    seeds write byte-identical files."""
    with open(path, "w") as fh:
        fh.write("experiment,key,value,tolerance,status\n")
        for r in records:
            tol = "" if r.tolerance is None else repr(float(r.tolerance))
            fh.write(f"{r.experiment},{r.key},{float(r.value)!r},{tol},{r.status}\n")


def _write_summary(records, path, config, seconds) -> None:
    payload = {
        "experiment": records[0].experiment if records else None,
        "root_seed": config.seed,
        "overrides": config.overrides,
        "all_pass": all(r.status != "fail" for r in records),
        "seconds_total": seconds,
        "records": [
            {"key": r.key, "value": r.value, "tolerance": r.tolerance,
             "status": r.status, "seconds": r.seconds}
            for r in records
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def run(config: ExperimentConfig) -> list:
    """Execute the named experiment(s); write metrics.csv + summary.json each.

    Returns every MetricRecord produced. Override keys must be recognized
    by at least one selected battery.
    """
    names = EXPERIMENT_NAMES if config.experiment == "all" else (config.experiment,)
    known = set()
    for name in names:
        known |= set(_DEFAULTS[name])
    for key in config.overrides:
        if key not in known:
            raise ValueError(f"unknown override key {key!r} for "
                             f"{config.experiment!r}")
    all_records = []
    for name in names:
        stream = experiment_seed(config.seed, name)
        started = time.perf_counter()
        records = _BATTERIES[name](stream, config.overrides)
        elapsed = time.perf_counter() - started
        outdir = Path(config.out) / name
        outdir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(records, outdir / "metrics.csv")
        _write_summary(records, outdir / "summary.json", config, elapsed)
        all_records.extend(records)
    return all_records


_CONFIG_KEYS = {"experiment", "seed", "out", "overrides"}


def load_config(path) -> ExperimentConfig:
    """Read a JSON config; unknown keys are rejected by name."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ValueError(f"cannot read config {path}: {err}")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as err:
        raise ValueError(f"config {path}: {err}")  # message carries line/column
    if not isinstance(payload, dict):
        raise ValueError(f"config {path}: expected a JSON object")
    unknown = sorted(set(payload) - _CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config key {unknown[0]!r}")
    if "experiment" not in payload:
        raise ValueError("config missing required key 'experiment'")
    overrides = payload.get("overrides", {})
    if not isinstance(overrides, dict):
        raise ValueError("'overrides' must be a JSON object")
    return ExperimentConfig(payload["experiment"], int(payload.get("seed", 0)),
                            str(payload.get("out", "results")), dict(overrides))


def _parse_set(text: str) -> tuple:
    if "=" not in text:
        raise ValueError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def main(argv=None) -> int:
    """``sepctl <experiment> [--seed N] [--config PATH] [--out DIR]
    [--set key=value]...`` — run a battery and persist its metrics.

    Exit codes: 0 all checks pass, 1 a check failed, 2 usage/config error.
    CLI flags take precedence over config-file values.
    """
    parser = argparse.ArgumentParser(
        prog="sepctl",
        description="Run verification experiment batteries.")
    parser.add_argument("experiment", choices=EXPERIMENT_NAMES + ("all",))
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--config", default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--set", action="append", default=[], dest="sets",
                        metavar="KEY=VALUE")
    args = parser.parse_args(argv)
    try:
        if args.config is not None:
            base = load_config(args.config)
        else:
            base = ExperimentConfig(args.experiment)
        overrides = dict(base.overrides)
        overrides.update(dict(_parse_set(s) for s in args.sets))
        config = ExperimentConfig(
            args.experiment,
            base.seed if args.seed is None else args.seed,
            base.out if args.out is None else args.out,
            overrides,
        )
        records = run(config)
    except (ValueError, OSError) as err:
        print(f"sepctl: {err}", file=sys.stderr)
        return 2
    for r in records:
        tol = "" if r.tolerance is None else f" (tol {r.tolerance!r})"
        print(f"{r.experiment}/{r.key}: {r.value!r}{tol} [{r.status}]")
    failed = [r for r in records if r.status == "fail"]
    print(f"{len(records) - len(failed)}/{len(records)} checks pass")
    return 1 if failed else 0
