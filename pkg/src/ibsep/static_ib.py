"""Static information-bottleneck training and exact invariance measurement.

The objects here live on small synthetic tasks built from a task variable z
and an independent nuisance n, observed through y = f(z, n). A stochastic
encoder maps y to a diagonal-Gaussian representation x; training minimizes

    cross-entropy(z | x)  +  beta * E_y KL( q(x|y) || r(x) ),

with r(x) a fixed standard normal, so the penalty term is a provable upper
bound on I(x; y). Because the tasks are finite and the posteriors are
Gaussian, every information quantity can be computed by exact enumeration
after quantizing x on a fixed grid; that enumeration is the oracle used by
the invariance and stacking checks, and nothing in this module estimates
information from samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import info, nn

__all__ = [
    "NuisanceTask",
    "StochasticEncoder",
    "IBLConfig",
    "WeightPosterior",
    "InvarianceReport",
    "Quantization",
    "TrainingDiverged",
    "TrainResult",
    "make_nuisance_task",
    "random_separated_encoder",
    "constant_encoder",
    "ibl_loss",
    "info_bound_exact",
    "train_ib",
    "eval_accuracy",
    "measure_invariance",
    "stacked_bottleneck_experiment",
    "weight_info_regularized_loss",
    "train_weight_posterior",
    "flatness_diagnostic",
    "load_ib_config",
    "save_ib_config",
    "write_curve_csv",
]

LOG_STD_MIN = -6.0
LOG_STD_MAX = 2.0

TrainingDiverged = nn.TrainingDiverged


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NuisanceTask:
    """Finite task: z ~ p(z) and an independent nuisance n ~ p(n) generate
    the observation y = f(z, n).

    ``f_map[z, n]`` is the observation index; independence of z and n makes
    I(z; n) = 0 by construction, and the constructor rejects maps that are
    not surjective onto 0..y_card-1 or that are constant (a task nothing
    could be learned from).
    """

    z_card: int
    n_card: int
    p_z: np.ndarray
    p_n: np.ndarray
    f_map: np.ndarray  # shape (z_card, n_card), values in 0..y_card-1

    def __post_init__(self):
        p_z = info.DiscreteDistribution(self.p_z).probs
        p_n = info.DiscreteDistribution(self.p_n).probs
        f_map = np.asarray(self.f_map, dtype=int)
        if f_map.shape != (self.z_card, self.n_card):
            raise ValueError("observation map shape must be (z_card, n_card)")
        y_card = int(f_map.max()) + 1
        if f_map.min() < 0:
            raise ValueError("observation indices must be non-negative")
        attained = np.unique(f_map)
        if attained.size != y_card:
            raise ValueError("observation map must be surjective onto its range")
        if y_card < 2:
            raise ValueError("degenerate observation map: constant f carries no signal")
        object.__setattr__(self, "p_z", p_z)
        object.__setattr__(self, "p_n", p_n)
        object.__setattr__(self, "f_map", f_map)

    @property
    def y_card(self) -> int:
        return int(self.f_map.max()) + 1

    def joint_zny(self) -> info.DiscreteJoint:
        """Exact joint p(z, n, y) as a three-axis table."""
        table = np.zeros((self.z_card, self.n_card, self.y_card))
        for z in range(self.z_card):
            for n in range(self.n_card):
                table[z, n, self.f_map[z, n]] = self.p_z[z] * self.p_n[n]
        return info.DiscreteJoint(("z", "n", "y"), table)

    def observation_prior(self) -> np.ndarray:
        return self.joint_zny().marginal_table("y")

    def sample_batch(self, batch, rng):
        """Draw (y indices, z labels) from the generative model."""
        z = rng.choice(self.z_card, size=batch, p=self.p_z)
        n = rng.choice(self.n_card, size=batch, p=self.p_n)
        return self.f_map[z, n], z

    def describe(self) -> dict:
        return {
            "z_card": self.z_card,
            "n_card": self.n_card,
            "y_card": self.y_card,
            "f_map": self.f_map.tolist(),
        }


def make_nuisance_task(z_card, n_card, rule="bijective", seed=0, y_card=None) -> NuisanceTask:
    """Build a synthetic nuisance task.

    rule="bijective" (default): y enumerates the pairs (z, n) through a
    seeded random relabeling, so |y| = |z|*|n| and y determines both z and
    n. rule="lossy": a random surjective map onto ``y_card`` < |z|*|n|
    observations, giving tasks with H(z|y) > 0. Priors are uniform.
    """
    if z_card < 2:
        raise ValueError("need at least two task classes")
    if n_card < 1:
        raise ValueError("need at least one nuisance value")
    rng = np.random.default_rng(seed)
    if rule == "bijective":
        labels = rng.permutation(z_card * n_card)
        f_map = labels.reshape(z_card, n_card)
    elif rule == "lossy":
        total = z_card * n_card
        if y_card is None:
            y_card = max(2, total - max(1, total // 4))
        if not 2 <= y_card <= total:
            raise ValueError(f"lossy rule needs 2 <= y_card <= {total}")
        # guarantee surjectivity, then fill the rest at random
        values = np.concatenate([
            np.arange(y_card),
            rng.integers(0, y_card, size=total - y_card),
        ])
        f_map = rng.permutation(values).reshape(z_card, n_card)
    elif rule == "constant":
        f_map = np.zeros((z_card, n_card), dtype=int)
    else:
        raise ValueError(f"unknown construction rule {rule!r}")
    return NuisanceTask(
        z_card=z_card,
        n_card=n_card,
        p_z=np.full(z_card, 1.0 / z_card),
        p_n=np.full(n_card, 1.0 / n_card),
        f_map=f_map,
    )


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StochasticEncoder:
    """MLP from one-hot y to (mean, log-std) of a diagonal Gaussian over x.

    The network's output dimension is 2*rep_dim; log-stds are clamped to
    [-6, 2] wherever they are used.
    """

    mlp: nn.MLP
    rep_dim: int

    def __post_init__(self):
        if self.mlp.widths[-1] != 2 * self.rep_dim:
            raise ValueError("encoder output must have dimension 2*rep_dim")

    @staticmethod
    def random(y_card, rep_dim, rng, hidden=(16,)) -> "StochasticEncoder":
        widths = [y_card, *hidden, 2 * rep_dim]
        acts = ["relu"] * len(hidden) + ["identity"]
        return StochasticEncoder(nn.init_mlp(widths, acts, rng), rep_dim)

    @staticmethod
    def from_table(means, log_stds) -> "StochasticEncoder":
        """Encoder with an explicit per-y posterior table.

        Realized as a single identity-activation layer on one-hot inputs,
        so the table rows are exactly the network outputs.
        """
        means = np.atleast_2d(np.asarray(means, dtype=float))
        log_stds = np.atleast_2d(np.asarray(log_stds, dtype=float))
        if means.shape != log_stds.shape:
            raise ValueError("means and log-stds must have matching shapes")
        y_card, rep_dim = means.shape
        W = np.hstack([means, log_stds])
        mlp = nn.MLP((y_card, 2 * rep_dim), (W,), (np.zeros(2 * rep_dim),), ("identity",))
        return StochasticEncoder(mlp, rep_dim)

    def posterior_table(self, y_card=None):
        """(means, stds) arrays of shape (y_card, rep_dim), log-std clamped."""
        y_card = self.mlp.widths[0] if y_card is None else y_card
        out = nn.forward(self.mlp, np.eye(y_card)).value
        means = out[:, : self.rep_dim]
        log_stds = np.clip(out[:, self.rep_dim :], LOG_STD_MIN, LOG_STD_MAX)
        return means, np.exp(log_stds)


def random_separated_encoder(task: NuisanceTask, rng, rep_dim=1,
                             spacing=0.3, spread=3.0,
                             log_std_range=(-6.0, -3.5)) -> StochasticEncoder:
    """Random near-deterministic encoder with well-separated means.

    Means are drawn without replacement from a lattice of pitch ``spacing``
    (several quantization cells apart), and noise is kept small. This is
    the regime in which the representation stays an injective, essentially
    deterministic function of y — exactly the sufficient encoders for which
    the invariance bound I(x;n) <= I(x;y) - I(y;z) is guaranteed; a blurry
    or collapsing encoder is not sufficient for the task and can sit
    outside the bound (a constant encoder is the extreme case).
    """
    y_card = task.y_card
    lattice = np.arange(-spread, spread + spacing / 2, spacing)
    if lattice.size < y_card:
        raise ValueError("lattice too small for the observation alphabet")
    means = np.stack(
        [rng.choice(lattice, size=y_card, replace=False) for _ in range(rep_dim)],
        axis=1,
    )
    log_stds = rng.uniform(log_std_range[0], log_std_range[1], size=(y_card, rep_dim))
    return StochasticEncoder.from_table(means, log_stds)


def constant_encoder(task: NuisanceTask, rep_dim=1) -> StochasticEncoder:
    """Encoder emitting the reference marginal N(0, I) for every y."""
    y_card = task.y_card
    return StochasticEncoder.from_table(
        np.zeros((y_card, rep_dim)), np.zeros((y_card, rep_dim))
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IBLConfig:
    """Training configuration for the static bottleneck objective."""

    beta: float
    rep_dim: int
    steps: int
    batch: int
    seed: int
    mc_samples: int = 1
    eval_samples: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    encoder_hidden: tuple = (16,)
    decoder_hidden: tuple = (16,)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.mc_samples < 1:
            raise ValueError("need at least one Monte-Carlo sample")


@dataclass
class TrainResult:
    encoder: StochasticEncoder
    decoder: nn.MLP
    curve: list  # dicts with step, loss, ce, info_bound, acc


def _encoder_graph(encoder, nodes, one_hot):
    out = nn.forward(encoder.mlp, nn.constant(one_hot),
                     param_nodes={k.split(".", 1)[1]: v for k, v in nodes.items()
                                  if k.startswith("enc.")})
    d = encoder.rep_dim
    mu = out[:, :d]
    log_std = nn.clip_n(out[:, d:], LOG_STD_MIN, LOG_STD_MAX)
    return mu, log_std


def _gaussian_kl_to_standard(mu, log_std):
    """Mean over the batch of KL(N(mu, diag exp(2 log_std)) || N(0, I))."""
    var = (log_std * 2.0).exp()
    per_elem = 0.5 * (mu * mu + var - 1.0) - log_std
    total = per_elem.sum()
    batch = mu.value.shape[0]
    return total * (1.0 / batch)


def _loss_graph(encoder, decoder, y_idx, z_idx, config, eps_draws):
    """Build the full training graph; returns (total, ce, info) nodes."""
    one_hot = np.eye(encoder.mlp.widths[0])[y_idx]
    nodes = {}
    for name, value in encoder.mlp.params().items():
        nodes[f"enc.{name}"] = nn.parameter(value, name=f"enc.{name}")
    for name, value in decoder.params().items():
        nodes[f"dec.{name}"] = nn.parameter(value, name=f"dec.{name}")
    mu, log_std = _encoder_graph(encoder, nodes, one_hot)
    sigma = log_std.exp()
    ce_terms = []
    for s in range(config.mc_samples):
        x = mu + sigma * nn.constant(eps_draws[s])
        logits = nn.forward(decoder, x,
                            param_nodes={k.split(".", 1)[1]: v for k, v in nodes.items()
                                         if k.startswith("dec.")})
        logp = nn.log_softmax_n(logits)
        ce_terms.append(-nn.gather_logprob(logp, z_idx).mean())
    ce = ce_terms[0]
    for term in ce_terms[1:]:
        ce = ce + term
    if config.mc_samples > 1:
        ce = ce * (1.0 / config.mc_samples)
    kl = _gaussian_kl_to_standard(mu, log_std)
    total = ce + config.beta * kl
    return total, ce, kl, nodes


def ibl_loss(encoder, decoder, batch, config, rng=None) -> dict:
    """Bottleneck objective on one batch of (y indices, z labels).

    Returns ``total``, ``cross_entropy_term`` and ``info_term`` as floats;
    total = ce + beta * mean_y KL(q(x|y) || N(0, I)). The KL term upper
    bounds the representation's mutual information with y.
    """
    y_idx, z_idx = batch
    y_idx = np.asarray(y_idx, dtype=int)
    z_idx = np.asarray(z_idx, dtype=int)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    eps = rng.standard_normal((config.mc_samples, y_idx.size, config.rep_dim))
    total, ce, kl, _ = _loss_graph(encoder, decoder, y_idx, z_idx, config, eps)
    return {
        "total": float(total.value),
        "cross_entropy_term": float(ce.value),
        "info_term": float(kl.value),
    }


def info_bound_exact(encoder, task: NuisanceTask) -> float:
    """Exact E_y KL(q(x|y) || N(0,I)) under the task's observation prior."""
    means, stds = encoder.posterior_table(task.y_card)
    p_y = task.observation_prior()
    kl_per_y = 0.5 * np.sum(means**2 + stds**2 - 1.0 - 2.0 * np.log(stds), axis=1)
    return float(np.dot(p_y, kl_per_y))


def eval_accuracy(encoder, decoder, task, samples, rng) -> float:
    """Task accuracy of argmax decoding under the exact (z, n) distribution."""
    means, stds = encoder.posterior_table(task.y_card)
    acc = 0.0
    for z in range(task.z_card):
        for n in range(task.n_card):
            w = task.p_z[z] * task.p_n[n]
            if w == 0.0:
                continue
            y = task.f_map[z, n]
            x = means[y] + stds[y] * rng.standard_normal((samples, encoder.rep_dim))
            logits = nn.forward(decoder, x).value
            acc += w * float(np.mean(np.argmax(logits, axis=1) == z))
    return float(acc)


def train_ib(task: NuisanceTask, config: IBLConfig) -> TrainResult:
    """Minimize the bottleneck objective with reparametrized sampling.

    Per-step records (step, loss, ce, info_bound, acc) form the returned
    curve. Raises :class:`TrainingDiverged` with the offending step when
    the loss stops being finite.
    """
    seq = np.random.SeedSequence(config.seed)
    init_ss, train_ss, eval_ss = seq.spawn(3)
    init_rng = np.random.default_rng(init_ss)
    train_rng = np.random.default_rng(train_ss)
    eval_rng = np.random.default_rng(eval_ss)

    encoder = StochasticEncoder.random(task.y_card, config.rep_dim, init_rng,
                                       hidden=config.encoder_hidden)
    decoder = nn.init_mlp(
        [config.rep_dim, *config.decoder_hidden, task.z_card],
        ["relu"] * len(config.decoder_hidden) + ["identity"],
        init_rng,
    )
    params = {f"enc.{k}": v for k, v in encoder.mlp.params().items()}
    params.update({f"dec.{k}": v for k, v in decoder.params().items()})
    state = nn.OptimizerState(schedule=config.learning_rate, momentum=config.momentum)

    curve = []
    for step in range(config.steps):
        y_idx, z_idx = task.sample_batch(config.batch, train_rng)
        eps = train_rng.standard_normal((config.mc_samples, config.batch, config.rep_dim))
        enc_now = StochasticEncoder(
            encoder.mlp.with_params(
                {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("enc.")}
            ),
            config.rep_dim,
        )
        dec_now = decoder.with_params(
            {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("dec.")}
        )
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            total, ce, kl, _ = _loss_graph(enc_now, dec_now, y_idx, z_idx, config, eps)
            if not np.isfinite(total.value):
                raise TrainingDiverged(step)
            grads = nn.backward(total)
            acc = eval_accuracy(enc_now, dec_now, task, 8, eval_rng)
        curve.append({
            "step": step,
            "loss": float(total.value),
            "ce": float(ce.value),
            "info_bound": float(kl.value),
            "acc": acc,
        })
        try:
            params, state = nn.sgd_step(params, grads, state)
        except FloatingPointError:
            raise TrainingDiverged(step)

    final_encoder = StochasticEncoder(
        encoder.mlp.with_params(
            {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("enc.")}
        ),
        config.rep_dim,
    )
    final_decoder = decoder.with_params(
        {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("dec.")}
    )
    return TrainResult(final_encoder, final_decoder, curve)


# ---------------------------------------------------------------------------
# exact invariance measurement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Quantization:
    """Grid used to discretize the representation for exact enumeration."""

    step: float = 0.05
    range_sigmas: float = 5.0


@dataclass(frozen=True)
class InvarianceReport:
    """Exactly enumerated information quantities for one encoder/task pair.

    ``epsilon`` is I(x;z|n) - I(y;z): the shortfall of the representation's
    conditional task information against the task information in the data.
    ``prop_slack`` is I(x;y) - I(y;z) - I(x;n), non-negative exactly when
    the invariance bound I(x;n) <= I(x;y) - I(y;z) holds.
    """

    i_xy: float
    i_xz: float
    i_yz: float
    i_xn: float
    i_xz_given_n: float
    h_z_given_y: float
    epsilon: float
    cells: int
    step: float

    @property
    def prop_slack(self) -> float:
        return self.i_xy - self.i_yz - self.i_xn


def _cell_table(encoder: StochasticEncoder, task: NuisanceTask, quant: Quantization):
    """p(cell | y) over a product grid.

    Returns (table (Y, cells), per-dim bin edges). The grid for each
    dimension spans ``range_sigmas`` standard deviations of the aggregate
    posterior, and the two edge bins extend to infinity so rows sum to 1.
    """
    means, stds = encoder.posterior_table(task.y_card)
    p_y = task.observation_prior()
    rows = None
    all_edges = []
    for dim in range(encoder.rep_dim):
        m, s = means[:, dim], stds[:, dim]
        agg_mean = float(np.dot(p_y, m))
        agg_var = float(np.dot(p_y, s**2 + m**2) - agg_mean**2)
        half = quant.range_sigmas * math.sqrt(max(agg_var, 1e-12))
        edges = np.arange(agg_mean - half, agg_mean + half + quant.step / 2, quant.step)
        all_edges.append(edges)
        masses = info.gaussian_bin_masses(m, s, edges)
        if rows is None:
            rows = masses
        else:
            rows = (rows[:, :, None] * masses[:, None, :]).reshape(task.y_card, -1)
    return rows, all_edges


def measure_invariance(encoder, task: NuisanceTask, quantization=None) -> InvarianceReport:
    """Enumerate I(x;y), I(x;z), I(y;z), I(x;n), I(x;z|n), H(z|y), epsilon.

    All quantities come from explicit joint tables: the (z, n) structure is
    finite and the Gaussian posterior over x is quantized on a fixed grid
    (masses via the normal CDF, unbounded edge bins), so every value is an
    exact discrete computation up to the documented grid coarseness.
    """
    if quantization is None:
        quantization = Quantization()
    elif isinstance(quantization, (int, float)):
        quantization = Quantization(step=float(quantization))
    cell_rows, _ = _cell_table(encoder, task, quantization)
    n_cells = cell_rows.shape[1]

    joint_zny = task.joint_zny()
    p_zn = joint_zny.marginal_table(("z", "n"))
    table = np.zeros((task.z_card, task.n_card, n_cells))
    for z in range(task.z_card):
        for n in range(task.n_card):
            table[z, n] = p_zn[z, n] * cell_rows[task.f_map[z, n]]
    joint = info.DiscreteJoint(("z", "n", "x"), table)

    p_y = task.observation_prior()
    joint_yx = info.DiscreteJoint(("y", "x"), p_y[:, None] * cell_rows)

    joint_yz = joint_zny.marginal(("y", "z"))
    i_yz = info.mutual_information(joint_yz, "y", "z")
    h_z_given_y = joint_yz.entropy_of(("y", "z")) - joint_yz.entropy_of("y")

    i_xz_given_n = info.mutual_information(joint, "x", "z", given="n")
    report = InvarianceReport(
        i_xy=info.mutual_information(joint_yx, "x", "y"),
        i_xz=info.mutual_information(joint, "x", "z"),
        i_yz=i_yz,
        i_xn=info.mutual_information(joint, "x", "n"),
        i_xz_given_n=i_xz_given_n,
        h_z_given_y=h_z_given_y,
        epsilon=i_xz_given_n - i_yz,
        cells=n_cells,
        step=quantization.step,
    )
    return report


# ---------------------------------------------------------------------------
# stacked representations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StackLayerReport:
    i_xy: float
    i_xn: float
    accuracy: float


def _monotone_pwl(rng, segments, lo, hi):
    """Random strictly increasing piecewise-linear map on [lo, hi]."""
    knots = np.linspace(lo, hi, segments + 1)
    slopes = rng.uniform(0.4, 1.6, size=segments)
    heights = np.concatenate([[0.0], np.cumsum(slopes * np.diff(knots))])
    heights = heights - heights.mean() + rng.uniform(-0.3, 0.3)

    def apply(x):
        return np.interp(x, knots, heights)

    return apply


def stacked_bottleneck_experiment(task: NuisanceTask, widths, noise_levels,
                                  seed=0, quantization=None, layer_maps=None) -> list:
    """Stack representations y -> x1 -> x2 -> ... and enumerate each layer.

    Layer 1 is a separated stochastic encoder with noise ``noise_levels[0]``;
    each further layer applies a deterministic scalar map (random strictly
    monotone piecewise-linear with ``widths[k]`` segments, or the callables
    in ``layer_maps``) to the previous layer's cell representatives and adds
    Gaussian noise ``noise_levels[k]``. All layers are discrete channels, so
    I(x_k; y), I(x_k; n) and the Bayes accuracy are exact; the chain is
    checked for the data-processing ordering I(x_{k+1}; y) <= I(x_k; y).
    """
    widths = list(widths)
    noise_levels = list(noise_levels)
    if len(widths) < 2:
        raise ValueError("need at least two layers to stack")
    if len(noise_levels) != len(widths):
        raise ValueError("need one noise level per layer")
    if quantization is None:
        quantization = Quantization()
    rng = np.random.default_rng(seed)

    step = quantization.step
    encoder = random_separated_encoder(task, rng, rep_dim=1)
    means, _ = encoder.posterior_table(task.y_card)
    noisy = StochasticEncoder.from_table(
        means, np.full_like(means, math.log(max(noise_levels[0], 1e-3)))
    )
    cell_rows, cell_edges = _cell_table(noisy, task, quantization)
    # cell representatives: bin midpoints; the unbounded edge bins get the
    # point half a step beyond the outermost edge
    edges = cell_edges[0]
    reps = np.concatenate([[edges[0] - step / 2],
                           (edges[:-1] + edges[1:]) / 2,
                           [edges[-1] + step / 2]])

    joint_zny = task.joint_zny()
    p_zn = joint_zny.marginal_table(("z", "n"))
    p_y = task.observation_prior()

    def layer_report(channel_rows):
        tab = np.zeros((task.z_card, task.n_card, channel_rows.shape[1]))
        for z in range(task.z_card):
            for n in range(task.n_card):
                tab[z, n] = p_zn[z, n] * channel_rows[task.f_map[z, n]]
        joint = info.DiscreteJoint(("z", "n", "x"), tab)
        joint_yx = info.DiscreteJoint(("y", "x"), p_y[:, None] * channel_rows)
        accuracy = float(np.sum(np.max(joint.marginal_table(("z", "x")), axis=0)))
        return StackLayerReport(
            i_xy=info.mutual_information(joint_yx, "x", "y"),
            i_xn=info.mutual_information(joint, "x", "n"),
            accuracy=accuracy,
        )

    reports = [layer_report(cell_rows)]
    rows = cell_rows
    for k in range(1, len(widths)):
        if layer_maps is not None and layer_maps[k - 1] is not None:
            mapping = layer_maps[k - 1]
        else:
            mapping = _monotone_pwl(rng, widths[k], reps[0], reps[-1])
        mapped = np.asarray(mapping(reps), dtype=float)
        sigma = noise_levels[k]
        lo, hi = mapped.min(), mapped.max()
        pad = 5.0 * max(sigma, step)
        new_edges = np.arange(lo - pad, hi + pad + step / 2, step)
        if sigma > 0:
            channel = info.gaussian_bin_masses(mapped, np.full_like(mapped, sigma), new_edges)
        else:
            idx = np.searchsorted(new_edges, mapped)
            channel = np.zeros((mapped.size, new_edges.size + 1))
            channel[np.arange(mapped.size), idx] = 1.0
        rows = rows @ channel
        reps = np.concatenate([[new_edges[0] - step / 2],
                               (new_edges[:-1] + new_edges[1:]) / 2,
                               [new_edges[-1] + step / 2]])
        reports.append(layer_report(rows))

    for a, b in zip(reports, reports[1:]):
        if b.i_xy > a.i_xy + 1e-12 or b.i_xn > a.i_xn + 1e-12:
            raise RuntimeError("data-processing ordering violated across the stack")
    return reports


# ---------------------------------------------------------------------------
# weight-space information
# ---------------------------------------------------------------------------


@dataclass
class WeightPosterior:
    """Fully factorized Gaussian over the weights of a fixed architecture.

    ``mu`` and ``log_var`` are per-parameter arrays keyed like the MLP's
    parameters; the prior is N(0, prior_var * I) shared across weights.
    """

    template: nn.MLP
    mu: dict
    log_var: dict
    prior_var: float = 1.0

    def kl_to_prior(self) -> float:
        total = 0.0
        for name in self.mu:
            var = np.exp(self.log_var[name])
            mu = self.mu[name]
            total += 0.5 * np.sum(
                var / self.prior_var + mu**2 / self.prior_var
                - 1.0 - self.log_var[name] + math.log(self.prior_var)
            )
        return float(total)

    def sample_weights(self, rng) -> dict:
        return {
            name: self.mu[name] + np.exp(0.5 * self.log_var[name]) * rng.standard_normal(self.mu[name].shape)
            for name in self.mu
        }

    @staticmethod
    def from_init(widths, activations, rng, init_log_var=-6.0, prior_var=1.0) -> "WeightPosterior":
        template = nn.init_mlp(widths, activations, rng)
        mu = {k: v.copy() for k, v in template.params().items()}
        log_var = {k: np.full_like(v, init_log_var) for k, v in mu.items()}
        return WeightPosterior(template, mu, log_var, prior_var)


def _weight_loss_graph(posterior: WeightPosterior, xs, labels, beta, eps):
    mu_nodes = {k: nn.parameter(v, name=f"mu.{k}") for k, v in posterior.mu.items()}
    lv_nodes = {k: nn.parameter(v, name=f"lv.{k}") for k, v in posterior.log_var.items()}
    w_nodes = {
        k: mu_nodes[k] + (lv_nodes[k] * 0.5).exp() * nn.constant(eps[k])
        for k in mu_nodes
    }
    logits = nn.forward(posterior.template, nn.constant(np.atleast_2d(xs)),
                        param_nodes=w_nodes)
    ce = -nn.gather_logprob(nn.log_softmax_n(logits), labels).mean()
    kl = None
    log_pv = math.log(posterior.prior_var)
    for k in mu_nodes:
        var = lv_nodes[k].exp()
        term = (0.5 * (var * (1.0 / posterior.prior_var)
                       + mu_nodes[k] * mu_nodes[k] * (1.0 / posterior.prior_var)
                       - 1.0 + log_pv) - 0.5 * lv_nodes[k]).sum()
        kl = term if kl is None else kl + term
    total = ce + beta * kl
    return total, ce, kl


def weight_info_regularized_loss(posterior: WeightPosterior, batch, beta, rng=None) -> float:
    """One-sample noisy-weight cross-entropy plus beta * KL(q(w) || p(w)).

    The KL is the closed-form factorized-Gaussian divergence, the tractable
    surrogate for the information the weights carry about the data.
    """
    xs, labels = batch
    rng = np.random.default_rng(0) if rng is None else rng
    eps = {k: rng.standard_normal(v.shape) for k, v in posterior.mu.items()}
    total, _, _ = _weight_loss_graph(posterior, xs, np.asarray(labels, dtype=int),
                                     beta, eps)
    return float(total.value)


def train_weight_posterior(xs, labels, widths, beta, seed, steps=300,
                           learning_rate=0.05, momentum=0.9, prior_var=1.0):
    """Train a factorized Gaussian weight posterior on a fixed dataset.

    Returns (posterior, final_kl, final_ce); used by the regularizer sweep
    checks, where growing beta must shrink the final KL(q || p).
    """
    seq = np.random.SeedSequence(seed)
    init_ss, train_ss = seq.spawn(2)
    posterior = WeightPosterior.from_init(
        widths, ["relu"] * (len(widths) - 2) + ["identity"],
        np.random.default_rng(init_ss), prior_var=prior_var,
    )
    rng = np.random.default_rng(train_ss)
    labels = np.asarray(labels, dtype=int)
    params = {}
    for k, v in posterior.mu.items():
        params[f"mu.{k}"] = v
    for k, v in posterior.log_var.items():
        params[f"lv.{k}"] = v
    state = nn.OptimizerState(schedule=learning_rate, momentum=momentum)
    ce_val = math.nan
    for step in range(steps):
        posterior.mu = {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("mu.")}
        posterior.log_var = {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("lv.")}
        eps = {k: rng.standard_normal(v.shape) for k, v in posterior.mu.items()}
        with np.errstate(over="ignore", invalid="ignore"):
            total, ce, _ = _weight_loss_graph(posterior, xs, labels, beta, eps)
            if not np.isfinite(total.value):
                raise TrainingDiverged(step)
            grads = nn.backward(total)
        params, state = nn.sgd_step(params, grads, state)
        ce_val = float(ce.value)
    posterior.mu = {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("mu.")}
    posterior.log_var = {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("lv.")}
    return posterior, posterior.kl_to_prior(), ce_val


def flatness_diagnostic(loss_fn, w_hat, beta, K=None, posterior=None,
                        prior_var=1.0, fd_step=1e-3) -> dict:
    """Curvature-based report on a trained minimum. Report only: no pass/fail.

    ``hessian_trace`` comes from central second differences along each
    coordinate (step 1e-3). ``bound_rhs`` evaluates
    0.5*K*(ln ||w||^2 + ln tr(H) - K ln(K^2 beta / 2)). ``info_estimate``
    is KL(q || p) for the supplied posterior; when none is given, a
    quadratic-approximation diagonal posterior with variances
    beta / (H_ii + beta / prior_var) centered at the minimum is used.
    Non-finite curvature does not raise; the ``finite`` flag records it.
    """
    w_hat = np.asarray(w_hat, dtype=float).reshape(-1)
    K = w_hat.size if K is None else int(K)
    base = float(loss_fn(w_hat))
    diag = np.empty(K)
    for i in range(K):
        probe = w_hat.copy()
        probe[i] += fd_step
        hi = float(loss_fn(probe))
        probe[i] = w_hat[i] - fd_step
        lo = float(loss_fn(probe))
        diag[i] = (hi - 2.0 * base + lo) / fd_step**2
    trace = float(np.sum(diag))
    finite = bool(np.isfinite(trace))
    norm_sq = float(np.dot(w_hat, w_hat))
    with np.errstate(invalid="ignore", divide="ignore"):
        bound_rhs = 0.5 * K * (
            math.log(norm_sq) + (math.log(trace) if finite and trace > 0 else math.nan)
            - K * math.log(K**2 * beta / 2.0)
        ) if beta > 0 and norm_sq > 0 else math.nan
    if posterior is not None:
        info_estimate = posterior.kl_to_prior()
    else:
        variances = beta / (np.clip(diag, 0.0, None) + beta / prior_var)
        info_estimate = float(0.5 * np.sum(
            variances / prior_var + w_hat**2 / prior_var
            - 1.0 - np.log(variances / prior_var)
        ))
    return {
        "info_estimate": info_estimate,
        "bound_rhs": float(bound_rhs) if bound_rhs == bound_rhs else math.nan,
        "hessian_trace": trace,
        "finite": finite,
    }


# ---------------------------------------------------------------------------
# config and curve files
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {"task", "beta", "rep_dim", "steps", "batch", "seed"}
_TASK_KEYS = {"z", "n", "rule", "seed", "y_card"}


def save_ib_config(config: IBLConfig, task_spec: dict, path) -> None:
    payload = {
        "task": task_spec,
        "beta": config.beta,
        "rep_dim": config.rep_dim,
        "steps": config.steps,
        "batch": config.batch,
        "seed": config.seed,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_ib_config(path):
    """Read an experiment config; returns (IBLConfig, NuisanceTask).

    Top-level keys are exactly task, beta, rep_dim, steps, batch, seed;
    anything else is rejected by name.
    """
    with open(path) as fh:
        payload = json.load(fh)
    unknown = set(payload) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config key {sorted(unknown)[0]!r}")
    missing = _CONFIG_KEYS - set(payload)
    if missing:
        raise ValueError(f"config missing keys: {sorted(missing)}")
    task_spec = dict(payload["task"])
    unknown_task = set(task_spec) - _TASK_KEYS
    if unknown_task:
        raise ValueError(f"unknown task key {sorted(unknown_task)[0]!r}")
    task = make_nuisance_task(
        task_spec["z"], task_spec["n"],
        rule=task_spec.get("rule", "bijective"),
        seed=task_spec.get("seed", 0),
        y_card=task_spec.get("y_card"),
    )
    config = IBLConfig(
        beta=float(payload["beta"]),
        rep_dim=int(payload["rep_dim"]),
        steps=int(payload["steps"]),
        batch=int(payload["batch"]),
        seed=int(payload["seed"]),
    )
    return config, task


def write_curve_csv(curve, path) -> None:
    """Write training curve rows as step,loss,ce,info_bound,acc."""
    with open(path, "w") as fh:
        fh.write("step,loss,ce,info_bound,acc\n")
        for row in curve:
            fh.write(
                f"{row['step']},{row['loss']!r},{row['ce']!r},"
                f"{row['info_bound']!r},{row['acc']!r}\n"
            )
