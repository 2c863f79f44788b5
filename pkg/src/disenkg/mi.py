"""Independence pressure between components.

Two tools: a contrastive upper-bound MI estimate built from a variational
Gaussian conditional network (the training-time regularizer), and a kernel
HSIC statistic kept as a drop-in alternative for ablations.

The MI estimate for an ordered component pair (i, j) is the batch mean of
log q(z_i | z_j) on matched samples minus the same quantity on mismatched
samples (a shifted pairing, so no sample is matched with itself). Minimizing
it pushes the conditional density toward the marginal, i.e. components toward
independence.

Gradient isolation is strict and deliberate: the regularizer consumes a
frozen snapshot of Q (so the main objective literally does not depend on Q's
leaf tensors), while Q's own fitting step consumes detached encoder outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_2PI = math.log(2.0 * math.pi)
LOGVAR_CLAMP = 10.0


def _affine(z: Tensor, w: Tensor, b: Tensor) -> Tensor:
    rows = Tensor(np.zeros(z.shape[0]))
    return ad.add(ad.matmul(z, ad.transpose(w)), ad.outer_sum(rows, b))


def _gaussian_heads(weights, pair: tuple[int, int], z_j: Tensor) -> tuple[Tensor, Tensor]:
    """Run the conditional network of one ordered pair: z_j -> (mean, log-variance)."""
    i, j = pair
    prefix = f"q/{i}-{j}"
    hidden = ad.tanh(_affine(z_j, weights[f"{prefix}/w1"], weights[f"{prefix}/b1"]))
    mean = _affine(hidden, weights[f"{prefix}/w_mu"], weights[f"{prefix}/b_mu"])
    logvar = ad.clamp(_affine(hidden, weights[f"{prefix}/w_lv"], weights[f"{prefix}/b_lv"]),
                      -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return mean, logvar


def _gaussian_log_prob(z_i: Tensor, mean: Tensor, logvar: Tensor) -> Tensor:
    """Per-sample diagonal-Gaussian log density, shape (B,)."""
    diff = ad.sub(z_i, mean)
    sq = ad.mul(ad.mul(diff, diff), ad.exp(ad.neg(logvar)))
    per_dim = ad.add_scalar(ad.add(sq, logvar), LOG_2PI)
    return ad.mul_scalar(ad.reduce_sum(per_dim, axis=1), -0.5)


class VariationalQ:
    """One small conditional-Gaussian network per ordered component pair."""

    def __init__(self, rng: np.random.Generator, n_components: int, dim: int):
        self.n_components = n_components
        self.dim = dim
        self.params: dict[str, Tensor] = {}
        for i, j in self.pairs():
            prefix = f"q/{i}-{j}"
            self.params[f"{prefix}/w1"] = ad.parameter(ad.xavier_uniform(rng, (dim, dim)))
            self.params[f"{prefix}/b1"] = ad.parameter(np.zeros(dim))
            for head in ("mu", "lv"):
                self.params[f"{prefix}/w_{head}"] = ad.parameter(ad.xavier_uniform(rng, (dim, dim)))
                self.params[f"{prefix}/b_{head}"] = ad.parameter(np.zeros(dim))

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(self.n_components)
                for j in range(self.n_components) if i != j]

    def log_prob(self, pair: tuple[int, int], z_i: Tensor, z_j: Tensor) -> Tensor:
        """log q(z_i | z_j) per sample under the live network."""
        mean, logvar = _gaussian_heads(self.params, pair, z_j)
        return _gaussian_log_prob(z_i, mean, logvar)

    def snapshot(self) -> dict[str, Tensor]:
        """Constant copies of all weights; graphs built from these never touch Q."""
        return {name: p.detach() for name, p in self.params.items()}

    def fit_loss(self, components: list[np.ndarray]) -> Tensor:
        """Negative mean log-likelihood of matched pairs; encoder values enter as constants."""
        consts = [Tensor(z) for z in components]
        total = None
        for pair in self.pairs():
            i, j = pair
            lp = ad.reduce_mean(self.log_prob(pair, consts[i], consts[j]))
            total = lp if total is None else ad.add(total, lp)
        return ad.mul_scalar(total, -1.0 / len(self.pairs()))


def q_log_prob(q, pair: tuple[int, int], z_i: Tensor, z_j: Tensor) -> Tensor:
    """log q(z_i | z_j); `q` is a VariationalQ or a snapshot of one."""
    weights = q.params if isinstance(q, VariationalQ) else q
    mean, logvar = _gaussian_heads(weights, pair, z_j)
    return _gaussian_log_prob(z_i, mean, logvar)


@dataclass
class MIEstimate:
    """Summed contrastive MI bound with its per-pair breakdown (nats)."""

    total: Tensor
    pairs: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return self.total.item()


def club_loss(components: list[Tensor], q_snapshot: dict[str, Tensor],
              shift: int) -> MIEstimate:
    """Contrastive upper-bound MI over all ordered component pairs.

    ``components[k]`` is a (B, d) slice of component k for the batch entities;
    the negative pairing shifts the conditioning component by ``shift`` rows
    (1 <= shift < B), so every sample is mismatched. Gradients flow into the
    component tensors only: the snapshot holds constants.
    """
    n_components = len(components)
    if n_components == 0:
        raise ValueError("need at least one component")
    batch = components[0].shape[0]
    if batch < 2:
        raise ValueError(f"contrastive MI needs a batch of at least 2, got {batch}")
    if not 1 <= shift < batch:
        raise ValueError(f"shift must lie in [1, {batch - 1}], got {shift}")
    shuffled = (np.arange(batch) + shift) % batch

    total = Tensor(0.0)
    breakdown: dict[tuple[int, int], float] = {}
    for i in range(n_components):
        for j in range(n_components):
            if i == j:
                continue
            z_i, z_j = components[i], components[j]
            z_j_neg = ad.index_select(z_j, 0, shuffled)
            positive = ad.reduce_mean(q_log_prob(q_snapshot, (i, j), z_i, z_j))
            negative = ad.reduce_mean(q_log_prob(q_snapshot, (i, j), z_i, z_j_neg))
            pair_term = ad.sub(positive, negative)
            breakdown[(i, j)] = pair_term.item()
            total = ad.add(total, pair_term)
    return MIEstimate(total, breakdown)


def q_fit_step(components: list[np.ndarray], q: VariationalQ, optimizer) -> float:
    """One optimizer step pulling Q toward the batch's conditional distribution.

    Returns the negative log-likelihood before the step. Only Q's parameters
    move; the component arrays are treated as data.
    """
    if len(q.pairs()) == 0:
        return 0.0
    nll = q.fit_loss(components)
    grads = ad.grads(nll, q.params)
    optimizer.step(q.params, grads)
    return nll.item()


# ---------------------------------------------------------------------------
# HSIC alternative

def _pairwise_sq_dists(x: Tensor) -> Tensor:
    sq = ad.reduce_sum(ad.mul(x, x), axis=1)
    gram = ad.matmul(x, ad.transpose(x))
    return ad.add(ad.outer_sum(sq, sq), ad.mul_scalar(gram, -2.0))


def _median_offdiag(d: np.ndarray) -> float:
    n = d.shape[0]
    off = d[~np.eye(n, dtype=bool)]
    med = float(np.median(off)) if off.size else 0.0
    return med if med > 0.0 else 1.0


def hsic(x: Tensor, y: Tensor, bandwidth: float | None = None) -> Tensor:
    """Biased empirical HSIC with Gaussian kernels: trace(K H L H) / (B-1)^2.

    The bandwidth defaults to the median off-diagonal squared pairwise
    distance of each argument (held constant for differentiation).
    """
    if x.shape[0] != y.shape[0]:
        raise ad.ShapeError(f"hsic: row counts differ, {x.shape} vs {y.shape}")
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"hsic needs at least 2 rows, got {n}")
    dx = _pairwise_sq_dists(x)
    dy = _pairwise_sq_dists(y)
    bw_x = bandwidth if bandwidth is not None else _median_offdiag(dx.data)
    bw_y = bandwidth if bandwidth is not None else _median_offdiag(dy.data)
    k = ad.exp(ad.mul_scalar(dx, -1.0 / bw_x))
    el = ad.exp(ad.mul_scalar(dy, -1.0 / bw_y))
    centering = Tensor(np.eye(n) - np.full((n, n), 1.0 / n))
    k_c = ad.matmul(ad.matmul(centering, k), centering)
    l_c = ad.matmul(ad.matmul(centering, el), centering)
    return ad.mul_scalar(ad.reduce_sum(ad.mul(k_c, l_c)), 1.0 / (n - 1) ** 2)
