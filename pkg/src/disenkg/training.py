"""Training loop: label-smoothed cross entropy over all entities plus the
weighted independence regularizer, optimized with Adam.

Each step alternates two updates. First the variational network Q takes one
gradient step toward the current conditional distribution of component pairs
(on detached encoder outputs); then the main objective is built against a
frozen snapshot of Q, so its gradients reach every model parameter but none
of Q's. Queries are (entity, relation) pairs scored against all entities at
once, with head prediction handled entirely through inverse relations.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import decoder as dec
from . import mi
from .autodiff import Tensor
from .data import KnowledgeGraph
from .encoder import OPERATORS, encode, init_encoder_params

CHECKPOINT_FORMAT = "disenkg.checkpoint.v1"


class NumericalError(FloatingPointError):
    """Training produced a non-finite value."""


@dataclass
class TrainConfig:
    """Everything a run needs; replaying a config with its seed reproduces the run."""

    n_components: int = 4
    n_layers: int = 2
    component_dim: int = 25
    input_dim: int | None = None          # defaults to n_components * component_dim
    mi_weight: float = 0.01
    macro_mode: str = "club"              # club | hsic | none
    micro_mode: str = "on"                # on | off
    operator: str = "cross"
    score_fn: str = "distmult"
    activation: str = "tanh"
    scale_attention: bool = False
    batch_size: int = 128
    learning_rate: float = 1e-3
    q_learning_rate: float = 1e-3
    label_smoothing: float = 0.1
    epochs: int = 200
    seed: int = 0
    dropout: float = 0.1
    hsic_bandwidth: float | None = None
    conve_reshape_width: int | None = None
    conve_kernel: int = 3
    conve_filters: int = 32
    conve_dropout: float = 0.0
    conve_bias: bool = False
    eval_every: int = 10
    patience: int | None = None
    tie_policy: str = "average"

    def validate(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.component_dim < 1:
            raise ValueError("component_dim must be >= 1")
        if self.mi_weight < 0:
            raise ValueError("mi_weight must be >= 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if self.macro_mode not in ("club", "hsic", "none"):
            raise ValueError(f"unknown macro_mode {self.macro_mode!r}")
        if self.micro_mode not in ("on", "off"):
            raise ValueError(f"unknown micro_mode {self.micro_mode!r}")
        if self.macro_mode == "club" and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 under the club regularizer")
        if self.operator not in OPERATORS:
            raise ValueError(f"unknown operator {self.operator!r}")
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.tie_policy not in ("average", "min"):
            raise ValueError(f"unknown tie_policy {self.tie_policy!r}")
        dec.ScoreFunctionConfig(**self._score_kwargs())  # raises ConfigError when infeasible

    # micro-disentanglement off degenerates to one shared projection with
    # plain mean aggregation
    @property
    def effective_components(self) -> int:
        return 1 if self.micro_mode == "off" else self.n_components

    @property
    def attention(self) -> str:
        return "uniform" if self.micro_mode == "off" else "dot"

    @property
    def effective_input_dim(self) -> int:
        return self.input_dim if self.input_dim is not None else \
            self.n_components * self.component_dim

    def _score_kwargs(self) -> dict:
        return dict(kind=self.score_fn, component_dim=self.component_dim,
                    reshape_width=self.conve_reshape_width, kernel_size=self.conve_kernel,
                    n_filters=self.conve_filters, dropout=self.conve_dropout,
                    use_bias=self.conve_bias)

    def score_config(self) -> dec.ScoreFunctionConfig:
        return dec.ScoreFunctionConfig(**self._score_kwargs())


class Adam:
    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self._m.setdefault(name, np.zeros_like(p.data))
            v = self._v.setdefault(name, np.zeros_like(p.data))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def init_params(config: TrainConfig, kg: KnowledgeGraph,
                rng: np.random.Generator) -> tuple[dict[str, Tensor], mi.VariationalQ | None]:
    """All trainable tensors (encoder + decoder) plus the Q network when used."""
    params = init_encoder_params(
        rng, kg.n_entities, kg.n_relations_aug, config.effective_components,
        config.effective_input_dim, config.component_dim, config.n_layers)
    params.update(dec.init_decoder_params(rng, config.score_config(), kg.n_entities))
    q = None
    if config.macro_mode == "club" and config.effective_components > 1:
        q = mi.VariationalQ(rng, config.effective_components, config.component_dim)
    return params, q


def batch_labels(queries: list[tuple[int, int]], kg: KnowledgeGraph,
                 smoothing: float) -> np.ndarray:
    """(B, N) multi-hot training targets, label-smoothed."""
    t = np.zeros((len(queries), kg.n_entities))
    for row, key in enumerate(queries):
        t[row, kg.train_targets[key]] = 1.0
    return t * (1.0 - smoothing) + smoothing / kg.n_entities


def mi_term(components: list[Tensor], heads: np.ndarray, config: TrainConfig,
            q_snapshot: dict[str, Tensor] | None, shift: int | None) -> tuple[Tensor | None, float]:
    """Independence regularizer on the batch entities' final components."""
    if config.effective_components < 2 or config.macro_mode == "none":
        return None, 0.0
    slices = [ad.index_select(c, 0, heads) for c in components]
    if config.macro_mode == "club":
        if shift is None:  # a stray 1-query batch cannot be contrasted
            return None, 0.0
        estimate = mi.club_loss(slices, q_snapshot, shift)
        return estimate.total, estimate.value
    total = Tensor(0.0)
    for i in range(len(slices)):
        for j in range(i + 1, len(slices)):
            total = ad.add(total, mi.hsic(slices[i], slices[j], config.hsic_bandwidth))
    return total, total.item()


def loss_on_batch(params: dict[str, Tensor], config: TrainConfig, kg: KnowledgeGraph,
                  queries: list[tuple[int, int]], q_snapshot: dict[str, Tensor] | None = None,
                  shift: int | None = None, rng: np.random.Generator | None = None,
                  training: bool = True, encoded=None) -> tuple[Tensor, dict]:
    """Full objective on one query batch; returns the scalar and diagnostics."""
    if encoded is None:
        encoded = encode(kg, params, config.effective_components, config.n_layers,
                         config.operator, config.activation, config.attention,
                         config.scale_attention, config.dropout, rng, training)
    heads = np.array([u for u, _ in queries], dtype=np.int64)
    rels = np.array([r for _, r in queries], dtype=np.int64)
    _, beta, raw = dec.score_query_batch(
        encoded.components, encoded.rel_table, params["rel_diag"], heads, rels,
        config.score_config(), params, rng, training)
    if not np.all(np.isfinite(raw.data)):
        raise NumericalError("fused scores left (0, 1) after squashing: non-finite logits")

    targets = Tensor(batch_labels(queries, kg, config.label_smoothing))
    complement = Tensor(1.0 - targets.data)
    log_p = ad.log_sigmoid(raw)
    log_not_p = ad.log_sigmoid(ad.neg(raw))
    bce = ad.mul_scalar(
        ad.reduce_sum(ad.add(ad.mul(targets, log_p), ad.mul(complement, log_not_p))),
        -1.0 / (len(queries) * kg.n_entities))

    mi_tensor, mi_value = mi_term(encoded.components, heads, config, q_snapshot, shift)
    total = bce if mi_tensor is None or config.mi_weight == 0.0 else \
        ad.add(bce, ad.mul_scalar(mi_tensor, config.mi_weight))
    diag = {"loss": total.item(), "bce": bce.item(), "mi": mi_value,
            "beta": beta.data.copy()}
    return total, diag


@dataclass
class TrainState:
    config: TrainConfig
    kg: KnowledgeGraph
    params: dict[str, Tensor]
    q: mi.VariationalQ | None
    optimizer: Adam
    q_optimizer: Adam | None
    rng: np.random.Generator
    step: int = 0


def train_step(state: TrainState, queries: list[tuple[int, int]]) -> dict:
    """One alternating update: fit Q, then one Adam step on the main objective."""
    config, kg = state.config, state.kg
    encoded = encode(kg, state.params, config.effective_components, config.n_layers,
                     config.operator, config.activation, config.attention,
                     config.scale_attention, config.dropout, state.rng, training=True)

    heads = np.array([u for u, _ in queries], dtype=np.int64)
    q_snapshot, shift, q_nll = None, None, 0.0
    if state.q is not None:
        detached = [np.take(c.data, heads, axis=0) for c in encoded.components]
        q_nll = mi.q_fit_step(detached, state.q, state.q_optimizer)
        q_snapshot = state.q.snapshot()
        if len(queries) >= 2:
            shift = int(state.rng.integers(1, len(queries)))

    total, diag = loss_on_batch(state.params, config, kg, queries,
                                q_snapshot=q_snapshot, shift=shift, rng=state.rng,
                                training=True, encoded=encoded)
    if not np.isfinite(diag["loss"]):
        raise NumericalError(f"non-finite loss at step {state.step}: {diag}")
    grads = ad.grads(total, state.params)
    state.optimizer.step(state.params, grads)
    state.step += 1
    diag["q_nll"] = q_nll
    return diag


@dataclass
class TrainResult:
    config: TrainConfig
    params: dict[str, Tensor]
    q: mi.VariationalQ | None
    history: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_mrr: float | None = None
    step: int = 0


def train(config: TrainConfig, kg: KnowledgeGraph, log=None) -> TrainResult:
    """Run the configured number of epochs; tracks validation MRR when a valid
    split exists and keeps the best parameters seen."""
    from .evaluation import evaluate  # local import, evaluator depends on us

    config.validate()
    rng = np.random.default_rng(config.seed)
    params, q = init_params(config, kg, rng)
    optimizer = Adam(config.learning_rate)
    q_optimizer = Adam(config.q_learning_rate) if q is not None else None
    state = TrainState(config, kg, params, q, optimizer, q_optimizer, rng)

    queries = list(kg.train_targets.keys())
    result = TrainResult(config, params, q)
    best_params = None
    stale_rounds = 0

    for epoch in range(config.epochs):
        order = state.rng.permutation(len(queries))
        epoch_diags = []
        for start in range(0, len(order), config.batch_size):
            batch = [queries[i] for i in order[start:start + config.batch_size]]
            epoch_diags.append(train_step(state, batch))
        record = {
            "epoch": epoch,
            "loss": float(np.mean([d["loss"] for d in epoch_diags])),
            "bce": float(np.mean([d["bce"] for d in epoch_diags])),
            "mi": float(np.mean([d["mi"] for d in epoch_diags])),
        }

        run_eval = len(kg.valid) > 0 and (
            (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1)
        if run_eval:
            report = evaluate(params, config, kg, "valid")
            record.update(val_mrr=report.overall.mrr, val_mr=report.overall.mr,
                          val_hits1=report.overall.hits[1], val_hits3=report.overall.hits[3],
                          val_hits10=report.overall.hits[10])
            if result.best_val_mrr is None or report.overall.mrr > result.best_val_mrr:
                result.best_val_mrr = report.overall.mrr
                result.best_epoch = epoch
                best_params = {n: p.data.copy() for n, p in params.items()}
                stale_rounds = 0
            else:
                stale_rounds += 1
        result.history.append(record)
        if log is not None:
            log(record)
        if config.patience is not None and stale_rounds > config.patience:
            break

    if best_params is not None:
        for name, p in params.items():
            p.data = best_params[name]
    result.step = state.step
    return result


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, params: dict[str, Tensor], q: mi.VariationalQ | None,
                    config: TrainConfig, step: int = 0, history: list[dict] | None = None):
    meta = json.dumps({
        "format": CHECKPOINT_FORMAT,
        "config": asdict(config),
        "step": step,
        "history": history or [],
    })
    arrays = {f"param/{name}": p.data for name, p in params.items()}
    if q is not None:
        arrays.update({f"qparam/{name}": p.data for name, p in q.params.items()})
    np.savez(path, __meta__=np.array(meta), **arrays)


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict[str, Tensor]
    q: mi.VariationalQ | None
    step: int
    history: list[dict]


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as npz:
        if "__meta__" not in npz:
            raise ValueError(f"{path}: not a disenkg checkpoint")
        meta = json.loads(str(npz["__meta__"][()]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        config = TrainConfig(**meta["config"])
        params = {}
        q_arrays = {}
        for key in npz.files:
            if key.startswith("param/"):
                name = key[len("param/"):]
                params[name] = ad.parameter(npz[key], name)
            elif key.startswith("qparam/"):
                q_arrays[key[len("qparam/"):]] = npz[key]
    q = None
    if q_arrays:
        q = mi.VariationalQ(np.random.default_rng(0), config.effective_components,
                            config.component_dim)
        for name, arr in q_arrays.items():
            q.params[name].data = arr.astype(np.float64)
    return Checkpoint(config, params, q, meta["step"], meta["history"])


def checkpoint_digest(params: dict[str, Tensor], q: mi.VariationalQ | None,
                      config: TrainConfig) -> str:
    """Stable content hash of a model: config plus every parameter's bytes."""
    h = hashlib.sha256()
    h.update(CHECKPOINT_FORMAT.encode())
    h.update(json.dumps(asdict(config), sort_keys=True).encode())
    named = [("param/" + n, p) for n, p in params.items()]
    if q is not None:
        named += [("qparam/" + n, p) for n, p in q.params.items()]
    for name, p in sorted(named):
        h.update(name.encode())
        h.update(str(p.data.shape).encode())
        h.update(p.data.tobytes())
    return h.hexdigest()
