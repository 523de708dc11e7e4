"""Initialisation, Adam, the training loop with early stopping, and gradient checks."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import InteractionDataset, SplitBundle, sample_negatives_batch
from .evaluation import evaluate
from .graph import NormalizedAdjacency, build_normalized_adjacency, propagate
from .model import ModelConfig, batch_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 4096
    neg_per_pos: int = 1
    max_epochs: int = 1000
    patience: int = 50
    seed: int = 2024
    eval_every: int = 1
    deterministic: bool = True
    dtype: str = "float32"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.neg_per_pos < 1 or self.eval_every < 1:
            raise ValueError("batch_size, neg_per_pos and eval_every must be positive")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def init_params(num_users: int, num_items: int, dim: int, seed: int,
                dtype=np.float32) -> np.ndarray:
    """Xavier-uniform layer-0 embeddings, bound sqrt(6 / (d + d))."""
    if min(num_users, num_items, dim) < 1:
        raise ValueError("sizes must be positive")
    bound = math.sqrt(6.0 / (dim + dim))
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=(num_users + num_items, dim)).astype(dtype)


class AdamState:
    def __init__(self, shape, dtype=np.float32, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.step = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def update(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        """One in-place Adam step with bias correction."""
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * grad
        self.v *= b2
        self.v += (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1 ** self.step)
        v_hat = self.v / (1 - b2 ** self.step)
        params -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(params.dtype, copy=False)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    recall10: float
    ndcg10: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_ndcg10: float = float("nan")
    best_recall10: float = float("nan")
    stop_reason: str = ""
    seconds_to_best: float = 0.0

    def curve(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.epochs])

    def to_dict(self) -> dict:
        return asdict(self)


def make_batches(train: InteractionDataset, batch_size: int, neg_per_pos: int,
                 rng: np.random.Generator):
    """Yield ``(users, items, targets)`` per shuffled batch of train positives."""
    order = rng.permutation(train.num_interactions)
    for start in range(0, order.size, batch_size):
        idx = order[start:start + batch_size]
        pu, pi = train.users[idx], train.items[idx]
        nu = np.tile(pu, neg_per_pos)
        ni = sample_negatives_batch(nu, train, rng)
        users = np.concatenate([pu, nu])
        items = np.concatenate([pi, ni])
        targets = np.concatenate([np.ones(pu.size), np.zeros(nu.size)])
        yield users, items, targets


def train_epoch(params: np.ndarray, adam: AdamState, split: SplitBundle, adj: NormalizedAdjacency,
                model_config: ModelConfig, train_config: TrainConfig,
                rng: np.random.Generator) -> float:
    """One pass over the shuffled train positives; returns the mean batch loss."""
    losses = []
    batches = make_batches(split.train, train_config.batch_size, train_config.neg_per_pos, rng)
    for b, (users, items, targets) in enumerate(batches):
        try:
            loss, grad = batch_loss(users, items, targets, params, adj, model_config, split.train)
        except FloatingPointError as exc:
            raise type(exc)(f"batch {b}: {exc}") from exc
        adam.update(params, grad, train_config.learning_rate)
        losses.append(loss)
    return float(np.mean(losses)) if losses else 0.0


def fit(split: SplitBundle, model_config: ModelConfig, train_config: TrainConfig,
        callback=None) -> tuple[np.ndarray, TrainReport]:
    """Train with validation NDCG@10 early stopping; returns the best checkpoint."""
    dtype = np.dtype(train_config.dtype)
    train = split.train
    adj = build_normalized_adjacency(train, dtype=dtype)
    params = init_params(train.num_users, train.num_items, model_config.embedding_dim,
                         train_config.seed, dtype=dtype)
    adam = AdamState(params.shape, dtype, train_config.beta1, train_config.beta2, train_config.eps)
    rng = np.random.default_rng(train_config.seed + 1)
    report = TrainReport()
    best = params.copy()
    if train_config.max_epochs == 0:
        report.stop_reason = "max_epochs"
        return best, report

    best_score = -np.inf
    stale = 0
    elapsed = 0.0
    report.stop_reason = "max_epochs"
    for epoch in range(1, train_config.max_epochs + 1):
        t0 = time.perf_counter()
        loss = train_epoch(params, adam, split, adj, model_config, train_config, rng)
        recall = ndcg = float("nan")
        evaluated = epoch % train_config.eval_every == 0 or epoch == train_config.max_epochs
        if evaluated:
            metrics = evaluate(params, split, model_config, "valid", adj=adj)
            recall, ndcg = metrics.recall_at_n, metrics.ndcg_at_n
        seconds = time.perf_counter() - t0
        elapsed += seconds
        report.epochs.append(EpochRecord(epoch, loss, recall, ndcg, seconds))
        log.info("epoch %d loss %.5f valid recall@10 %.4f ndcg@10 %.4f (%.1fs)",
                 epoch, loss, recall, ndcg, elapsed)
        if callback is not None:
            callback(report.epochs[-1])
        if not evaluated:
            continue
        if ndcg > best_score:
            best_score = ndcg
            best[...] = params
            report.best_epoch = epoch
            report.best_ndcg10 = ndcg
            report.best_recall10 = recall
            report.seconds_to_best = elapsed
            stale = 0
        else:
            stale += 1
            if stale >= train_config.patience:
                report.stop_reason = "early_stopping"
                break
    return best, report


# -- gradient checking -------------------------------------------------------

@dataclass
class GradCheckInstance:
    train: InteractionDataset
    adj: NormalizedAdjacency
    params: np.ndarray
    users: np.ndarray
    items: np.ndarray
    targets: np.ndarray


def _random_instance(num_users: int, num_items: int, dim: int, batch: int,
                     rng: np.random.Generator) -> GradCheckInstance:
    dense = rng.random((num_users, num_items)) < 0.45
    # every user and item gets at least one train interaction
    dense[np.arange(num_users), rng.integers(0, num_items, num_users)] = True
    dense[rng.integers(0, num_users, num_items), np.arange(num_items)] = True
    u, i = np.nonzero(dense)
    train = InteractionDataset.from_arrays(u, i, num_users, num_items)
    adj = build_normalized_adjacency(train, dtype=np.float64)
    params = rng.uniform(-1.0, 1.0, size=(num_users + num_items, dim))
    bu = rng.integers(0, num_users, batch)
    bi = rng.integers(0, num_items, batch)
    targets = train.contains(bu, bi).astype(np.float64)
    return GradCheckInstance(train, adj, params, bu, bi, targets)


def _min_abs_preactivation(inst: GradCheckInstance, config: ModelConfig) -> float:
    if not config.nonlinear or config.K == 0:
        return np.inf
    out = propagate(inst.adj, inst.params, config.K, True, config.leaky_slope)
    return float(min(np.abs(p).min() for p in out.preactivations))


def grad_check(model_config: ModelConfig, instance_sizes: tuple[int, int, int] = (8, 6, 4),
               epsilon: float = 1e-4, seed: int = 0, batch: int = 24,
               kink_margin: float = 1e-3, max_reseeds: int = 200) -> float:
    """Max relative error of the analytic gradient against central differences.

    Runs in double precision on a random ``(M, N, d)`` instance.  For
    nonlinear variants the instance is re-drawn until every pre-activation is
    at least ``kink_margin`` away from zero.
    """
    m, n, d = instance_sizes
    if m + n > 20 or d > 8:
        raise ValueError("grad_check instances are limited to M+N <= 20 and d <= 8")
    config = model_config if model_config.embedding_dim == d else \
        ModelConfig.from_dict({**model_config.to_dict(), "embedding_dim": d})
    rng = np.random.default_rng(seed)
    for _ in range(max_reseeds):
        inst = _random_instance(m, n, d, batch, rng)
        if _min_abs_preactivation(inst, config) > kink_margin:
            break
    else:
        raise RuntimeError("could not draw an instance away from LeakyReLU kinks")

    def loss_at(p):
        return batch_loss(inst.users, inst.items, inst.targets, p, inst.adj, config, inst.train)[0]

    _, analytic = batch_loss(inst.users, inst.items, inst.targets, inst.params, inst.adj,
                             config, inst.train)
    numeric = np.zeros_like(inst.params)
    work = inst.params.copy()
    for idx in np.ndindex(work.shape):
        orig = work[idx]
        work[idx] = orig + epsilon
        up = loss_at(work)
        work[idx] = orig - epsilon
        down = loss_at(work)
        work[idx] = orig
        numeric[idx] = (up - down) / (2 * epsilon)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def variant_grid(dim: int = 4) -> list[tuple[str, ModelConfig]]:
    """Every variant combination checked by the gradient-check command."""
    grid = []
    for nonlinear in (True, False):
        for layer0 in (False, True):
            for mode in ("slim", "mf"):
                for side in ("item", "user"):
                    if mode == "mf" and (not layer0 or side == "user"):
                        continue
                    # alpha has no effect in mf mode
                    for alpha in ((0.0,) if mode == "mf" else (0.0, 0.05)):
                        for K in range(0 if layer0 else 1, 4):
                            cfg = ModelConfig(K=K, alpha=alpha, lam=0.1, nonlinear=nonlinear,
                                              include_layer0=layer0, side=side, mode=mode,
                                              embedding_dim=dim)
                            grid.append((variant_label(cfg), cfg))
    return grid


def variant_label(cfg: ModelConfig) -> str:
    return (f"K={cfg.K},{'LR' if cfg.nonlinear else 'lin'},{'+0' if cfg.include_layer0 else '-0'},"
            f"{cfg.mode},{cfg.side},alpha={cfg.alpha}")
