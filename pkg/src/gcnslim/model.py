"""GCNSLIM scoring, loss and analytic gradients, plus its ablation variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .dataset import InteractionDataset
from .graph import NormalizedAdjacency, backpropagate, combine_layers, propagate


class ContractViolation(ValueError):
    pass


class NumericLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    K: int = 1
    alpha: float = 0.0
    lam: float = 0.5
    nonlinear: bool = True
    include_layer0: bool = False
    side: str = "item"
    mode: str = "slim"
    embedding_dim: int = 128
    leaky_slope: float = 0.01
    freeze_users: bool = False

    def __post_init__(self):
        if self.K < 0:
            raise ContractViolation("K must be >= 0")
        if self.K == 0 and not self.include_layer0:
            raise ContractViolation("K=0 requires include_layer0=True")
        if self.alpha < 0 or self.lam < 0:
            raise ContractViolation("alpha and lambda must be non-negative")
        if self.side not in ("item", "user"):
            raise ContractViolation(f"side must be 'item' or 'user', got {self.side!r}")
        if self.mode not in ("slim", "mf"):
            raise ContractViolation(f"mode must be 'slim' or 'mf', got {self.mode!r}")
        if self.mode == "mf" and not self.include_layer0:
            raise ContractViolation("mode=mf keeps layer 0 (include_layer0=True)")
        if self.side == "user" and self.mode != "slim":
            raise ContractViolation("side=user is only defined for mode=slim")
        if self.embedding_dim < 1:
            raise ContractViolation("embedding_dim must be positive")
        if not 0.0 <= self.leaky_slope < 1.0:
            raise ContractViolation("leaky_slope must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


# Named variants of the ablation study.  Values override ModelConfig fields.
VARIANTS: dict[str, dict] = {
    "GCNSLIM": {},
    "GCNSLIM+0": {"include_layer0": True},
    "GCNSLIM-LR": {"nonlinear": False},
    "GCNSLIM+0-LR": {"include_layer0": True, "nonlinear": False},
    "GCNMF": {"mode": "mf", "include_layer0": True, "nonlinear": False, "alpha": 0.0},
    "GCNMF+LR": {"mode": "mf", "include_layer0": True, "nonlinear": True, "alpha": 0.0},
    "GCNSLIM-user": {"side": "user"},
}


def variant_config(name: str, base: ModelConfig | None = None, **overrides) -> ModelConfig:
    """Build the config for a named variant; ``K=0`` always keeps layer 0."""
    key = name.replace("−", "-")
    if key not in VARIANTS:
        raise KeyError(f"unknown variant {name!r}; known: {', '.join(VARIANTS)}")
    fields = dict((base or ModelConfig()).to_dict())
    fields.update(VARIANTS[key])
    fields.update(overrides)
    if fields["K"] == 0:
        fields["include_layer0"] = True
    return ModelConfig(**fields)


# -- forward -----------------------------------------------------------------

def _propagated(params: np.ndarray, adj: NormalizedAdjacency, config: ModelConfig):
    out = propagate(adj, params, config.K, config.nonlinear, config.leaky_slope)
    combined = combine_layers(out, config.include_layer0)
    return out, combined


def final_embeddings(params: np.ndarray, adj: NormalizedAdjacency,
                     config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(U_final, I_final)`` sliced from the combined embedding."""
    _, combined = _propagated(params, adj, config)
    m = adj.num_users
    return combined[:m], combined[m:]


def item_similarity(I_final: np.ndarray) -> np.ndarray:
    """``B = I I^T`` with an exactly zero diagonal.

    Only the upper triangle is computed; it is mirrored so that ``B == B.T``
    holds bitwise.
    """
    if I_final.shape[0] < 2:
        raise ContractViolation("item similarity needs at least two items")
    B = I_final @ I_final.T
    upper = np.triu(B, 1)
    B = upper + upper.T
    np.fill_diagonal(B, 0.0)
    return B


user_similarity = item_similarity


def _as_csr(X, dtype) -> sp.csr_matrix:
    if isinstance(X, InteractionDataset):
        return X.csr(dtype)
    return sp.csr_matrix(X, dtype=dtype)


def predict_full(train_X, B: np.ndarray) -> np.ndarray:
    """``X @ B``: each user's score row is the sum of B rows over their history."""
    return np.asarray(_as_csr(train_X, B.dtype) @ B)


def user_similarity_predict(train_X, U_final: np.ndarray, chunk: int | None = None) -> np.ndarray:
    """``(U U^T - diag(U U^T)) @ X`` for the user-side expansion."""
    X = _as_csr(train_X, U_final.dtype)
    m = U_final.shape[0]
    if m < 2:
        return np.zeros(X.shape, dtype=U_final.dtype)
    if chunk is None:
        return np.asarray(X.T @ user_similarity(U_final)).T
    return np.vstack([user_similarity_scores(X, U_final, np.arange(s, min(s + chunk, m)))
                      for s in range(0, m, chunk)])


def user_similarity_scores(X: sp.csr_matrix, U_final: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Rows ``rows`` of the user-side prediction without the full M x M matrix."""
    S = U_final[rows] @ U_final.T
    S[np.arange(rows.size), rows] = 0.0
    return np.asarray(X.T @ S.T).T


def cold_score(items: Iterable[int], B: np.ndarray) -> np.ndarray:
    """Score a new or updated history against a frozen similarity matrix.

    Uses the same sparse kernel as :func:`predict_full`, so a history equal
    to a trained user's reproduces that user's row bitwise.
    """
    idx = np.unique(np.asarray(list(items), dtype=np.int64))
    n = B.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)]
        raise KeyError(f"unknown item id(s) {bad.tolist()} for a {n}-item model")
    row = sp.csr_matrix((np.ones(idx.size, dtype=B.dtype), idx, [0, idx.size]), shape=(1, n))
    return np.asarray(row @ B)[0]


def score_pair_slim(u: int, i: int, train_X, U_final: np.ndarray, I_final: np.ndarray) -> float:
    X = _as_csr(train_X, I_final.dtype)
    hist = X.indices[X.indptr[u]:X.indptr[u + 1]]
    h = I_final[hist].sum(axis=0)
    s = float(h @ I_final[i])
    if i in set(hist.tolist()):
        s -= float(I_final[i] @ I_final[i])
    return s


def score_pair_mf(u: int, i: int, U_final: np.ndarray, I_final: np.ndarray) -> float:
    return float(U_final[u] @ I_final[i])


# -- loss and gradient -------------------------------------------------------

def _scatter_rows(index: np.ndarray, values: np.ndarray, n_rows: int) -> np.ndarray:
    """Sum rows of ``values`` into ``n_rows`` buckets, deterministically."""
    b = index.size
    S = sp.csr_matrix((np.ones(b, dtype=values.dtype), (index, np.arange(b))), shape=(n_rows, b))
    return np.asarray(S @ values)


def _slim_term(ctx: sp.csr_matrix, ctx_rows: np.ndarray, anchor: np.ndarray,
               anchor_rows: np.ndarray, self_mask: np.ndarray, target: np.ndarray):
    """Squared loss of ``(sum_{j in ctx(r)} a_j . a_t) - [t in ctx(r)] |a_t|^2``.

    Returns the loss and its gradient w.r.t. ``anchor``.  For the item side
    ``ctx`` is X (rows = users) and ``anchor`` the item embeddings; for the
    user side it is X^T and the user embeddings.
    """
    sub = ctx[ctx_rows]
    H = np.asarray(sub @ anchor)
    a = anchor[anchor_rows]
    score = np.einsum("bd,bd->b", H, a) - self_mask * np.einsum("bd,bd->b", a, a)
    resid = target - score
    g = -2.0 * resid
    grad_a = g[:, None] * (H - 2.0 * self_mask[:, None] * a)
    grad = _scatter_rows(anchor_rows, grad_a, anchor.shape[0])
    grad += np.asarray(sub.T @ (g[:, None] * a))
    return float(resid @ resid), grad, score


def _mf_term(U: np.ndarray, I: np.ndarray, users: np.ndarray, items: np.ndarray,
             target: np.ndarray):
    u, i = U[users], I[items]
    score = np.einsum("bd,bd->b", u, i)
    resid = target - score
    g = -2.0 * resid
    gU = _scatter_rows(users, g[:, None] * i, U.shape[0])
    gI = _scatter_rows(items, g[:, None] * u, I.shape[0])
    return float(resid @ resid), gU, gI, score


def batch_loss(users, items, targets, params: np.ndarray, adj: NormalizedAdjacency,
               config: ModelConfig, train: InteractionDataset,
               return_parts: bool = False):
    """Sampled joint loss and its exact gradient w.r.t. the layer-0 embeddings.

    The loss is ``sum (t - s_slim)^2 + alpha * sum (t - s_mf)^2`` over the
    batch plus ``lam * sum ||E0_r||^2 / |batch|`` over the distinct user and
    item rows the batch names.  ``mode='mf'`` keeps only the MF residual
    (with weight 1).  Targets are 1 for train positives and 0 for sampled
    negatives; ``train`` supplies the histories used by the SLIM score.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    target = np.asarray(targets, dtype=params.dtype)
    if users.size == 0:
        raise ContractViolation("empty batch")
    m = adj.num_users
    out, combined = _propagated(params, adj, config)
    U, I = combined[:m], combined[m:]
    gU = np.zeros_like(U)
    gI = np.zeros_like(I)
    parts = {}

    if config.mode == "slim":
        in_train = train.contains(users, items).astype(params.dtype)
        if config.side == "item":
            loss_s, g, score = _slim_term(train.csr(params.dtype), users, I, items, in_train, target)
            gI += g
        else:
            Xt = train.csr(params.dtype).T.tocsr()
            loss_s, g, score = _slim_term(Xt, items, U, users, in_train, target)
            gU += g
        parts["slim"] = loss_s
        mf_weight = config.alpha
    else:
        loss_s, score = 0.0, None
        mf_weight = 1.0

    loss = loss_s
    if mf_weight > 0:
        loss_m, gu, gi, mf_score = _mf_term(U, I, users, items, target)
        gU += mf_weight * gu
        gI += mf_weight * gi
        loss += mf_weight * loss_m
        parts["mf"] = loss_m
        if score is None:
            score = mf_score

    touched = np.union1d(users, m + items)
    rows = params[touched]
    reg = float(np.sum(rows * rows)) / users.size
    loss += config.lam * reg
    parts["reg"] = reg

    if not np.isfinite(loss):
        bad = np.flatnonzero(~np.isfinite(score)) if score is not None else np.array([0])
        j = int(bad[0]) if bad.size else 0
        raise NumericLossError(
            f"non-finite loss at sample (user={users[j]}, item={items[j]}, target={target[j]})")

    grad = backpropagate(adj, out, np.vstack([gU, gI]), config.include_layer0,
                         config.nonlinear, config.leaky_slope)
    if config.lam > 0:
        grad[touched] += (2.0 * config.lam / users.size) * rows
    if config.freeze_users:
        grad[:m] = 0.0
    if return_parts:
        return loss, grad, parts
    return loss, grad


def batch_loss_value(users, items, targets, params, adj, config, train) -> float:
    return batch_loss(users, items, targets, params, adj, config, train)[0]
