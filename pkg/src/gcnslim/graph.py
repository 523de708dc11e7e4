"""Bipartite adjacency normalisation and light graph convolution."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dataset import InteractionDataset

log = logging.getLogger(__name__)


class NumericOverflowError(FloatingPointError):
    def __init__(self, layer: int):
        super().__init__(f"non-finite values produced at propagation layer {layer}")
        self.layer = layer


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """``D^-1/2 A D^-1/2`` for ``A = [[0, X], [X^T, 0]]`` in CSR form.

    Users occupy rows ``[0, M)`` and items rows ``[M, M+N)``.
    """

    num_users: int
    num_items: int
    matrix: sp.csr_matrix
    degrees: np.ndarray

    @property
    def size(self) -> int:
        return self.num_users + self.num_items

    def astype(self, dtype) -> "NormalizedAdjacency":
        if self.matrix.dtype == dtype:
            return self
        return NormalizedAdjacency(self.num_users, self.num_items,
                                   self.matrix.astype(dtype), self.degrees)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def build_normalized_adjacency(train: InteractionDataset, dtype=np.float64) -> NormalizedAdjacency:
    """Normalise the train bipartite graph by train degrees.

    Items without train interactions get all-zero rows and columns.
    """
    m, n = train.num_users, train.num_items
    du = train.user_degrees().astype(np.float64)
    di = train.item_degrees().astype(np.float64)
    if (di == 0).any():
        log.warning("%d items have no train interactions; their embeddings propagate as zero",
                    int((di == 0).sum()))
    if (du == 0).any():
        log.warning("%d users have no train interactions", int((du == 0).sum()))
    coef = 1.0 / np.sqrt(du[train.users] * di[train.items])
    rows = np.concatenate([train.users, m + train.items])
    cols = np.concatenate([m + train.items, train.users])
    vals = np.concatenate([coef, coef]).astype(dtype)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(m + n, m + n))
    mat.sort_indices()
    return NormalizedAdjacency(m, n, mat, np.concatenate([du, di]))


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, x * slope)


def leaky_relu_grad(pre: np.ndarray, slope: float) -> np.ndarray:
    # the kink at exactly 0 takes the negative branch
    return np.where(pre > 0, 1.0, slope).astype(pre.dtype, copy=False)


@dataclass
class PropagationOutput:
    layer0: np.ndarray
    per_layer: list[np.ndarray]
    preactivations: list[np.ndarray]
    combined: np.ndarray | None = None

    @property
    def num_layers(self) -> int:
        return len(self.per_layer)

    def layer(self, k: int) -> np.ndarray:
        return self.layer0 if k == 0 else self.per_layer[k - 1]


def propagate(adj: NormalizedAdjacency, E0: np.ndarray, K: int, nonlinear: bool = True,
              slope: float = 0.01) -> PropagationOutput:
    """Run ``K`` layers of ``E(k+1) = LeakyReLU(A_norm @ E(k))``.

    With ``nonlinear=False`` the activation is dropped.  Pre-activations are
    kept for the backward pass.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    if not 0.0 <= slope < 1.0:
        raise ValueError("slope must lie in [0, 1)")
    if E0.shape[0] != adj.size:
        raise ValueError(f"embedding has {E0.shape[0]} rows, graph has {adj.size} nodes")
    mat = adj.matrix if adj.matrix.dtype == E0.dtype else adj.matrix.astype(E0.dtype)
    layers, pres = [], []
    current = E0
    for k in range(1, K + 1):
        pre = np.asarray(mat @ current)
        current = leaky_relu(pre, slope) if nonlinear else pre
        if not np.isfinite(current).all():
            raise NumericOverflowError(k)
        pres.append(pre)
        layers.append(current)
    return PropagationOutput(E0, layers, pres)


def layer_set(K: int, include_layer0: bool) -> range:
    if not include_layer0 and K < 1:
        raise ValueError("layer combination without layer 0 needs K >= 1")
    return range(0 if include_layer0 else 1, K + 1)


def combine_layers(output: PropagationOutput, include_layer0: bool) -> np.ndarray:
    """Mean of layers ``1..K`` (or ``0..K`` when ``include_layer0``)."""
    ks = layer_set(output.num_layers, include_layer0)
    total = output.layer(ks[0]).copy()
    for k in ks[1:]:
        total += output.layer(k)
    total /= len(ks)
    output.combined = total
    return total


def backpropagate(adj: NormalizedAdjacency, output: PropagationOutput, grad_combined: np.ndarray,
                  include_layer0: bool, nonlinear: bool, slope: float) -> np.ndarray:
    """Pull a gradient w.r.t. the combined embedding back to ``E0``."""
    K = output.num_layers
    ks = layer_set(K, include_layer0)
    share = grad_combined / len(ks)
    mat = adj.matrix if adj.matrix.dtype == grad_combined.dtype else adj.matrix.astype(grad_combined.dtype)
    upstream = None
    for k in range(K, 0, -1):
        g = share.copy() if k in ks else np.zeros_like(share)
        if upstream is not None:
            g += upstream
        if nonlinear:
            g *= leaky_relu_grad(output.preactivations[k - 1], slope)
        # A_norm is symmetric, so its transpose is itself
        upstream = np.asarray(mat @ g)
    g0 = share.copy() if 0 in ks else np.zeros_like(share)
    if upstream is not None:
        g0 += upstream
    return g0
