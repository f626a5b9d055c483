"""Adaptive multi-view feature fusion plus the add/concat/ensemble baselines.

The gated path weighs L point-aligned views per point: each view votes
through a sigmoid gate, votes are summed across views, row-softmaxed into
convex weights, and the views are combined with those weights. The manual
backward propagates exact chain-rule gradients to every input and gate
weight matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Two-branch form: never exponentiates a positive argument.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class GateParams:
    """One (L, C_i) gate weight matrix per fused view."""

    weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = tuple(np.asarray(w) for w in self.weights)
        views = len(mats)
        if views == 0:
            raise ValueError("gate params need at least one view matrix")
        for i, w in enumerate(mats):
            if w.ndim != 2 or w.shape[0] != views:
                raise ValueError(
                    f"gate matrix {i} must have shape ({views}, C_i), got {w.shape}"
                )
        object.__setattr__(self, "weights", mats)

    @property
    def num_views(self) -> int:
        return len(self.weights)

    @classmethod
    def zeros(cls, num_views: int, channels: int) -> "GateParams":
        return cls(tuple(np.zeros((num_views, channels)) for _ in range(num_views)))


@dataclass(frozen=True)
class FusionCache:
    """Forward activations retained for the backward pass."""

    inputs: tuple[np.ndarray, ...]
    gates: tuple[np.ndarray, ...]
    softmax: np.ndarray

    def view_weights(self, i: int) -> np.ndarray:
        return self.softmax[:, i]


def _check_views(features: Sequence[np.ndarray]) -> list[np.ndarray]:
    xs = [np.asarray(x) for x in features]
    if not xs:
        raise ValueError("no views to fuse")
    for i, x in enumerate(xs):
        if x.ndim != 2:
            raise ValueError(f"view {i} must be 2-D, got shape {x.shape}")
    return xs


def gated_fusion_forward(
    features: Sequence[np.ndarray], params: GateParams
) -> tuple[np.ndarray, FusionCache]:
    """Fuse L same-shape (N, C) views into one, plus a cache for backward.

    The combination is evaluated as (sum_i e_i * X_i) / (sum_i e_i) with e
    the max-shifted softmax numerators; with all-zero gate weights this
    reduces bit-for-bit to the plain mean of the views.
    """
    xs = _check_views(features)
    views = len(xs)
    if views < 2:
        raise ValueError("gated fusion needs at least two views; one view is the identity")
    shape = xs[0].shape
    for i, x in enumerate(xs):
        if x.shape != shape:
            raise ValueError(f"view {i} has shape {x.shape}, expected {shape}")
    if params.num_views != views:
        raise ValueError(f"params cover {params.num_views} views, got {views}")
    for i, w in enumerate(params.weights):
        if w.shape[1] != shape[1]:
            raise ValueError(f"gate matrix {i} expects C={w.shape[1]}, views have C={shape[1]}")

    gates = tuple(_sigmoid(x @ w.T) for x, w in zip(xs, params.weights))
    votes = reduce(np.add, gates)
    shifted = votes - votes.max(axis=1, keepdims=True)
    exp_votes = np.exp(shifted)
    denom = exp_votes.sum(axis=1)
    softmax = exp_votes / denom[:, None]
    fused = reduce(np.add, (exp_votes[:, i, None] * xs[i] for i in range(views)))
    fused = fused / denom[:, None]
    return fused, FusionCache(inputs=tuple(xs), gates=gates, softmax=softmax)


def gated_fusion_backward(
    grad_output, cache: FusionCache, params: GateParams
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of the fused output w.r.t. every view and gate matrix."""
    grad = np.asarray(grad_output)
    xs = cache.inputs
    views = len(xs)
    if grad.shape != xs[0].shape:
        raise ValueError(f"upstream gradient shape {grad.shape} != {xs[0].shape}")
    if params.num_views != views:
        raise ValueError("params do not match the cached forward")
    softmax = cache.softmax
    # d(loss)/d(weight of view i), per point.
    dweights = np.stack([(grad * x).sum(axis=1) for x in xs], axis=1)
    inner = (dweights * softmax).sum(axis=1, keepdims=True)
    dvotes = softmax * (dweights - inner)
    grad_inputs: list[np.ndarray] = []
    grad_params: list[np.ndarray] = []
    for i in range(views):
        gate = cache.gates[i]
        dz = dvotes * gate * (1.0 - gate)
        grad_inputs.append(softmax[:, i, None] * grad + dz @ params.weights[i])
        grad_params.append(dz.T @ xs[i])
    return grad_inputs, grad_params


def fuse_add(features: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise sum of same-shape views, in view order."""
    xs = _check_views(features)
    shape = xs[0].shape
    for i, x in enumerate(xs):
        if x.shape != shape:
            raise ValueError(f"view {i} has shape {x.shape}, expected {shape}")
    return reduce(np.add, xs)


def fuse_concat(features: Sequence[np.ndarray]) -> np.ndarray:
    """Channel concatenation in view order; views must agree on N."""
    xs = _check_views(features)
    rows = xs[0].shape[0]
    for i, x in enumerate(xs):
        if x.shape[0] != rows:
            raise ValueError(f"view {i} has {x.shape[0]} rows, expected {rows}")
    return np.concatenate(xs, axis=1)


def ensemble_scores(scores: Sequence[np.ndarray], tol: float = 1e-4) -> np.ndarray:
    """Accumulate per-model class probabilities (argmax-equivalent to mean)."""
    xs = _check_views(scores)
    shape = xs[0].shape
    for i, x in enumerate(xs):
        if x.shape != shape:
            raise ValueError(f"score set {i} has shape {x.shape}, expected {shape}")
        if x.size == 0:
            continue
        row_sums = x.sum(axis=1)
        if np.abs(row_sums - 1.0).max() > tol or x.min() < -tol:
            raise ValueError(f"score set {i} contains rows that are not probability vectors")
    return reduce(np.add, xs)
