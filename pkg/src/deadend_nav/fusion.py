"""Attention pooling and bi-directional cross-modal fusion over tokens.

Shape-level, untrained math: patch features pool into one image-side token,
point features into one lidar-side token, the two attend to each other in
both directions, and a residual feed-forward block merges them. A small
affine-plus-sigmoid head turns the fused token into a dead-end probability.
Everything is a pure function of (inputs, weights); weights are seeded, not
learned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

DEFAULT_DIM = 32
# Sigmoid output is clamped inside the open interval (0, 1).
_P_EPS = 1e-12


class FusionError(ValueError):
    """Dimension mismatch or non-finite values in the fusion math."""


@dataclass(frozen=True)
class Token:
    """Fixed-length feature vector summarizing one sensor frame."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise FusionError("token must be a nonempty 1-D vector")
        if not np.isfinite(v).all():
            raise FusionError("token has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class FusionWeights:
    """All parameters of the fusion stack for one token dimension d.

    ``w_patch`` scores image patches against the global descriptor; the
    q/k/v projections drive the two cross-attention directions (primed set
    for the lidar-queries-image direction); ``phi_*`` is the two-layer point
    score map (2d -> 1, tanh hidden); ``ffn_*`` the two-layer merge block
    (2d -> d, tanh hidden); ``head_*`` the dead-end probability head.
    """

    w_patch: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_q2: np.ndarray
    w_k2: np.ndarray
    w_v2: np.ndarray
    phi_w1: np.ndarray
    phi_b1: np.ndarray
    phi_w2: np.ndarray
    phi_b2: float
    ffn_w1: np.ndarray
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray
    ffn_b2: np.ndarray
    head_w: np.ndarray
    head_b: float
    heads: int = 1

    def __post_init__(self) -> None:
        d = self.w_patch.shape[0]
        square = ("w_patch", "w_q", "w_k", "w_v", "w_q2", "w_k2", "w_v2", "ffn_w2")
        for name in square:
            m = getattr(self, name)
            if m.shape != (d, d):
                raise FusionError(f"{name} must be ({d}, {d}), got {m.shape}")
        for name, shape in (("phi_w1", (d, 2 * d)), ("phi_b1", (d,)), ("phi_w2", (d,)),
                            ("ffn_w1", (d, 2 * d)), ("ffn_b1", (d,)), ("ffn_b2", (d,)),
                            ("head_w", (d,))):
            m = getattr(self, name)
            if m.shape != shape:
                raise FusionError(f"{name} must be {shape}, got {m.shape}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray) and not np.isfinite(v).all():
                raise FusionError(f"{f.name} has non-finite entries")
        if self.heads < 1 or d % self.heads != 0:
            raise FusionError(f"heads ({self.heads}) must divide d ({d})")

    @property
    def dim(self) -> int:
        return int(self.w_patch.shape[0])

    @classmethod
    def seeded(cls, dim: int = DEFAULT_DIM, heads: int = 1, seed: int = 0) -> "FusionWeights":
        """Reproducible init: every parameter uniform in (-1/sqrt(d), 1/sqrt(d))."""
        rng = np.random.default_rng(seed)
        bound = 1.0 / math.sqrt(dim)

        def u(*shape):
            return rng.uniform(-bound, bound, shape)

        return cls(
            w_patch=u(dim, dim),
            w_q=u(dim, dim), w_k=u(dim, dim), w_v=u(dim, dim),
            w_q2=u(dim, dim), w_k2=u(dim, dim), w_v2=u(dim, dim),
            phi_w1=u(dim, 2 * dim), phi_b1=u(dim), phi_w2=u(dim), phi_b2=float(u()),
            ffn_w1=u(dim, 2 * dim), ffn_b1=u(dim), ffn_w2=u(dim, dim), ffn_b2=u(dim),
            head_w=u(dim), head_b=float(u()),
            heads=heads,
        )

    @classmethod
    def zeros(cls, dim: int = DEFAULT_DIM, heads: int = 1) -> "FusionWeights":
        z = np.zeros
        return cls(
            w_patch=z((dim, dim)),
            w_q=z((dim, dim)), w_k=z((dim, dim)), w_v=z((dim, dim)),
            w_q2=z((dim, dim)), w_k2=z((dim, dim)), w_v2=z((dim, dim)),
            phi_w1=z((dim, 2 * dim)), phi_b1=z(dim), phi_w2=z(dim), phi_b2=0.0,
            ffn_w1=z((dim, 2 * dim)), ffn_b1=z(dim), ffn_w2=z((dim, dim)), ffn_b2=z(dim),
            head_w=z(dim), head_b=0.0,
            heads=heads,
        )


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _check_tokens(tokens: list[Token], dim: int, what: str) -> np.ndarray:
    if not tokens:
        raise FusionError(f"empty {what} list")
    for t in tokens:
        if t.dim != dim:
            raise FusionError(f"{what} dimension {t.dim} != weights dimension {dim}")
    return np.stack([t.values for t in tokens])


def image_token(patches: list[Token], global_desc: Token,
                weights: FusionWeights) -> tuple[Token, np.ndarray]:
    """Pool patch descriptors into one token by attention against the global.

    Weight of patch k is softmax_k(g^T W f_k); the token is the weighted sum
    of the patches. Returns (token, weights); weights sum to 1.
    """
    feats = _check_tokens(patches, weights.dim, "patch")
    if global_desc.dim != weights.dim:
        raise FusionError("global descriptor dimension mismatch")
    pooled, alpha = pool_batch(feats[None, :, :], global_desc.values[None, :], weights,
                               side="image")
    return Token(pooled[0]), alpha[0]


def lidar_token(point_feats: list[Token], context: Token,
                weights: FusionWeights) -> tuple[Token, np.ndarray]:
    """Pool point features, scoring each by phi([h_i; u]) before softmax."""
    feats = _check_tokens(point_feats, weights.dim, "point feature")
    if context.dim != weights.dim:
        raise FusionError("context dimension mismatch")
    pooled, beta = pool_batch(feats[None, :, :], context.values[None, :], weights,
                              side="lidar")
    return Token(pooled[0]), beta[0]


def pool_batch(feats: np.ndarray, anchor: np.ndarray, weights: FusionWeights,
               side: str) -> tuple[np.ndarray, np.ndarray]:
    """Batched attention pooling; feats (N, K, d), anchor (N, d) -> (N, d), (N, K)."""
    if side == "image":
        logits = np.einsum("nd,de,nke->nk", anchor, weights.w_patch, feats)
    elif side == "lidar":
        k = feats.shape[1]
        cat = np.concatenate([feats, np.repeat(anchor[:, None, :], k, axis=1)], axis=2)
        hidden = np.tanh(np.einsum("he,nke->nkh", weights.phi_w1, cat) + weights.phi_b1)
        logits = hidden @ weights.phi_w2 + weights.phi_b2
    else:
        raise ValueError(f"unknown side {side!r}")
    if not np.isfinite(logits).all():
        raise FusionError("non-finite attention logits")
    alpha = softmax(logits, axis=1)
    pooled = np.einsum("nk,nkd->nd", alpha, feats)
    return pooled, alpha


def attend(query: np.ndarray, keys: np.ndarray, values: np.ndarray,
           w_q: np.ndarray, w_k: np.ndarray, w_v: np.ndarray, heads: int = 1) -> np.ndarray:
    """Scaled dot-product attention for one query over M key/value rows.

    With a single key row the softmax collapses to weight 1 and the output is
    the projected value; the general form is kept so the math stays visible
    and testable with longer key lists.
    """
    d = query.shape[-1]
    dh = d // heads
    q = (query @ w_q).reshape(heads, dh)
    k = (keys @ w_k).reshape(-1, heads, dh)
    v = (values @ w_v).reshape(-1, heads, dh)
    scores = np.einsum("hd,mhd->hm", q, k) / math.sqrt(dh)
    w = softmax(scores, axis=1)
    out = np.einsum("hm,mhd->hd", w, v)
    return out.reshape(d)


def cross_fuse(z_img: Token, z_lidar: Token, weights: FusionWeights) -> Token:
    """Bi-directional cross-attention plus a residual feed-forward merge.

    The image token queries the lidar token and vice versa (primed
    projections); the two attended streams pass through the 2d->d
    feed-forward block with the stream mean as the residual path.
    """
    d = weights.dim
    if z_img.dim != d or z_lidar.dim != d:
        raise FusionError("token dimension mismatch with weights")
    out = cross_fuse_batch(z_img.values[None, :], z_lidar.values[None, :], weights)
    if not np.isfinite(out).all():
        raise FusionError("non-finite fusion output")
    return Token(out[0])


def cross_fuse_batch(z_img: np.ndarray, z_lidar: np.ndarray,
                     weights: FusionWeights) -> np.ndarray:
    """Batched cross fusion; both inputs (N, d) -> (N, d)."""
    h = weights.heads
    dh = weights.dim // h

    def single_key_attend(q, k, v, wq, wk, wv):
        # One key per direction: softmax over the key axis is identically 1,
        # so the attended stream is the projected value. Head split kept for
        # shape parity with the multi-head configuration.
        del q, k, wq, wk
        return (v @ wv).reshape(-1, h, dh).reshape(-1, weights.dim)

    z_img_hat = single_key_attend(z_img, z_lidar, z_lidar,
                                  weights.w_q, weights.w_k, weights.w_v)
    z_lidar_hat = single_key_attend(z_lidar, z_img, z_img,
                                    weights.w_q2, weights.w_k2, weights.w_v2)
    cat = np.concatenate([z_img_hat, z_lidar_hat], axis=1)
    hidden = np.tanh(cat @ weights.ffn_w1.T + weights.ffn_b1)
    ffn_out = hidden @ weights.ffn_w2.T + weights.ffn_b2
    residual = 0.5 * (z_img_hat + z_lidar_hat)
    return residual + ffn_out


def cross_attend_pair(z_img: Token, z_lidar: Token,
                      weights: FusionWeights) -> tuple[np.ndarray, np.ndarray]:
    """The two attended streams before the merge block (for inspection/tests)."""
    img_hat = attend(z_img.values, z_lidar.values[None, :], z_lidar.values[None, :],
                     weights.w_q, weights.w_k, weights.w_v, weights.heads)
    lidar_hat = attend(z_lidar.values, z_img.values[None, :], z_img.values[None, :],
                       weights.w_q2, weights.w_k2, weights.w_v2, weights.heads)
    return img_hat, lidar_hat


def deadend_head(z_fuse: Token, head_w: np.ndarray, head_b: float) -> float:
    """Affine map plus sigmoid, clamped strictly inside (0, 1)."""
    if z_fuse.dim != head_w.shape[0]:
        raise FusionError("head dimension mismatch")
    return float(deadend_head_batch(z_fuse.values[None, :], head_w, head_b)[0])


def deadend_head_batch(z: np.ndarray, head_w: np.ndarray, head_b: float) -> np.ndarray:
    logits = z @ head_w + head_b
    p = np.empty_like(logits, dtype=np.float64)
    pos = logits >= 0
    p[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    e = np.exp(logits[~pos])
    p[~pos] = e / (1.0 + e)
    return np.clip(p, _P_EPS, 1.0 - _P_EPS)


# -- Weight file I/O ----------------------------------------------------------

_PARAM_ORDER = ("w_patch", "w_q", "w_k", "w_v", "w_q2", "w_k2", "w_v2",
                "phi_w1", "phi_b1", "phi_w2", "phi_b2",
                "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2", "head_w", "head_b")


def save_weights(path, weights: FusionWeights) -> None:
    """Text format: header ``fusion-weights v1 d=<d> heads=<h>`` then one f64
    per line, parameters in declaration order, matrices row-major."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"fusion-weights v1 d={weights.dim} heads={weights.heads}\n")
        for name in _PARAM_ORDER:
            value = getattr(weights, name)
            flat = np.atleast_1d(np.asarray(value, dtype=np.float64)).ravel()
            for x in flat:
                fh.write(f"{x!r}\n")


def load_weights(path) -> FusionWeights:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "fusion-weights" or header[1] != "v1":
            raise FusionError(f"bad weight file header: {' '.join(header)!r}")
        d = int(header[2].removeprefix("d="))
        heads = int(header[3].removeprefix("heads="))
        values = np.array([float(line) for line in fh if line.strip()])
    shapes = {"w_patch": (d, d), "w_q": (d, d), "w_k": (d, d), "w_v": (d, d),
              "w_q2": (d, d), "w_k2": (d, d), "w_v2": (d, d),
              "phi_w1": (d, 2 * d), "phi_b1": (d,), "phi_w2": (d,), "phi_b2": (),
              "ffn_w1": (d, 2 * d), "ffn_b1": (d,), "ffn_w2": (d, d), "ffn_b2": (d,),
              "head_w": (d,), "head_b": ()}
    expected = sum(int(np.prod(s)) if s else 1 for s in shapes.values())
    if values.size != expected:
        raise FusionError(f"weight file holds {values.size} values, expected {expected}")
    params = {}
    pos = 0
    for name in _PARAM_ORDER:
        shape = shapes[name]
        count = int(np.prod(shape)) if shape else 1
        chunk = values[pos:pos + count]
        pos += count
        params[name] = float(chunk[0]) if shape == () else chunk.reshape(shape)
    return FusionWeights(heads=heads, **params)
