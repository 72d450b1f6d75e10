"""Self-attention heads: vanilla, naive DCT, efficient DCT and the ideal oracle.

All four formulations share the same weights, so their outputs can be compared
directly:

    vanilla    softmax(Q Kᵀ / sqrt(d_q)) V
    naive      D_barᵀ softmax(D_bar Q (D_bar K)ᵀ / sqrt(d_q)) D_bar V
    efficient  X_bar = D_bar X, then vanilla attention on X_bar, then D_barᵀ
    ideal      full E, reconstructed through the 2-D DCT round trip, times V

d_q is the per-head width, d / heads.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from .dct import (DctPlan, dct2_forward, dct2_inverse, dct_forward, dct_inverse,
                  get_plan, n_bar_for_scale)
from .numerics import (Matrix, Rng, ShapeError, add, glorot_uniform, hstack, matmul,
                       softmax_inplace, transpose)

logger = logging.getLogger(__name__)


class AttentionTag(str, Enum):
    VANILLA = "vanilla"
    DCT_EFFICIENT = "dct"
    DCT_IDEAL = "ideal"
    DCT_NAIVE = "naive"


_LABEL_PREFIX = {
    AttentionTag.VANILLA: "Vanilla",
    AttentionTag.DCT_EFFICIENT: "DCT",
    AttentionTag.DCT_IDEAL: "IDEAL",
    AttentionTag.DCT_NAIVE: "NAIVE",
}


@dataclass(frozen=True)
class AttentionKind:
    """
    Attention formulation selector.

    Compressed kinds carry either a fixed coefficient count n_bar or a scale,
    the fraction of the sequence length kept (n_bar = round(scale·n)).
    """
    tag: AttentionTag
    n_bar: Optional[int] = None
    scale: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "tag", AttentionTag(self.tag))
        if self.tag is AttentionTag.VANILLA:
            if self.n_bar is not None or self.scale is not None:
                raise ValueError("Vanilla attention takes no n_bar or scale")
            return
        if (self.n_bar is None) == (self.scale is None):
            raise ValueError(f"{self.tag.value} attention needs exactly one of n_bar or scale")
        if self.n_bar is not None and self.n_bar < 1:
            raise ValueError(f"n_bar must be at least 1, got {self.n_bar}")
        if self.scale is not None and not 0 < self.scale <= 1:
            raise ValueError(f"scale must lie in (0, 1], got {self.scale}")

    @classmethod
    def vanilla(cls) -> "AttentionKind":
        return cls(AttentionTag.VANILLA)

    @classmethod
    def of(cls, tag, n_bar: Optional[int] = None, scale: Optional[float] = None) -> "AttentionKind":
        """Build a kind from a tag or CLI name; vanilla ignores n_bar and scale."""
        tag = AttentionTag(tag)
        if tag is AttentionTag.VANILLA:
            return cls.vanilla()
        return cls(tag, n_bar=n_bar, scale=scale)

    @property
    def compressed(self) -> bool:
        return self.tag is not AttentionTag.VANILLA

    @property
    def label(self) -> str:
        """{Model}-{scale} label, e.g. "DCT-0.25", or "DCT-n32" for a fixed count."""
        prefix = _LABEL_PREFIX[self.tag]
        if not self.compressed:
            return prefix
        if self.scale is not None:
            return f"{prefix}-{self.scale:g}"
        return f"{prefix}-n{self.n_bar}"

    def resolve_n_bar(self, n: int) -> Optional[int]:
        """Coefficient count used at sequence length n (None for vanilla)."""
        if not self.compressed:
            return None
        if self.n_bar is not None:
            if self.n_bar > n:
                raise ValueError(f"n_bar={self.n_bar} exceeds sequence length {n}")
            return self.n_bar
        return n_bar_for_scale(n, self.scale)


@dataclass(frozen=True)
class AttentionParams:
    """Projection weights of one head, each d x d_head."""
    w_q: Matrix
    w_k: Matrix
    w_v: Matrix

    def __post_init__(self):
        shapes = {self.w_q.shape, self.w_k.shape, self.w_v.shape}
        if len(shapes) != 1:
            raise ShapeError(
                f"Head projections disagree: {self.w_q.shape}, {self.w_k.shape}, {self.w_v.shape}"
            )

    @property
    def d(self) -> int:
        return self.w_q.rows

    @property
    def d_head(self) -> int:
        return self.w_q.cols


@dataclass(frozen=True)
class MultiHeadParams:
    """Per-head projections plus the (heads·d_head) x d output projection."""
    heads: Tuple[AttentionParams, ...]
    w_o: Matrix

    def validate(self, d: int) -> None:
        if not self.heads:
            raise ShapeError("Multi-head attention needs at least one head")
        widths = {(p.d, p.d_head) for p in self.heads}
        if len(widths) != 1:
            raise ShapeError(f"Inconsistent head shapes: {sorted(widths)}")
        head_d, d_head = widths.pop()
        if head_d != d:
            raise ShapeError(f"Heads project from width {head_d}, input has width {d}")
        if self.w_o.rows != len(self.heads) * d_head:
            raise ShapeError(
                f"W_O has {self.w_o.rows} rows, expected {len(self.heads)} heads x {d_head}"
            )


def init_attention_params(rng: Rng, d: int, d_head: int) -> AttentionParams:
    return AttentionParams(
        w_q=glorot_uniform(rng, d, d_head),
        w_k=glorot_uniform(rng, d, d_head),
        w_v=glorot_uniform(rng, d, d_head),
    )


def init_multi_head_params(rng: Rng, d: int, heads: int) -> MultiHeadParams:
    """Glorot-uniform weights for `heads` heads of width d / heads."""
    if heads < 1 or d % heads:
        raise ValueError(f"d={d} must be divisible by heads={heads}")
    d_head = d // heads
    return MultiHeadParams(
        heads=tuple(init_attention_params(rng, d, d_head) for _ in range(heads)),
        w_o=glorot_uniform(rng, heads * d_head, d),
    )


def project_qkv(x: Matrix, p: AttentionParams) -> Tuple[Matrix, Matrix, Matrix]:
    """Q = X W_Q, K = X W_K, V = X W_V."""
    if x.cols != p.d:
        raise ShapeError(f"Input of shape {x.shape} does not match projections of shape {p.w_q.shape}")
    return matmul(x, p.w_q), matmul(x, p.w_k), matmul(x, p.w_v)


def attention_weights(q: Matrix, k: Matrix) -> Matrix:
    """
    Row-stochastic weights softmax(q kᵀ / sqrt(d_q)).

    Scores are normalized in place, so only one rows x rows matrix is live.
    """
    if q.cols != k.cols:
        raise ShapeError(f"Queries {q.shape} and keys {k.shape} differ in width")
    scores = q.data @ k.data.T
    scores *= 1.0 / math.sqrt(q.cols)
    return Matrix._wrap(softmax_inplace(scores))


def vanilla_attention(q: Matrix, k: Matrix, v: Matrix) -> Matrix:
    if k.rows != v.rows:
        raise ShapeError(f"Keys {k.shape} and values {v.shape} differ in length")
    weights = attention_weights(q, k)
    return matmul(weights, v)


def _check_plan(x: Matrix, plan: DctPlan) -> None:
    if x.rows != plan.n:
        raise ShapeError(f"Input of shape {x.shape} does not match plan length {plan.n}")


def naive_dct_attention(x: Matrix, p: AttentionParams, plan: DctPlan) -> Matrix:
    """Compress Q, K and V separately, attend in the compressed domain, invert."""
    _check_plan(x, plan)
    q, k, v = project_qkv(x, p)
    q_bar = dct_forward(plan, q)
    k_bar = dct_forward(plan, k)
    v_bar = dct_forward(plan, v)
    weights = attention_weights(q_bar, k_bar)
    return dct_inverse(plan, matmul(weights, v_bar))


def efficient_dct_attention(x: Matrix, p: AttentionParams, plan: DctPlan) -> Matrix:
    """
    Compress X once, attend over n_bar compressed rows, invert.

    No n x n matrix is ever allocated.
    """
    _check_plan(x, plan)
    x_bar = dct_forward(plan, x)
    q_bar, k_bar, v_bar = project_qkv(x_bar, p)
    del x_bar
    weights = attention_weights(q_bar, k_bar)
    y_bar = matmul(weights, v_bar)
    return dct_inverse(plan, y_bar)


def energy_reconstruction(q: Matrix, k: Matrix, plan: DctPlan) -> Tuple[Matrix, Matrix]:
    """Full energy E and its lossy reconstruction D_barᵀ (D_bar E D_barᵀ) D_bar."""
    energy = attention_weights(q, k)
    return energy, dct2_inverse(plan, dct2_forward(plan, energy))


def ideal_dct_attention(x: Matrix, p: AttentionParams, plan: DctPlan) -> Matrix:
    """
    Attention through the reconstructed energy matrix.

    Evaluation only: this materializes E and its reconstruction, both n x n.
    """
    _check_plan(x, plan)
    q, k, v = project_qkv(x, p)
    _, reconstructed = energy_reconstruction(q, k, plan)
    return matmul(reconstructed, v)


def head_attention(x: Matrix, p: AttentionParams, kind: AttentionKind,
                   plan: Optional[DctPlan] = None) -> Matrix:
    """One head of the selected kind, resolving the shared plan when not given."""
    if not kind.compressed:
        q, k, v = project_qkv(x, p)
        return vanilla_attention(q, k, v)

    if plan is None:
        plan = get_plan(x.rows, kind.resolve_n_bar(x.rows))
    if kind.tag is AttentionTag.DCT_EFFICIENT:
        return efficient_dct_attention(x, p, plan)
    if kind.tag is AttentionTag.DCT_IDEAL:
        return ideal_dct_attention(x, p, plan)
    return naive_dct_attention(x, p, plan)


def _efficient_multi_head(x: Matrix, params: MultiHeadParams, plan: DctPlan) -> Matrix:
    """
    Every head attends over one shared X_bar = D_bar X.

    The heads are concatenated and projected with W_O while still compressed,
    so a single inverse transform produces the n x d output.
    """
    _check_plan(x, plan)
    x_bar = dct_forward(plan, x)
    outputs = []
    for p in params.heads:
        q_bar, k_bar, v_bar = project_qkv(x_bar, p)
        outputs.append(vanilla_attention(q_bar, k_bar, v_bar))
        del q_bar, k_bar, v_bar
    del x_bar

    concat = outputs[0] if len(outputs) == 1 else hstack(outputs)
    del outputs
    projected = matmul(concat, params.w_o)
    del concat
    return dct_inverse(plan, projected)


def multi_head(x: Matrix, params: MultiHeadParams, kind: AttentionKind,
               plan: Optional[DctPlan] = None) -> Matrix:
    """Concatenate the heads of the selected kind and project with W_O."""
    params.validate(x.cols)
    if kind.compressed and plan is None:
        plan = get_plan(x.rows, kind.resolve_n_bar(x.rows))
    if kind.tag is AttentionTag.DCT_EFFICIENT:
        return _efficient_multi_head(x, params, plan)

    outputs = [head_attention(x, p, kind, plan) for p in params.heads]
    concat = outputs[0] if len(outputs) == 1 else hstack(outputs)
    del outputs
    return matmul(concat, params.w_o)


def vanilla_attention_vjp(q: Matrix, k: Matrix, v: Matrix,
                          upstream: Matrix) -> Tuple[Matrix, Matrix, Matrix]:
    """
    Reverse-mode gradients of <upstream, vanilla_attention(q, k, v)>.

    Returns:
        (dQ, dK, dV) shaped like q, k and v
    """
    if q.cols != k.cols or k.rows != v.rows:
        raise ShapeError(f"Inconsistent q {q.shape}, k {k.shape}, v {v.shape}")
    if upstream.shape != (q.rows, v.cols):
        raise ShapeError(
            f"Upstream of shape {upstream.shape} does not match output shape {(q.rows, v.cols)}"
        )
    inv_sqrt = 1.0 / math.sqrt(q.cols)
    weights = attention_weights(q, k).data
    u = upstream.data

    d_v = weights.T @ u
    d_weights = u @ v.data.T
    # softmax Jacobian applied row by row
    d_scores = weights * (d_weights - np.sum(d_weights * weights, axis=1, keepdims=True))
    d_q = d_scores @ k.data * inv_sqrt
    d_k = d_scores.T @ q.data * inv_sqrt
    return Matrix._wrap(d_q), Matrix._wrap(d_k), Matrix._wrap(d_v)


def efficient_dct_attention_vjp(x: Matrix, p: AttentionParams, plan: DctPlan,
                                upstream: Matrix) -> Matrix:
    """Gradient of <upstream, efficient_dct_attention(x)> with respect to x."""
    _check_plan(x, plan)
    x_bar = dct_forward(plan, x)
    q_bar, k_bar, v_bar = project_qkv(x_bar, p)
    d_q, d_k, d_v = vanilla_attention_vjp(q_bar, k_bar, v_bar, dct_forward(plan, upstream))
    d_x_bar = add(
        add(matmul(d_q, transpose(p.w_q)), matmul(d_k, transpose(p.w_k))),
        matmul(d_v, transpose(p.w_v)),
    )
    return dct_inverse(plan, d_x_bar)


def permute_heads(params: MultiHeadParams, order: Sequence[int]) -> MultiHeadParams:
    """Reorder heads and the matching row blocks of W_O; the output is unchanged."""
    if sorted(order) != list(range(len(params.heads))):
        raise ValueError(f"{list(order)} is not a permutation of {len(params.heads)} heads")
    d_head = params.heads[0].d_head
    blocks = [params.w_o.data[i * d_head:(i + 1) * d_head] for i in order]
    return MultiHeadParams(
        heads=tuple(params.heads[i] for i in order),
        w_o=Matrix(np.vstack(blocks)),
    )
