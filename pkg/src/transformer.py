"""Forward-only transformer encoder with pluggable attention.

Blocks use the post-LN order:

    y   = LN(x + MultiHead(x))
    out = LN(y + GELU(y W1 + b1) W2 + b2)
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .attention import AttentionKind, MultiHeadParams, init_multi_head_params, multi_head
from .dct import DctPlan, get_plan
from .numerics import (ALLOCATIONS, Matrix, Rng, add, add_bias, gelu, glorot_uniform,
                       layer_norm, matmul)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder shape; defaults mirror config.yaml (4 blocks, d=512, 8 heads, FF 2048)."""
    n_blocks: int = config.N_BLOCKS
    d: int = config.D_MODEL
    heads: int = config.HEADS
    d_ff: int = config.D_FF
    max_len: int = config.MAX_LEN
    vocab_size: int = config.VOCAB_SIZE
    attention: AttentionKind = field(default_factory=AttentionKind.vanilla)
    seed: int = config.SEED
    layer_norm_eps: float = config.LAYER_NORM_EPS
    fast_path: Optional[bool] = None

    def __post_init__(self):
        if self.n_blocks < 0:
            raise ValueError(f"n_blocks must be non-negative, got {self.n_blocks}")
        for name in ("d", "heads", "d_ff", "max_len", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} must be divisible by heads={self.heads}")


@dataclass(frozen=True, eq=False)
class BlockWeights:
    attention: MultiHeadParams
    w1: Matrix
    b1: np.ndarray
    w2: Matrix
    b2: np.ndarray
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray


@dataclass(frozen=True, eq=False)
class EncoderWeights:
    token_embedding: Matrix
    position_embedding: Matrix
    blocks: Tuple[BlockWeights, ...]


def init_encoder_weights(cfg: EncoderConfig) -> EncoderWeights:
    """Deterministic Glorot-uniform weights for cfg, drawn from Rng(cfg.seed)."""
    rng = Rng(cfg.seed)
    token_embedding = glorot_uniform(rng, cfg.vocab_size, cfg.d)
    position_embedding = glorot_uniform(rng, cfg.max_len, cfg.d)

    blocks = []
    for _ in range(cfg.n_blocks):
        blocks.append(BlockWeights(
            attention=init_multi_head_params(rng, cfg.d, cfg.heads),
            w1=glorot_uniform(rng, cfg.d, cfg.d_ff),
            b1=np.zeros(cfg.d_ff),
            w2=glorot_uniform(rng, cfg.d_ff, cfg.d),
            b2=np.zeros(cfg.d),
            ln1_gamma=np.ones(cfg.d),
            ln1_beta=np.zeros(cfg.d),
            ln2_gamma=np.ones(cfg.d),
            ln2_beta=np.zeros(cfg.d),
        ))
    logger.info(
        f"Initialized encoder: {cfg.n_blocks} blocks, d={cfg.d}, heads={cfg.heads}, "
        f"d_ff={cfg.d_ff}, seed={cfg.seed}"
    )
    return EncoderWeights(token_embedding, position_embedding, tuple(blocks))


def embed(token_ids: Sequence[int], w: EncoderWeights) -> Matrix:
    """Token embedding plus learned absolute position embedding, per position."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError(f"token_ids must be a non-empty sequence, got shape {ids.shape}")
    if ids.size > w.position_embedding.rows:
        raise ValueError(
            f"Sequence of length {ids.size} exceeds max_len {w.position_embedding.rows}"
        )
    vocab_size = w.token_embedding.rows
    if ids.min() < 0 or ids.max() >= vocab_size:
        bad = int(ids[(ids < 0) | (ids >= vocab_size)][0])
        raise ValueError(f"Token id {bad} outside vocabulary of size {vocab_size}")
    return Matrix._wrap(w.token_embedding.data[ids] + w.position_embedding.data[:ids.size])


def encoder_block(x: Matrix, block: BlockWeights, kind: AttentionKind,
                  eps: float = config.LAYER_NORM_EPS,
                  plan: Optional[DctPlan] = None) -> Matrix:
    attended = multi_head(x, block.attention, kind, plan)
    y = layer_norm(add(x, attended), block.ln1_gamma, block.ln1_beta, eps)
    del attended
    hidden = gelu(add_bias(matmul(y, block.w1), block.b1))
    ff = add_bias(matmul(hidden, block.w2), block.b2)
    del hidden
    return layer_norm(add(y, ff), block.ln2_gamma, block.ln2_beta, eps)


def encoder_forward(token_ids: Sequence[int], weights: EncoderWeights,
                    cfg: EncoderConfig) -> Matrix:
    """Embed, then run every block; one DCT plan is shared by all blocks."""
    x = embed(token_ids, weights)
    plan = None
    if cfg.attention.compressed:
        plan = get_plan(x.rows, cfg.attention.resolve_n_bar(x.rows), cfg.fast_path)
    for block in weights.blocks:
        x = encoder_block(x, block, cfg.attention, cfg.layer_norm_eps, plan)
    return x


def encode_batch(batch: Sequence[Sequence[int]], weights: EncoderWeights,
                 cfg: EncoderConfig, workers: int = 1) -> List[Matrix]:
    """
    Forward every sequence of a batch.

    Args:
        batch: Token id sequences
        weights: Encoder weights
        cfg: Encoder configuration
        workers: Worker threads; must be 1 while an allocation measurement runs

    Returns:
        One hidden-state matrix per sequence, in input order
    """
    if workers > 1 and ALLOCATIONS.measuring:
        raise RuntimeError("Parallel forward passes are not allowed during peak-memory measurement")
    if workers <= 1:
        return [encoder_forward(ids, weights, cfg) for ids in batch]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ids: encoder_forward(ids, weights, cfg), batch))
