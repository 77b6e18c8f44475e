"""Bookkeeping around training claims: perplexity conversions, low-rank
adapter and embedding-resize parameter budgets, and embedding-alignment
cosine matrices.  Pure arithmetic; no model is ever run here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DataError


def mean_token_probability(perplexity: float) -> float:
    """Reciprocal perplexity: the geometric-mean probability of the correct
    token.  Perplexity below 1 is outside the domain."""
    if perplexity < 1.0:
        raise ConfigurationError(f"perplexity must be >= 1, got {perplexity}")
    return 1.0 / perplexity


def perplexity_from_mean_nll(mean_nll: float) -> float:
    if mean_nll < 0.0:
        raise ConfigurationError(f"mean negative log-likelihood must be >= 0, got {mean_nll}")
    return math.exp(mean_nll)


def mean_nll_from_perplexity(perplexity: float) -> float:
    if perplexity < 1.0:
        raise ConfigurationError(f"perplexity must be >= 1, got {perplexity}")
    return math.log(perplexity)


@dataclass(frozen=True)
class TargetMatrix:
    name: str
    d_in: int
    d_out: int
    layer_count: int

    def __post_init__(self):
        if min(self.d_in, self.d_out, self.layer_count) < 1:
            raise ConfigurationError(f"matrix {self.name!r} has non-positive dimensions")


@dataclass(frozen=True)
class LoraSpec:
    rank: int
    alpha: float
    target_matrices: tuple[TargetMatrix, ...]

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigurationError(f"rank must be >= 1, got {self.rank}")


@dataclass(frozen=True)
class ModelDims:
    """Architecture dimensions for parameter budgeting.

    Defaults describe a 3.8B-class compact decoder: fused attention
    projection, attention output, fused feed-forward up/gate, and
    feed-forward down per layer.
    """

    hidden: int = 3072
    layers: int = 32
    base_vocab: int = 32064
    new_tokens: int = 0
    head_tied: bool = False
    attn_fused: tuple[int, int] = (3072, 9216)
    attn_out: tuple[int, int] = (3072, 3072)
    ffn_fused: tuple[int, int] = (3072, 16384)
    ffn_down: tuple[int, int] = (8192, 3072)

    def __post_init__(self):
        if min(self.hidden, self.layers, self.base_vocab) < 1 or self.new_tokens < 0:
            raise ConfigurationError("model dimensions must be positive (new_tokens >= 0)")


def default_target_matrices(dims: ModelDims | None = None) -> tuple[TargetMatrix, ...]:
    """Attention and feed-forward adapter targets for the default dims."""
    d = dims or ModelDims()
    return (
        TargetMatrix("attn_fused", d.attn_fused[0], d.attn_fused[1], d.layers),
        TargetMatrix("attn_out", d.attn_out[0], d.attn_out[1], d.layers),
        TargetMatrix("ffn_fused", d.ffn_fused[0], d.ffn_fused[1], d.layers),
        TargetMatrix("ffn_down", d.ffn_down[0], d.ffn_down[1], d.layers),
    )


def lora_param_count(spec: LoraSpec) -> int:
    """Trainable adapter parameters: rank x (d_in + d_out) per matrix per
    layer, both factor matrices counted, scaling constant excluded."""
    return sum(
        m.layer_count * spec.rank * (m.d_in + m.d_out) for m in spec.target_matrices
    )


def resize_param_count(dims: ModelDims, scope: str = "new_rows_only") -> int:
    """Embedding/head parameters touched by a vocabulary resize."""
    per_row = dims.hidden * (1 if dims.head_tied else 2)
    if scope == "new_rows_only":
        return dims.new_tokens * per_row
    if scope == "full_embed_and_head":
        return (dims.base_vocab + dims.new_tokens) * per_row
    raise ConfigurationError(
        f"scope must be new_rows_only or full_embed_and_head, got {scope!r}"
    )


def parameter_budget_report(
    dims: ModelDims,
    rank: int,
    alpha: float = 32.0,
    scope: str = "full_embed_and_head",
    total_params: int | None = None,
) -> dict:
    """Formula-derived budget with an explicit caveat field: published
    round-number budgets for comparable setups differ from these formulas,
    so the derived values are reported, never silently reconciled."""
    spec = LoraSpec(rank=rank, alpha=alpha, target_matrices=default_target_matrices(dims))
    lora = lora_param_count(spec)
    resize = resize_param_count(dims, scope)
    report = {
        "rank": rank,
        "alpha": alpha,
        "lora_params": lora,
        "resize_scope": scope,
        "resize_params": resize,
        "trainable_params": lora + resize,
        "note": "formula-derived counts; round-number figures quoted elsewhere "
        "may follow different accounting",
    }
    if total_params:
        report["total_params"] = total_params
        report["trainable_fraction"] = (lora + resize) / total_params
    return report


@dataclass(frozen=True)
class AlignmentReport:
    pairs: tuple[tuple[str, str], ...]
    cosine_matrix: np.ndarray  # [i, j] = cos(vec(pairs[i].a), vec(pairs[j].b))

    @property
    def row_labels(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.pairs)

    @property
    def col_labels(self) -> tuple[str, ...]:
        return tuple(b for _, b in self.pairs)

    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.cosine_matrix)

    def to_tsv(self) -> str:
        lines = ["\t".join(("",) + self.col_labels)]
        for label, row in zip(self.row_labels, self.cosine_matrix):
            lines.append(label + "\t" + "\t".join(f"{v:.6f}" for v in row))
        return "\n".join(lines) + "\n"


def alignment_matrix(
    embeddings: Mapping[str, Sequence[float]],
    pairs: Sequence[tuple[str, str]],
) -> AlignmentReport:
    """Cross-pair cosine similarities for heatmap plotting.

    Missing tokens and zero vectors are errors naming the token.
    """
    if not pairs:
        raise ConfigurationError("at least one token pair is required")
    tokens = {t for pair in pairs for t in pair}
    vectors: dict[str, np.ndarray] = {}
    dim = None
    for tok in sorted(tokens):
        if tok not in embeddings:
            raise DataError(f"token {tok!r} has no embedding vector")
        vec = np.asarray(embeddings[tok], dtype=float)
        if dim is None:
            dim = vec.shape
        elif vec.shape != dim:
            raise DataError(f"token {tok!r} has a vector of mismatched dimension")
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise DataError(f"token {tok!r} has a zero vector")
        vectors[tok] = vec / norm
    a = np.stack([vectors[p[0]] for p in pairs])
    b = np.stack([vectors[p[1]] for p in pairs])
    matrix = np.clip(a @ b.T, -1.0, 1.0)
    return AlignmentReport(pairs=tuple(pairs), cosine_matrix=matrix)
