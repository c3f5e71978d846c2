"""Sequence encoder shared by all branches: a per-modality temporal-convolution
front-end followed by a stack of conformer blocks.

Every operation is padding-invariant: with a length mask supplied, the output on
valid frames is identical whether the sequence is processed alone or inside a
padded batch, and padded output rows are exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn


@dataclass
class EncoderConfig:
    d_model: int = 50
    ffn_hidden: int = 512
    # 50 is not divisible by the 8 heads used at 512 width, so the compact default
    # uses 5 heads; wide_config() restores 8.
    num_heads: int = 5
    dropout: float = 0.1
    conv_kernel: int = 7
    layers_acoustic: int = 3
    layers_visual: int = 3
    layers_shared: int = 2

    def __post_init__(self):
        if self.d_model < 1 or self.ffn_hidden < 1 or self.num_heads < 1:
            raise ValueError("d_model, ffn_hidden, and num_heads must be positive")
        if self.d_model % self.num_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel must be odd and positive, got {self.conv_kernel}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if min(self.layers_acoustic, self.layers_visual, self.layers_shared) < 1:
            raise ValueError("all layer counts must be positive")


def lengths_to_mask(lengths: Tensor, t_max: int) -> Tensor:
    """(B,) lengths -> (B, T) boolean mask, True on valid frames."""
    return torch.arange(t_max, device=lengths.device)[None, :] < lengths[:, None]


def zero_init_biases(module: nn.Module) -> None:
    """Zero every bias; weights keep torch's fan-in-scaled uniform default."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv1d)) and m.bias is not None:
            nn.init.zeros_(m.bias)


def sinusoidal_encoding(t_max: int, dim: int, dtype: torch.dtype, device=None) -> Tensor:
    """Absolute sinusoidal positions, (T, dim)."""
    position = torch.arange(t_max, dtype=dtype, device=device)[:, None]
    half = (dim + 1) // 2
    freq = torch.exp(
        torch.arange(half, dtype=dtype, device=device) * (-math.log(10000.0) * 2.0 / dim)
    )
    angles = position * freq[None, :]
    enc = torch.zeros(t_max, dim, dtype=dtype, device=device)
    enc[:, 0::2] = torch.sin(angles[:, : (dim + 1) // 2])
    enc[:, 1::2] = torch.cos(angles[:, : dim // 2])
    return enc


def add_positions(x: Tensor, mask: Tensor) -> Tensor:
    """Add sinusoidal positional encoding; padded rows stay zero."""
    enc = sinusoidal_encoding(x.shape[1], x.shape[2], x.dtype, x.device)
    return (x + enc[None]) * mask[:, :, None].to(x.dtype)


class FrontendProjection(nn.Module):
    """1-D temporal convolution projecting raw frame features to d_model.

    The kernel spans neighboring frames so each projected frame sees its context.
    Inputs are masked before and outputs after the convolution, which makes the
    valid-region output independent of batch padding.
    """

    def __init__(self, in_dim: int, d_model: int, kernel_size: int = 3):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError("frontend kernel must be odd for same-length output")
        self.in_dim = in_dim
        self.conv = nn.Conv1d(in_dim, d_model, kernel_size, padding=kernel_size // 2)
        zero_init_biases(self)

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        if x.shape[1] < 1:
            raise ValueError("cannot project an empty sequence")
        if x.shape[2] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {x.shape[2]}")
        m = mask[:, :, None].to(x.dtype)
        y = self.conv((x * m).transpose(1, 2)).transpose(1, 2)
        return y * m


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product self-attention with key masking.

    Masked key positions get exactly zero attention weight. Set
    ``record_weights`` to keep the last attention map for inspection.
    """

    def __init__(self, d_model: int, num_heads: int, dropout: float):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)
        self.record_weights = False
        self.last_weights: Tensor | None = None

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        b, t, d = x.shape

        def split(proj):
            return proj(x).view(b, t, self.num_heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q_proj), split(self.k_proj), split(self.v_proj)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        if self.record_weights:
            self.last_weights = weights.detach()
        out = self.dropout(weights) @ v
        out = out.transpose(1, 2).reshape(b, t, d)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, hidden: int, dropout: float):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, hidden),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, d_model),
            nn.Dropout(dropout),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class ConvolutionModule(nn.Module):
    """Pointwise conv -> GLU -> depthwise conv -> ReLU -> pointwise conv.

    Padded positions are re-zeroed before the depthwise convolution so padding
    never leaks into neighboring valid frames.
    """

    def __init__(self, d_model: int, kernel_size: int, dropout: float):
        super().__init__()
        self.pointwise_in = nn.Conv1d(d_model, 2 * d_model, 1)
        self.depthwise = nn.Conv1d(d_model, d_model, kernel_size, padding=kernel_size // 2, groups=d_model)
        self.pointwise_out = nn.Conv1d(d_model, d_model, 1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        m = mask[:, None, :].to(x.dtype)
        y = x.transpose(1, 2)
        y = torch.nn.functional.glu(self.pointwise_in(y), dim=1)
        y = self.depthwise(y * m)
        y = self.pointwise_out(torch.relu(y))
        return self.dropout(y.transpose(1, 2))


class ConformerBlock(nn.Module):
    """Half-step FFN, self-attention, convolution module, half-step FFN, final norm,
    each pre-normed with a residual addition; padded output rows are re-zeroed."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        d = config.d_model
        self.ffn1 = FeedForward(d, config.ffn_hidden, config.dropout)
        self.attn = MultiHeadSelfAttention(d, config.num_heads, config.dropout)
        self.conv = ConvolutionModule(d, config.conv_kernel, config.dropout)
        self.ffn2 = FeedForward(d, config.ffn_hidden, config.dropout)
        self.norm_ffn1 = nn.LayerNorm(d)
        self.norm_attn = nn.LayerNorm(d)
        self.norm_conv = nn.LayerNorm(d)
        self.norm_ffn2 = nn.LayerNorm(d)
        self.norm_out = nn.LayerNorm(d)
        self.attn_dropout = nn.Dropout(config.dropout)
        zero_init_biases(self)

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        x = x + 0.5 * self.ffn1(self.norm_ffn1(x))
        x = x + self.attn_dropout(self.attn(self.norm_attn(x), mask))
        x = x + self.conv(self.norm_conv(x), mask)
        x = x + 0.5 * self.ffn2(self.norm_ffn2(x))
        x = self.norm_out(x)
        if not torch.isfinite(x).all():
            raise FloatingPointError("non-finite activations in conformer block")
        return x * mask[:, :, None].to(x.dtype)


class ConformerEncoder(nn.Module):
    """A stack of conformer blocks; shape-preserving."""

    def __init__(self, config: EncoderConfig, num_layers: int):
        super().__init__()
        self.blocks = nn.ModuleList(ConformerBlock(config) for _ in range(num_layers))

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x, mask)
        return x
