"""Self-attention item encoder feeding the allocator.

``bidirectional`` lets every position attend to the whole history,
``causal`` masks keys to the right of the query, and ``zero`` skips the
attention stack and returns the summed item + position embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ones_param, ops, uniform_param, zeros_param

ENCODER_MODES = ("bidirectional", "causal", "zero")


@dataclass
class EncoderConfig:
    dim: int = 32
    num_blocks: int = 1
    mode: str = "bidirectional"
    max_len: int = 10

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if self.mode not in ENCODER_MODES:
            raise ValueError(f"encoder mode must be one of {ENCODER_MODES}, got {self.mode!r}")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass
class EncodedSequence:
    vectors: Tensor  # l x d, one contextualised vector per history position
    user: Tensor  # 1 x d user embedding
    embedded: Tensor  # l x d item + position embeddings before attention

    def __len__(self) -> int:
        return self.vectors.shape[0]


class Encoder:
    def __init__(self, n_users: int, n_items: int, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.n_users = n_users
        self.n_items = n_items
        d = config.dim
        self.item_embedding = uniform_param(rng, (n_items, d), "encoder.item_embedding")
        self.position_embedding = uniform_param(rng, (config.max_len, d), "encoder.position_embedding")
        self.user_embedding = uniform_param(rng, (n_users, d), "encoder.user_embedding")
        self.blocks: list[dict[str, Tensor]] = []
        for k in range(config.num_blocks):
            pre = f"encoder.block{k}."
            self.blocks.append(
                {
                    "w_q": uniform_param(rng, (d, d), pre + "w_q"),
                    "w_k": uniform_param(rng, (d, d), pre + "w_k"),
                    "w_v": uniform_param(rng, (d, d), pre + "w_v"),
                    "ln_attn_gain": ones_param((d,), pre + "ln_attn_gain"),
                    "ln_attn_bias": zeros_param((d,), pre + "ln_attn_bias"),
                    "ffn_w1": uniform_param(rng, (d, d), pre + "ffn_w1"),
                    "ffn_b1": zeros_param((d,), pre + "ffn_b1"),
                    "ffn_w2": uniform_param(rng, (d, d), pre + "ffn_w2"),
                    "ffn_b2": zeros_param((d,), pre + "ffn_b2"),
                    "ln_ffn_gain": ones_param((d,), pre + "ln_ffn_gain"),
                    "ln_ffn_bias": zeros_param((d,), pre + "ln_ffn_bias"),
                }
            )
        self._masks: dict[int, np.ndarray] = {}

    def parameters(self) -> dict[str, Tensor]:
        out = {
            t.name: t for t in (self.item_embedding, self.position_embedding, self.user_embedding)
        }
        for block in self.blocks:
            out.update({t.name: t for t in block.values()})
        return out

    def embed_sequence(self, items, user: int) -> tuple[Tensor, Tensor]:
        items = np.asarray(items, dtype=np.int64)
        length = len(items)
        if length == 0:
            raise ValueError("cannot embed an empty sequence")
        if length > self.config.max_len:
            raise ValueError(f"sequence length {length} exceeds max_len {self.config.max_len}")
        if items.min() < 0 or items.max() >= self.n_items:
            raise IndexError(f"item id out of range [0, {self.n_items})")
        if not 0 <= user < self.n_users:
            raise IndexError(f"user id {user} out of range [0, {self.n_users})")
        E = ops.add(ops.gather(self.item_embedding, items), ops.gather(self.position_embedding, np.arange(length)))
        e_u = ops.gather(self.user_embedding, [user])
        return E, e_u

    def _mask(self, length: int) -> np.ndarray | None:
        if self.config.mode != "causal":
            return None
        if length not in self._masks:
            self._masks[length] = np.tril(np.ones((length, length), dtype=bool))
        return self._masks[length]

    def attention_weights(self, E: Tensor, block: int = 0) -> Tensor:
        b = self.blocks[block]
        q = ops.matmul(E, b["w_q"])
        k = ops.matmul(E, b["w_k"])
        logits = ops.scale(ops.matmul(q, k, transpose_b=True), 1.0 / math.sqrt(self.config.dim))
        return ops.softmax(logits, axis=-1, mask=self._mask(E.shape[0]))

    def attention_block(self, E: Tensor, block: int = 0) -> Tensor:
        b = self.blocks[block]
        S = ops.matmul(self.attention_weights(E, block), ops.matmul(E, b["w_v"]))
        return ops.layer_norm(S, b["ln_attn_gain"], b["ln_attn_bias"])

    def feed_forward(self, S: Tensor, block: int = 0) -> Tensor:
        b = self.blocks[block]
        hidden = ops.relu(ops.add(ops.matmul(S, b["ffn_w1"]), b["ffn_b1"]))
        out = ops.add(ops.matmul(hidden, b["ffn_w2"]), b["ffn_b2"])
        return ops.layer_norm(ops.add(out, S), b["ln_ffn_gain"], b["ln_ffn_bias"])

    def encode(self, items, user: int) -> EncodedSequence:
        E, e_u = self.embed_sequence(items, user)
        if self.config.mode == "zero":
            return EncodedSequence(E, e_u, E)
        x = E
        for k in range(self.config.num_blocks):
            x = self.feed_forward(self.attention_block(x, k), k)
        return EncodedSequence(x, e_u, E)
