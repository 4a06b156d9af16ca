"""Parameter container tying the encoder and allocator together.

Canonical parameter names (the checkpoint keys)::

    encoder.item_embedding            n_items x d
    encoder.position_embedding        max_len x d
    encoder.user_embedding            n_users x d
    encoder.block{k}.w_q|w_k|w_v      d x d
    encoder.block{k}.ln_attn_gain|ln_attn_bias          d
    encoder.block{k}.ffn_w1|ffn_w2    d x d
    encoder.block{k}.ffn_b1|ffn_b2    d
    encoder.block{k}.ln_ffn_gain|ln_ffn_bias            d
    allocator.state.w_0               2d x d
    allocator.state.w_s|w_p           d x d
    allocator.policy.w_1 / b_1        2d x d / d
    allocator.policy.w_2 / b_2        d x ceil(d/2) / ceil(d/2)
    allocator.policy.w_3 / b_3        ceil(d/2) x 1 / 1
    allocator.gru.w_z|u_z|w_r|u_r     d x 1         (attention-gru)
    allocator.gru.w|u                 d x d         (attention-gru)
    allocator.lstm.{w,u}_{i,f,o,g}    d x d         (lstm)
    allocator.lstm.b_{i,f,o,g}        d             (lstm)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .allocator import Allocator, AllocatorConfig
from .autodiff import Tensor, checkpoint
from .encoder import Encoder, EncoderConfig

CHECKPOINT_SCHEMA = "adasplit/1"


@dataclass
class ModelConfig:
    n_users: int
    n_items: int
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    allocator: AllocatorConfig = field(default_factory=AllocatorConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            n_users=int(d["n_users"]),
            n_items=int(d["n_items"]),
            encoder=EncoderConfig(**d["encoder"]),
            allocator=AllocatorConfig(**d["allocator"]),
        )


class AdaSplit:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(config.n_users, config.n_items, config.encoder, rng)
        self.allocator = Allocator(config.encoder.dim, config.allocator, rng)

    @property
    def dim(self) -> int:
        return self.config.encoder.dim

    @property
    def max_len(self) -> int:
        return self.config.encoder.max_len

    @property
    def item_embedding(self) -> Tensor:
        return self.encoder.item_embedding

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.encoder.parameters())
        out.update(self.allocator.parameters())
        return dict(sorted(out.items()))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        checkpoint.load_into(self.parameters(), arrays)

    def save(self, path: str | Path, extra_meta: dict | None = None) -> None:
        meta = {"schema": CHECKPOINT_SCHEMA, "model": self.config.to_dict()}
        meta.update(extra_meta or {})
        checkpoint.save(path, self.parameters(), meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["AdaSplit", dict]:
        arrays, meta = checkpoint.load(path)
        if meta.get("schema") != CHECKPOINT_SCHEMA:
            raise checkpoint.CheckpointError(f"unexpected checkpoint schema {meta.get('schema')!r}")
        model = cls(ModelConfig.from_dict(meta["model"]))
        model.restore(arrays)
        return model, meta
