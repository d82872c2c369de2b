from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

OPTIMIZERS = ("sgd", "nag")
CRITERIA = ("default", "smoothed")


@dataclass(frozen=True)
class HyperParams:
    """One network/optimizer configuration."""

    src_embed_dim: int = 64
    trg_embed_dim: int = 64
    out_embed_dim: int = 64
    encoder_layers: tuple[tuple[int, int], ...] = ((64, 3),)
    decoder_layers: tuple[tuple[int, int], ...] = ((64, 3),)
    dropout: float = 0.0
    clip_norm: float = 0.5
    optimizer: str = "nag"
    criterion: str = "default"
    learning_rate: float = 0.25
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "encoder_layers", tuple(tuple(map(int, l)) for l in self.encoder_layers))
        object.__setattr__(self, "decoder_layers", tuple(tuple(map(int, l)) for l in self.decoder_layers))
        self.validate()

    def validate(self) -> None:
        for name in ("src_embed_dim", "trg_embed_dim", "out_embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.encoder_layers or not self.decoder_layers:
            raise ValueError("encoder and decoder need at least one layer")
        for channels, width in self.encoder_layers + self.decoder_layers:
            if channels < 1 or width < 1:
                raise ValueError("layer channels and kernel widths must be positive")
        for _, width in self.encoder_layers:
            if width % 2 == 0:
                raise ValueError(f"encoder kernel widths must be odd, got {width}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 < self.clip_norm <= 1.0:
            raise ValueError("clip_norm must lie in (0, 1]")
        if not 0.0 <= self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in [0, 1]")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_layers"] = [list(l) for l in self.encoder_layers]
        d["decoder_layers"] = [list(l) for l in self.decoder_layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def replace(self, **changes) -> "HyperParams":
        d = self.to_dict()
        d.update(changes)
        return HyperParams.from_dict(d)
