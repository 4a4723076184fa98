from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

from ..preprocess import TargetLayout


class Architecture(str, enum.Enum):
    LSTM = "lstm"
    AE = "ae"
    AEGAN = "ae-gan"
    TRANSFORMER = "transformer"
    GPT = "gpt"
    BERT = "bert"
    WAVENET = "wavenet"

    @classmethod
    def parse(cls, name: str) -> "Architecture":
        key = name.strip().lower().replace("_", "-")
        aliases = {"aegan": "ae-gan"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown architecture {name!r}; choose from {[a.value for a in cls]}") from None


LAYOUTS = {
    Architecture.LSTM: TargetLayout.NEXT_EVENT,
    Architecture.AE: TargetLayout.PREFIX_TO_SHIFTED_SUFFIX,
    Architecture.AEGAN: TargetLayout.PREFIX_TO_SHIFTED_SUFFIX,
    Architecture.TRANSFORMER: TargetLayout.PREFIX_TO_SHIFTED_SUFFIX,
    Architecture.BERT: TargetLayout.MASKED_RECONSTRUCTION,
    Architecture.GPT: TargetLayout.FULL_SHIFTED,
    Architecture.WAVENET: TargetLayout.FULL_SHIFTED,
}


@dataclass(frozen=True)
class ModelConfig:
    architecture: Architecture
    vocab_size: int
    max_len: int
    layers: int = 4
    d_z: int = 128
    heads: int = 4
    filter_size: int = 2
    dropout: float = 0.3
    ffn_mult: int = 4

    def __post_init__(self):
        if not isinstance(self.architecture, Architecture):
            object.__setattr__(self, "architecture", Architecture.parse(self.architecture))
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.d_z % self.heads:
            raise ValueError(f"d_z={self.d_z} is not divisible by heads={self.heads}")

    @property
    def d_k(self) -> int:
        return self.d_z // self.heads

    @property
    def layout(self) -> TargetLayout:
        return LAYOUTS[self.architecture]

    @property
    def receptive_field(self) -> int:
        return 2 ** (self.layers - 1) * self.filter_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["architecture"] = self.architecture.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class AdversarialConfig:
    tau_start: float = 1.0
    tau_end: float = 0.1
    anneal_fraction: float = 0.5
    open_loop_p: float = 0.9
    adv_weight: float = 0.1

    def __post_init__(self):
        if self.tau_start <= 0 or self.tau_end <= 0:
            raise ValueError("temperatures must be > 0")

    def tau(self, step: int, total_steps: int) -> float:
        """Linear anneal over the first ``anneal_fraction`` of steps, then held."""
        horizon = max(1, int(total_steps * self.anneal_fraction))
        frac = min(1.0, step / horizon)
        return self.tau_start + frac * (self.tau_end - self.tau_start)
