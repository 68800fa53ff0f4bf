"""Run configuration and the named ablation variants."""

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

STYLE_MODES = ("none", "random", "real", "generated")


@dataclass
class TrainConfig:
    """Everything a training run needs; serializes to JSON."""

    # data
    data_root: str = "data"
    train_split: str = "train"
    unlabeled_split: str = "unlabeled"
    # model
    num_classes: int = 8
    widths: tuple = (32, 64, 128, 256)
    # optimization
    steps: int = 8000
    batch_size: int = 8
    lr: float = 6e-5
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.01
    poly_power: float = 1.0
    # style expansion
    style_mode: str = "generated"
    substitution_stages: tuple = (0, 1)
    ema_alpha: float = 0.7
    buffer_capacity: int = 256
    quantile_table_size: int = 0
    pooled_style_stats: bool = False
    # texture regularization
    texture_reg: bool = False
    texture_encoder_path: str = ""
    stage_weights: tuple = (0.0125, 0.00625, 0.0025, 0.00125)
    natural_class_ids: tuple = (2, 3, 4, 5)
    # bookkeeping
    seed: int = 0
    out_dir: str = "runs/default"
    checkpoint_every: int = 1000
    log_every: int = 100

    def __post_init__(self):
        if self.style_mode not in STYLE_MODES:
            raise ValueError(f"style_mode must be one of {STYLE_MODES}")
        if self.texture_reg and not self.texture_encoder_path:
            raise ValueError("texture_reg requires texture_encoder_path")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        self.widths = tuple(self.widths)
        self.betas = tuple(self.betas)
        self.substitution_stages = tuple(self.substitution_stages)
        self.stage_weights = tuple(self.stage_weights)
        self.natural_class_ids = tuple(self.natural_class_ids)

    @property
    def uses_style_paths(self) -> bool:
        return self.style_mode != "none"

    @property
    def uses_style_model(self) -> bool:
        return self.style_mode in ("real", "generated")

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# study variants: how styles are supplied, and whether texture anchoring is on
ABLATION_VARIANTS = {
    "baseline": {"style_mode": "none", "texture_reg": False},
    "texture_only": {"style_mode": "none", "texture_reg": True},
    "random_style": {"style_mode": "random", "texture_reg": False},
    "real_style": {"style_mode": "real", "texture_reg": False},
    "generated_style": {"style_mode": "generated", "texture_reg": False},
    "full": {"style_mode": "generated", "texture_reg": True},
}


def variant_config(base: TrainConfig, name: str) -> TrainConfig:
    if name not in ABLATION_VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(ABLATION_VARIANTS)}")
    return replace(base, **ABLATION_VARIANTS[name])
