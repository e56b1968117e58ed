"""Run configuration with protocol defaults, JSON round-trip, manifests."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .adversarial import AdversarialConfig
from .attention import AttentionConfig

__all__ = ["RunConfig", "file_digest"]


@dataclass
class RunConfig:
    """Every tunable in one place; defaults follow the training protocol."""

    # data
    data_paths: list[str] = dataclasses.field(default_factory=list)
    csv_sample_rate: float | None = None
    working_rate: float = 64.0
    # windowing / labeling
    window_seconds: float = 5.0
    overlap: float = 0.5
    preictal_horizon_s: float = 3600.0
    interictal_margin_s: float = 14400.0
    exclusion_s: float | None = None  # defaults to the interictal margin
    folds: int = 5
    # model
    blocks: int = 3
    heads: int = 4
    spatial_dim: int = 50
    temporal_dim: int = 100
    kernel_size: int = 2
    spatial_only: bool = False
    temporal_only: bool = False
    # adversarial training
    gp_weight: float = 10.0
    disc_lr: float = 1e-4
    gen_lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    critic_ratio: int = 1
    adv_weight: float = 1.0
    pool: int = 16
    hidden_dim: int = 150
    max_windows_per_class: int | None = None
    # inference / metrics
    tau: float = 0.5
    ma_horizon_s: float = 300.0
    refractory_s: float = 1800.0
    success_window_lo_s: float = 300.0
    success_window_hi_s: float = 3000.0
    # run
    seed: int = 0
    out_dir: str = "runs"

    @property
    def exclusion_margin_s(self) -> float:
        return self.interictal_margin_s if self.exclusion_s is None else self.exclusion_s

    @property
    def success_window(self) -> tuple[float, float]:
        return (self.success_window_lo_s, self.success_window_hi_s)

    def model_config(self) -> AttentionConfig:
        return AttentionConfig(
            blocks=self.blocks,
            heads=self.heads,
            spatial_dim=self.spatial_dim,
            temporal_dim=self.temporal_dim,
            kernel_size=self.kernel_size,
            spatial_only=self.spatial_only,
            temporal_only=self.temporal_only,
        )

    def adversarial_config(self) -> AdversarialConfig:
        return AdversarialConfig(
            gp_weight=self.gp_weight,
            disc_lr=self.disc_lr,
            gen_lr=self.gen_lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            critic_ratio=self.critic_ratio,
            adv_weight=self.adv_weight,
            pool=self.pool,
            hidden_dim=self.hidden_dim,
            max_windows_per_class=self.max_windows_per_class,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def write_manifest(self, out_dir, inputs: dict[str, str] | None = None, extra: dict | None = None) -> Path:
        """Persist everything needed to reproduce the run bit-for-bit."""
        manifest = {
            "config": self.to_dict(),
            "config_sha256": self.config_hash(),
            "seed": self.seed,
            "input_sha256": inputs or {},
        }
        if extra:
            manifest.update(extra)
        path = Path(out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
