"""Assembly of validated records into train-ready prefix/suffix datasets.

Besides the split files and their manifest, this module owns the attention
geometry downstream trainers consume: image plus instruction tokens form one
bidirectional block, target tokens extend it causally. Token counts are
caller-supplied; this toolkit never tokenizes text.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import ChartRecord
from .instructions import InstructionRecord
from .jsonl import write_jsonl
from .qualitycheck import ValidationReport, Verdict

# Instruction-tuning defaults echoed into every manifest for the trainer.
TRAINING_CONFIG_DEFAULTS = {"epochs": 5, "learning_rate": 5e-5, "batch_size": 32}

FILTER_POLICIES = ("valid-only", "all")


class EmptyInput(Exception):
    """Packaging was handed no records (or filtering removed them all)."""


class NonDivisible(Exception):
    """Image side is not a whole number of patches."""


class MissingChart(Exception):
    """A record references a chart_id absent from the corpus manifest."""


def num_visual_tokens(image_side_px: int, patch_px: int) -> int:
    """Number of image tokens for a square image cut into square patches."""
    if image_side_px <= 0 or patch_px <= 0:
        raise ValueError("image side and patch size must be positive")
    if image_side_px % patch_px != 0:
        raise NonDivisible(f"{patch_px} does not divide {image_side_px}")
    return (image_side_px // patch_px) ** 2


@dataclass(frozen=True)
class MaskSpec:
    """Token counts from which the attention mask is derived."""

    n_visual: int
    n_prefix: int
    n_suffix: int

    def __post_init__(self) -> None:
        if min(self.n_visual, self.n_prefix, self.n_suffix) < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def side(self) -> int:
        return self.n_visual + self.n_prefix + self.n_suffix


def build_attention_mask(spec: MaskSpec) -> np.ndarray:
    """Dense boolean attention mask for a prefix-LM layout.

    Visual and prefix tokens (the first B positions) attend to each other
    fully; each suffix token attends to the whole bidirectional block and
    causally to suffix tokens up to itself:

        allow(i, j) = (i < B and j < B) or (i >= B and j <= i)
    """
    side = spec.side
    bidir = spec.n_visual + spec.n_prefix
    mask = np.zeros((side, side), dtype=bool)
    if bidir:
        mask[:bidir, :bidir] = True
    for i in range(bidir, side):
        mask[i, : i + 1] = True
    return mask


@dataclass(frozen=True)
class TrainExample:
    """One training pair: instruction text as prefix, target text as suffix."""

    chart_id: str
    image_path: str
    prefix_text: str
    suffix_text: str

    def to_json(self) -> dict:
        return {
            "chart_id": self.chart_id,
            "image_path": self.image_path,
            "prefix_text": self.prefix_text,
            "suffix_text": self.suffix_text,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "TrainExample":
        return cls(
            chart_id=obj["chart_id"],
            image_path=obj["image_path"],
            prefix_text=obj["prefix_text"],
            suffix_text=obj["suffix_text"],
        )


@dataclass(frozen=True)
class PackagingConfig:
    train_ratio: float = 0.8
    val_ratio: float = 0.2
    seed: int = 0
    filter_policy: str = "valid-only"
    training_config_echo: dict = field(default_factory=lambda: dict(TRAINING_CONFIG_DEFAULTS))

    def __post_init__(self) -> None:
        if abs(self.train_ratio + self.val_ratio - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")
        if self.filter_policy not in FILTER_POLICIES:
            raise ValueError(f"filter_policy must be one of {FILTER_POLICIES}")


@dataclass(frozen=True)
class DatasetManifest:
    per_task_counts: dict[str, int]
    per_source_counts: dict[str, int]
    split_ratios: dict[str, float]
    seed: int
    filter_policy: str
    training_config_echo: dict
    n_train: int
    n_val: int
    n_filtered_out: int

    @property
    def total(self) -> int:
        return self.n_train + self.n_val

    def to_json(self) -> dict:
        return {
            "per_task_counts": dict(sorted(self.per_task_counts.items())),
            "per_source_counts": dict(sorted(self.per_source_counts.items())),
            "split_ratios": self.split_ratios,
            "seed": self.seed,
            "filter_policy": self.filter_policy,
            "training_config_echo": self.training_config_echo,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_filtered_out": self.n_filtered_out,
            "total": self.total,
        }


@dataclass(frozen=True)
class PackagedDataset:
    train: list[TrainExample]
    val: list[TrainExample]
    manifest: DatasetManifest


def package(
    records: Sequence[InstructionRecord],
    charts: Mapping[str, ChartRecord],
    cfg: PackagingConfig | None = None,
    reports: Mapping[str, ValidationReport] | None = None,
) -> PackagedDataset:
    """Filter, split, and count records into a train-ready dataset.

    The split is a seeded shuffle over record ids, so a fixed (records, seed)
    pair always produces the same partition. Under the default valid-only
    policy, records whose validation verdict is Invalid are dropped;
    unvalidated records pass through.
    """
    cfg = cfg or PackagingConfig()
    if not records:
        raise EmptyInput("no records to package")
    kept: list[InstructionRecord] = []
    filtered_out = 0
    for rec in records:
        if cfg.filter_policy == "valid-only" and reports is not None:
            report = reports.get(rec.record_id)
            if report is not None and report.verdict is Verdict.INVALID:
                filtered_out += 1
                continue
        kept.append(rec)
    if not kept:
        raise EmptyInput(f"all {len(records)} records were filtered out")

    by_id = {rec.record_id: rec for rec in kept}
    ids = sorted(by_id)
    rng = random.Random(cfg.seed)
    rng.shuffle(ids)
    n_train = min(len(ids), round(cfg.train_ratio * len(ids)))
    train_ids, val_ids = ids[:n_train], ids[n_train:]

    def example(record_id: str) -> TrainExample:
        rec = by_id[record_id]
        chart = charts.get(rec.chart_id)
        if chart is None:
            raise MissingChart(f"record {rec.record_id} references unknown chart {rec.chart_id}")
        return TrainExample(
            chart_id=rec.chart_id,
            image_path=chart.image_path,
            prefix_text=rec.input_text,
            suffix_text=rec.output_text,
        )

    train = [example(i) for i in sorted(train_ids)]
    val = [example(i) for i in sorted(val_ids)]

    per_task: dict[str, int] = {}
    per_source: dict[str, int] = {}
    for rec in kept:
        per_task[rec.task_kind.value] = per_task.get(rec.task_kind.value, 0) + 1
        chart = charts.get(rec.chart_id)
        source = chart.source if chart else "unknown"
        per_source[source] = per_source.get(source, 0) + 1

    manifest = DatasetManifest(
        per_task_counts=per_task,
        per_source_counts=per_source,
        split_ratios={"train": cfg.train_ratio, "val": cfg.val_ratio},
        seed=cfg.seed,
        filter_policy=cfg.filter_policy,
        training_config_echo=dict(cfg.training_config_echo),
        n_train=len(train),
        n_val=len(val),
        n_filtered_out=filtered_out,
    )
    return PackagedDataset(train=train, val=val, manifest=manifest)


def write_dataset(pkg: PackagedDataset, out_dir: str | Path) -> dict[str, str]:
    """Write train.jsonl and val.jsonl; manifest serialization is the CLI's."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_path = out / "train.jsonl"
    val_path = out / "val.jsonl"
    write_jsonl(train_path, (ex.to_json() for ex in pkg.train))
    write_jsonl(val_path, (ex.to_json() for ex in pkg.val))
    return {"train": str(train_path), "val": str(val_path)}
