"""Chart corpus ingestion into a deduplicated, categorized manifest.

Charts are identified by a content hash, so re-ingesting the same files (or
the same image arriving from two sources) collapses to a single record. The
source-to-category map ships as a data file; new sources are a data change,
not a code change.
"""

from __future__ import annotations

import concurrent.futures
import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .jsonl import dumps_line

_SOURCE_MAP_PATH = Path(__file__).resolve().parent / "data" / "source_categories.json"


class UnknownSource(Exception):
    """Source name absent from the source-to-category map."""


class ConflictingRecord(Exception):
    """Two records share a chart_id but carry different image bytes."""


class UnreadableImage(Exception):
    """File could not be decoded as an image; ingest skips and counts these."""


class Category(str, enum.Enum):
    SYNTHETIC = "Synthetic"
    SPECIALIZED_WEBSITE = "SpecializedWebsite"
    GENERAL_WEB = "GeneralWeb"


@dataclass(frozen=True)
class ChartRecord:
    """One chart image with its provenance.

    ``chart_id`` is the first 16 hex chars of the SHA-256 of the image bytes;
    the full digest is kept so merges can tell identical ids with different
    bytes apart.
    """

    chart_id: str
    image_path: str
    source: str
    category: Category
    width_px: int
    height_px: int
    content_sha256: str

    def to_json(self) -> dict:
        return {
            "chart_id": self.chart_id,
            "image_path": self.image_path,
            "source": self.source,
            "category": self.category.value,
            "width_px": self.width_px,
            "height_px": self.height_px,
            "content_sha256": self.content_sha256,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ChartRecord":
        return cls(
            chart_id=obj["chart_id"],
            image_path=obj["image_path"],
            source=obj["source"],
            category=Category(obj["category"]),
            width_px=obj["width_px"],
            height_px=obj["height_px"],
            content_sha256=obj["content_sha256"],
        )


@dataclass(frozen=True)
class CorpusManifest:
    """Immutable corpus snapshot; counts are derived from the record list."""

    records: tuple[ChartRecord, ...]
    per_source_counts: dict[str, int]
    total: int
    skipped: int = 0
    warnings: tuple[str, ...] = ()

    @classmethod
    def from_records(
        cls,
        records: Iterable[ChartRecord],
        skipped: int = 0,
        warnings: Iterable[str] = (),
    ) -> "CorpusManifest":
        ordered = tuple(sorted(records, key=lambda r: r.chart_id))
        counts: dict[str, int] = {}
        for rec in ordered:
            counts[rec.source] = counts.get(rec.source, 0) + 1
        return cls(
            records=ordered,
            per_source_counts=counts,
            total=len(ordered),
            skipped=skipped,
            warnings=tuple(warnings),
        )

    def by_chart_id(self) -> dict[str, ChartRecord]:
        return {rec.chart_id: rec for rec in self.records}


def load_source_map(path: str | Path | None = None) -> dict[str, Category]:
    with open(path or _SOURCE_MAP_PATH, "r", encoding="utf-8") as f:
        raw = json.load(f)
    return {source: Category(cat) for source, cat in raw.items()}


def _probe_image(path: Path) -> tuple[int, int]:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            return int(img.width), int(img.height)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc


def _hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def ingest_source(
    directory: str | Path,
    source: str,
    source_map: Mapping[str, Category] | None = None,
    jobs: int = 1,
) -> CorpusManifest:
    """Ingest every readable image under ``directory`` as charts of ``source``.

    Byte-identical files collapse to one record; unreadable files are skipped
    and counted in the manifest warnings rather than aborting the run, since
    scraped corpora routinely contain a few corrupt files.
    """
    source_map = source_map or load_source_map()
    if source not in source_map:
        raise UnknownSource(f"{source!r} not in source map {sorted(source_map)}")
    category = source_map[source]
    directory = Path(directory)
    paths = sorted(p for p in directory.rglob("*") if p.is_file())

    def probe(path: Path) -> tuple[Path, str, tuple[int, int]] | tuple[Path, None, str]:
        try:
            return path, _hash_file(path), _probe_image(path)
        except (UnreadableImage, OSError) as exc:
            return path, None, str(exc)

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            probed = list(pool.map(probe, paths))
    else:
        probed = [probe(p) for p in paths]

    warnings: list[str] = []
    skipped = 0
    by_id: dict[str, ChartRecord] = {}
    for path, digest, extra in probed:
        if digest is None:
            warnings.append(f"skipped unreadable file: {extra}")
            skipped += 1
            continue
        width, height = extra
        rec = ChartRecord(
            chart_id=digest[:16],
            image_path=str(path),
            source=source,
            category=category,
            width_px=width,
            height_px=height,
            content_sha256=digest,
        )
        existing = by_id.get(rec.chart_id)
        if existing is None:
            by_id[rec.chart_id] = rec
        elif existing.content_sha256 != rec.content_sha256:
            raise ConflictingRecord(
                f"chart_id {rec.chart_id} maps to different bytes "
                f"({existing.image_path} vs {rec.image_path})"
            )
        elif rec.image_path < existing.image_path:
            by_id[rec.chart_id] = rec  # canonical duplicate: smallest path
    if not by_id:
        warnings.append(f"no readable images found under {directory}")
    return CorpusManifest.from_records(by_id.values(), skipped=skipped, warnings=warnings)


def merge(manifests: Sequence[CorpusManifest]) -> CorpusManifest:
    """Union with global dedupe; same id with different bytes is a conflict.

    A chart seen from several sources keeps the record with the smallest
    (source, image_path), making the merge order-independent.
    """
    by_id: dict[str, ChartRecord] = {}
    for manifest in manifests:
        for rec in manifest.records:
            existing = by_id.get(rec.chart_id)
            if existing is None:
                by_id[rec.chart_id] = rec
            elif existing.content_sha256 != rec.content_sha256:
                raise ConflictingRecord(
                    f"chart_id {rec.chart_id} maps to different bytes "
                    f"({existing.image_path} vs {rec.image_path})"
                )
            elif (rec.source, rec.image_path) < (existing.source, existing.image_path):
                by_id[rec.chart_id] = rec
    skipped = sum(m.skipped for m in manifests)
    warnings = [w for m in manifests for w in m.warnings]
    return CorpusManifest.from_records(by_id.values(), skipped=skipped, warnings=warnings)


def write_manifest(manifest: CorpusManifest, path: str | Path, run_config: dict | None = None) -> None:
    """Persist as JSONL: one record per line plus a trailing summary object."""
    with open(path, "w", encoding="utf-8") as f:
        for rec in manifest.records:
            f.write(dumps_line(rec.to_json()))
            f.write("\n")
        summary = {
            "summary": {
                "per_source_counts": dict(sorted(manifest.per_source_counts.items())),
                "total": manifest.total,
                "skipped": manifest.skipped,
                "warnings": list(manifest.warnings),
            }
        }
        if run_config is not None:
            summary["summary"]["run_config"] = run_config
        f.write(dumps_line(summary))
        f.write("\n")


def read_manifest(path: str | Path) -> CorpusManifest:
    records: list[ChartRecord] = []
    summary: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "summary" in obj:
                summary = obj["summary"]
            else:
                records.append(ChartRecord.from_json(obj))
    manifest = CorpusManifest.from_records(
        records,
        skipped=summary.get("skipped", 0),
        warnings=summary.get("warnings", ()),
    )
    stored = summary.get("per_source_counts")
    if stored is not None and stored != manifest.per_source_counts:
        raise ConflictingRecord(
            f"stored per-source counts {stored} disagree with records {manifest.per_source_counts}"
        )
    return manifest
