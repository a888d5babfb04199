"""Ground-truth data model, the bracketed annotation grammar, and region splitting.

An annotation line carries eleven bracketed fields joined by ``" - "``::

    [Cecum] - [Focal hypermetabolism] - [Unclear] - [12.3] - ... - [3] - [note]

Fields, in order: anatomic region, lesion type, size, SUVmax, density,
morphology, FDG uptake, top-3 diseases, top-3 examinations, physical region
id (1 head-neck, 2 chest, 3 abdomen-pelvis), clinical note.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, NamedTuple, Optional, Sequence

from .errors import AnnotationError, ConfigError, SchemaError

N_FIELDS = 11
SEPARATOR = " - "
LIST_SEPARATOR = ", "

HEAD_NECK, CHEST, ABDOMEN_PELVIS = 1, 2, 3
REGION_NAMES = {HEAD_NECK: "head-neck", CHEST: "chest", ABDOMEN_PELVIS: "abdomen-pelvis"}

ANNOTATION_FIELDS = (
    "anatomic_region",
    "lesion_type",
    "size",
    "suv_max",
    "density",
    "morphology",
    "fdg_uptake",
    "top3_diseases",
    "top3_examinations",
    "physical_region",
    "note",
)

_OPEN = "(["
_CLOSE = ")]"


def normalize_ws(text: str) -> str:
    """Collapse runs of whitespace to single spaces and trim."""
    return " ".join(text.split())


def _parse_suv(raw: str) -> Optional[float]:
    try:
        value = float(raw)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


@dataclass(frozen=True)
class BoundingBox3D:
    """Axis-aligned box in voxel index space; every min strictly below its max."""

    x_min: float
    y_min: float
    z_min: float
    x_max: float
    y_max: float
    z_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "z_min", "x_max", "y_max", "z_max"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SchemaError(f"bbox {name} must be a number, got {value!r}")
            if not math.isfinite(value) or value < 0:
                raise SchemaError(f"bbox {name} must be a finite non-negative number")
        for axis in "xyz":
            if not getattr(self, f"{axis}_min") < getattr(self, f"{axis}_max"):
                raise SchemaError(f"degenerate bbox: {axis}_min must be < {axis}_max")

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "BoundingBox3D":
        if len(values) != 6:
            raise SchemaError(f"bbox needs 6 numbers, got {len(values)}")
        return cls(*values)

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.x_min, self.y_min, self.z_min, self.x_max, self.y_max, self.z_max)

    @property
    def extents(self) -> tuple[float, float, float]:
        return (self.x_max - self.x_min, self.y_max - self.y_min, self.z_max - self.z_min)

    @property
    def centroid(self) -> tuple[float, float, float]:
        return (
            (self.x_min + self.x_max) / 2,
            (self.y_min + self.y_max) / 2,
            (self.z_min + self.z_max) / 2,
        )


@dataclass(frozen=True)
class GroundTruthRoI:
    """One annotated RoI.

    ``suv_max_raw`` keeps the annotator's text; ``suv_max`` is its numeric
    value, or None when the text is not a plain number (e.g. a range).
    Text fields are stored whitespace-normalized.
    """

    anatomic_region: str
    lesion_type: str
    size: str
    suv_max_raw: str
    density: str
    morphology: str
    fdg_uptake: str
    top3_diseases: tuple[str, ...] = ()
    top3_examinations: tuple[str, ...] = ()
    physical_region: int = ABDOMEN_PELVIS
    note: Optional[str] = None
    bbox: Optional[BoundingBox3D] = None
    suv_max: Optional[float] = field(init=False, compare=True)

    def __post_init__(self):
        setf = object.__setattr__
        for name in ("anatomic_region", "lesion_type", "size", "suv_max_raw",
                     "density", "morphology", "fdg_uptake"):
            value = getattr(self, name)
            if not isinstance(value, str):
                raise SchemaError(f"{name} must be text, got {type(value).__name__}")
            setf(self, name, normalize_ws(value))
        for name in ("top3_diseases", "top3_examinations"):
            value = getattr(self, name)
            if isinstance(value, str) or not all(isinstance(v, str) for v in value):
                raise SchemaError(f"{name} must be a list of texts")
            items = tuple(t for t in (normalize_ws(v) for v in value) if t)
            if len(items) > 3:
                raise SchemaError(f"{name} holds at most 3 items, got {len(items)}")
            setf(self, name, items)
        if isinstance(self.physical_region, bool) or self.physical_region not in REGION_NAMES:
            raise SchemaError(f"physical_region must be 1, 2 or 3, got {self.physical_region!r}")
        if self.note is not None:
            if not isinstance(self.note, str):
                raise SchemaError("note must be text")
            setf(self, "note", normalize_ws(self.note) or None)
        setf(self, "suv_max", _parse_suv(self.suv_max_raw))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "anatomic_region": self.anatomic_region,
            "lesion_type": self.lesion_type,
            "size": self.size,
            "suv_max": self.suv_max,
            "suv_max_raw": self.suv_max_raw,
            "density": self.density,
            "morphology": self.morphology,
            "fdg_uptake": self.fdg_uptake,
            "top3_diseases": list(self.top3_diseases),
            "top3_examinations": list(self.top3_examinations),
            "physical_region": self.physical_region,
            "note": self.note,
        }
        if self.bbox is not None:
            out["bbox"] = list(self.bbox.as_tuple())
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GroundTruthRoI":
        if not isinstance(data, dict):
            raise SchemaError("RoI object must be a JSON object")
        known = set(ANNOTATION_FIELDS) | {"suv_max_raw", "bbox"}
        extra = set(data) - known
        if extra:
            raise SchemaError(f"unknown RoI keys: {sorted(extra)}")
        raw = data.get("suv_max_raw")
        if raw is None:
            suv = data.get("suv_max")
            raw = "" if suv is None else str(suv)
        bbox = data.get("bbox")
        try:
            return cls(
                anatomic_region=data.get("anatomic_region", ""),
                lesion_type=data.get("lesion_type", ""),
                size=data.get("size", ""),
                suv_max_raw=raw,
                density=data.get("density", ""),
                morphology=data.get("morphology", ""),
                fdg_uptake=data.get("fdg_uptake", ""),
                top3_diseases=tuple(data.get("top3_diseases", ())),
                top3_examinations=tuple(data.get("top3_examinations", ())),
                physical_region=data.get("physical_region", 0),
                note=data.get("note"),
                bbox=None if bbox is None else BoundingBox3D.from_sequence(bbox),
            )
        except TypeError as exc:
            raise SchemaError(f"malformed RoI object: {exc}") from None


def _byte_offset(line: str, index: int) -> int:
    return len(line[:index].encode("utf-8"))


def _split_fields(line: str) -> list[tuple[str, int]]:
    """Return (content, char index of '[') for each top-level bracketed field."""
    fields: list[tuple[str, int]] = []
    i, n = 0, len(line)
    while True:
        while i < n and line[i].isspace():
            i += 1
        if i >= n:
            break
        if fields:
            # separator: optional whitespace, a single '-', optional whitespace
            if line[i] != "-":
                raise AnnotationError(
                    f"expected ' - ' separator, found {line[i]!r}",
                    field_index=len(fields), offset=_byte_offset(line, i))
            i += 1
            while i < n and line[i].isspace():
                i += 1
        if i >= n or line[i] != "[":
            raise AnnotationError(
                "expected '[' opening a field",
                field_index=len(fields), offset=_byte_offset(line, min(i, n)))
        start = i
        depth = 0
        while i < n:
            ch = line[i]
            if ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
                if depth == 0:
                    break
            i += 1
        if depth != 0:
            raise AnnotationError(
                "unbalanced brackets", field_index=len(fields),
                offset=_byte_offset(line, start))
        fields.append((line[start + 1:i], start))
        i += 1
    return fields


def split_items(text: str) -> list[str]:
    """Split on commas that sit outside any (), [] nesting."""
    items, depth, current = [], 0, []
    for ch in text:
        if ch in _OPEN:
            depth += 1
        elif ch in _CLOSE and depth > 0:
            depth -= 1
        if ch == "," and depth == 0:
            items.append("".join(current))
            current = []
        else:
            current.append(ch)
    items.append("".join(current))
    return [t for t in (normalize_ws(s) for s in items) if t]


def parse_annotation(line: str) -> GroundTruthRoI:
    """Parse one bracketed annotation string into a GroundTruthRoI.

    Raises:
        AnnotationError: wrong field count, unbalanced brackets, stray text
            between fields, or a physical region outside {1, 2, 3}. The error
            carries the field index and the byte offset in the UTF-8 line.
    """
    if not isinstance(line, str):
        raise AnnotationError("annotation must be text")
    fields = _split_fields(line)
    if len(fields) != N_FIELDS:
        offset = _byte_offset(line, fields[-1][1]) if fields else 0
        raise AnnotationError(
            f"expected {N_FIELDS} fields, found {len(fields)}",
            field_index=min(len(fields), N_FIELDS) - 1 if fields else 0, offset=offset)
    texts = [normalize_ws(content) for content, _ in fields]
    region_text, region_pos = texts[9], fields[9][1]
    if region_text not in ("1", "2", "3"):
        raise AnnotationError(
            f"physical region must be 1, 2 or 3, got {region_text!r}",
            field_index=9, offset=_byte_offset(line, region_pos))
    diseases = split_items(texts[7])
    exams = split_items(texts[8])
    for idx, items in ((7, diseases), (8, exams)):
        if len(items) > 3:
            raise AnnotationError(
                f"at most 3 items allowed, found {len(items)}",
                field_index=idx, offset=_byte_offset(line, fields[idx][1]))
    return GroundTruthRoI(
        anatomic_region=texts[0],
        lesion_type=texts[1],
        size=texts[2],
        suv_max_raw=texts[3],
        density=texts[4],
        morphology=texts[5],
        fdg_uptake=texts[6],
        top3_diseases=tuple(diseases),
        top3_examinations=tuple(exams),
        physical_region=int(region_text),
        note=texts[10] or None,
    )


def serialize_annotation(roi: GroundTruthRoI) -> str:
    """Canonical bracketed form: fields in order, ``" - "`` between, lists comma-joined."""
    values = [
        roi.anatomic_region,
        roi.lesion_type,
        roi.size,
        roi.suv_max_raw,
        roi.density,
        roi.morphology,
        roi.fdg_uptake,
        LIST_SEPARATOR.join(roi.top3_diseases),
        LIST_SEPARATOR.join(roi.top3_examinations),
        str(roi.physical_region),
        roi.note or "",
    ]
    return SEPARATOR.join(f"[{v}]" for v in values)


# --- region splitting -------------------------------------------------------


class SliceRange(NamedTuple):
    """Half-open range of axial slice indices ``[start, stop)``."""

    start: int
    stop: int

    def __len__(self) -> int:  # type: ignore[override]
        return max(0, self.stop - self.start)

    def intersection(self, other: "SliceRange") -> "SliceRange":
        start = max(self.start, other.start)
        return SliceRange(start, max(start, min(self.stop, other.stop)))

    def to_list(self) -> list[int]:
        return [self.start, self.stop]


@dataclass(frozen=True)
class SplitConfig:
    overlap_slices: int = 15
    head_fraction: float = 0.25
    chest_end_fraction: float = 0.60

    def to_dict(self) -> dict[str, Any]:
        return {
            "overlap_slices": self.overlap_slices,
            "head_fraction": self.head_fraction,
            "chest_end_fraction": self.chest_end_fraction,
        }


@dataclass(frozen=True)
class RegionSplit:
    total_slices: int
    head_neck: SliceRange
    chest: SliceRange
    abdomen_pelvis: SliceRange
    config: SplitConfig = SplitConfig()

    @property
    def ranges(self) -> dict[int, SliceRange]:
        return {HEAD_NECK: self.head_neck, CHEST: self.chest, ABDOMEN_PELVIS: self.abdomen_pelvis}

    def to_dict(self) -> dict[str, Any]:
        return {
            "total_slices": self.total_slices,
            "head_neck": self.head_neck.to_list(),
            "chest": self.chest.to_list(),
            "abdomen_pelvis": self.abdomen_pelvis.to_list(),
            "config": self.config.to_dict(),
        }


def compute_region_ranges(total_slices: int, config: SplitConfig = SplitConfig()) -> RegionSplit:
    """Split a volume of ``total_slices`` axial slices into three overlapping regions.

    head-neck is ``[0, floor(head_fraction*T))``; each later region starts
    ``overlap_slices`` before the previous one ends; chest ends at
    ``floor(chest_end_fraction*T)`` and abdomen-pelvis runs to ``T``.
    """
    overlap = config.overlap_slices
    if isinstance(overlap, bool) or not isinstance(overlap, int) or overlap < 0:
        raise ConfigError(f"overlap_slices must be a non-negative integer, got {overlap!r}")
    if not 0 < config.head_fraction < config.chest_end_fraction < 1:
        raise ConfigError(
            "fractions not ordered: need 0 < head_fraction < chest_end_fraction < 1, got "
            f"{config.head_fraction} and {config.chest_end_fraction}")
    if isinstance(total_slices, bool) or not isinstance(total_slices, int):
        raise ConfigError(f"total_slices must be an integer, got {total_slices!r}")
    if total_slices < max(1, 4 * overlap):
        raise ConfigError(
            f"too few slices: {total_slices} < {max(1, 4 * overlap)} (4 x overlap)")
    head_end = math.floor(config.head_fraction * total_slices)
    chest_end = math.floor(config.chest_end_fraction * total_slices)
    head = SliceRange(0, head_end)
    chest = SliceRange(head_end - overlap, chest_end)
    abdomen = SliceRange(chest_end - overlap, total_slices)
    if chest.start < 0 or chest.start < head.start or abdomen.start < head.stop \
            or len(chest) < overlap or len(abdomen) < overlap:
        raise ConfigError(
            f"region boundaries collapse for T={total_slices} with {config.to_dict()}")
    return RegionSplit(total_slices, head, chest, abdomen, config)


def assign_roi_to_region(bbox: BoundingBox3D, split: RegionSplit) -> int:
    """Region id whose slice range holds the box's z-extent.

    The z-extent is treated as the closed interval ``[z_min, z_max]`` and a
    range ``[start, stop)`` contains it when ``start <= z_min`` and
    ``z_max <= stop``. Without full containment the region with the largest
    overlap wins; ties go to the lower region id.
    """
    z0, z1 = bbox.z_min, bbox.z_max
    if z1 <= 0 or z0 >= split.total_slices:
        raise ConfigError(
            f"bbox z-extent [{z0}, {z1}] lies outside the volume [0, {split.total_slices})")
    ranges = split.ranges
    for region_id in sorted(ranges):
        r = ranges[region_id]
        if r.start <= z0 and z1 <= r.stop:
            return region_id
    best_id, best = HEAD_NECK, -1.0
    for region_id in sorted(ranges):
        r = ranges[region_id]
        amount = max(0.0, min(z1, r.stop) - max(z0, r.start))
        if amount > best:
            best_id, best = region_id, amount
    return best_id


# --- corpus files -----------------------------------------------------------


@dataclass(frozen=True)
class ReportRecord:
    report_id: str
    physical_region: int
    report_text: str
    rois: tuple[GroundTruthRoI, ...] = ()

    def to_dict(self, as_strings: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "report_id": self.report_id,
            "physical_region": self.physical_region,
            "report_text": self.report_text,
        }
        if as_strings:
            out["rois"] = [serialize_annotation(r) for r in self.rois]
            if any(r.bbox is not None for r in self.rois):
                out["bboxes"] = [
                    None if r.bbox is None else list(r.bbox.as_tuple()) for r in self.rois]
        else:
            out["rois"] = [r.to_dict() for r in self.rois]
        return out


def _record_from_json(obj: Any, index: int) -> ReportRecord:
    if not isinstance(obj, dict):
        raise SchemaError(f"report #{index} must be a JSON object")
    rid = obj.get("report_id")
    if rid is None or isinstance(rid, (dict, list, bool)):
        raise SchemaError(f"report #{index} lacks a usable report_id")
    rid = str(rid)
    rois_json = obj.get("rois", [])
    if not isinstance(rois_json, list):
        raise SchemaError(f"report {rid}: rois must be a list")
    bboxes = obj.get("bboxes")
    if bboxes is not None and (not isinstance(bboxes, list) or len(bboxes) != len(rois_json)):
        raise SchemaError(f"report {rid}: bboxes must parallel rois")
    rois = []
    for k, item in enumerate(rois_json):
        try:
            roi = parse_annotation(item) if isinstance(item, str) else GroundTruthRoI.from_dict(item)
        except SchemaError as exc:
            raise SchemaError(f"report {rid}, RoI {k}: {exc}") from exc
        if bboxes is not None and bboxes[k] is not None:
            roi = _with_bbox(roi, BoundingBox3D.from_sequence(bboxes[k]))
        rois.append(roi)
    region = obj.get("physical_region")
    if region is None:
        region = rois[0].physical_region if rois else ABDOMEN_PELVIS
    if isinstance(region, bool) or region not in REGION_NAMES:
        raise SchemaError(f"report {rid}: physical_region must be 1, 2 or 3")
    text = obj.get("report_text", "")
    if not isinstance(text, str):
        raise SchemaError(f"report {rid}: report_text must be text")
    return ReportRecord(rid, region, text, tuple(rois))


def _with_bbox(roi: GroundTruthRoI, bbox: BoundingBox3D) -> GroundTruthRoI:
    data = roi.to_dict()
    data["bbox"] = list(bbox.as_tuple())
    return GroundTruthRoI.from_dict(data)


def parse_corpus(data: Any) -> list[ReportRecord]:
    """Build ReportRecords from the decoded JSON array of a corpus file."""
    if not isinstance(data, list):
        raise SchemaError("corpus file must hold a JSON array of reports")
    records = [_record_from_json(obj, i) for i, obj in enumerate(data)]
    seen: set[str] = set()
    for rec in records:
        if rec.report_id in seen:
            raise SchemaError(f"duplicate report_id {rec.report_id!r}")
        seen.add(rec.report_id)
    return records


def load_corpus(path: str | Path) -> list[ReportRecord]:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    return parse_corpus(data)


def dump_corpus(records: Iterable[ReportRecord], path: str | Path, as_strings: bool = True) -> None:
    payload = [r.to_dict(as_strings=as_strings) for r in records]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
