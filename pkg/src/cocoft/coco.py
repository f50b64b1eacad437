"""Reading, checking and writing COCO-format instance annotation files."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Any, Iterable, Union

from cocoft.errors import IntegrityError, ParseError, SchemaError

logger = logging.getLogger(__name__)

Source = Union[bytes, str, IO[bytes], IO[str]]

SECTIONS = ("images", "annotations", "categories")
_IMAGE_KEYS = {"id", "file_name", "width", "height"}
_ANNOTATION_KEYS = {"id", "image_id", "category_id", "bbox", "area", "iscrowd", "segmentation"}
_CATEGORY_KEYS = {"id", "name", "supercategory"}
_MAX_EXACT_INT = 2**53


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    supercategory: str = ""


@dataclass(frozen=True)
class ImageRecord:
    id: int
    file_name: str
    width: int
    height: int


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in COCO ``[x, y, width, height]`` pixel convention."""

    x: float
    y: float
    w: float
    h: float

    @classmethod
    def from_list(cls, values) -> "BBox":
        x, y, w, h = (float(v) for v in values)
        return cls(x, y, w, h)

    def to_list(self) -> list:
        return [self.x, self.y, self.w, self.h]

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def is_degenerate(self) -> bool:
        return not (self.w > 0 and self.h > 0)


@dataclass(frozen=True)
class Annotation:
    id: int
    image_id: int
    category_id: int
    bbox: BBox
    area: float
    iscrowd: bool = False
    # carried opaquely; None means the key was absent
    segmentation: Any = field(default=None, hash=False)


@dataclass(frozen=True)
class Dataset:
    images: tuple = ()
    annotations: tuple = ()
    categories: tuple = ()
    # unknown top-level keys (info, licenses, ...) in file order
    extra: dict = field(default_factory=dict, hash=False)

    def category_by_id(self) -> dict:
        return {c.id: c for c in self.categories}

    def image_by_id(self) -> dict:
        return {im.id: im for im in self.images}


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "valid": self.ok,
            "error_count": len(self.errors),
            "warning_count": len(self.warnings),
            "errors": list(self.errors),
            "warnings": list(self.warnings),
        }


def _read_text(source: Source) -> str:
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, str):
        return source
    try:
        text = bytes(source).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"invalid UTF-8: {exc.reason}", offset=exc.start) from None
    return text


def _decode_json(text: str) -> Any:
    bom = 0
    if text.startswith("\ufeff"):
        text, bom = text[1:], 3
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = bom + len(text[: exc.pos].encode("utf-8"))
        raise ParseError(f"malformed JSON: {exc.msg}", offset=offset) from None
    except RecursionError:
        raise ParseError("malformed JSON: nesting too deep") from None


def _as_id(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{what} must be an integer, got {value!r}")
    if isinstance(value, float):
        if not (value.is_integer() and abs(value) <= _MAX_EXACT_INT):
            raise SchemaError(f"{what} must be an exactly representable integer, got {value!r}")
        value = int(value)
    if value < 1:
        raise SchemaError(f"{what} must be positive, got {value}")
    return value


def _as_real(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{what} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise SchemaError(f"{what} must be finite, got {value!r}")
    return value


def _as_str(value, what: str, allow_empty=False) -> str:
    if not isinstance(value, str) or (not allow_empty and not value):
        raise SchemaError(f"{what} must be a non-empty string, got {value!r}")
    return value


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise SchemaError(f"{where} is missing required key {key!r}")
    return record[key]


def _records(raw: dict, section: str) -> list:
    value = raw[section]
    if not isinstance(value, list):
        raise SchemaError(f"top-level key {section!r} must be a list")
    for i, rec in enumerate(value):
        if not isinstance(rec, dict):
            raise SchemaError(f"{section}[{i}] must be an object")
    return value


def _parse_image(rec: dict, i: int) -> ImageRecord:
    where = f"images[{i}]"
    width = _as_id(_require(rec, "width", where), f"{where}.width")
    height = _as_id(_require(rec, "height", where), f"{where}.height")
    return ImageRecord(
        id=_as_id(_require(rec, "id", where), f"{where}.id"),
        file_name=_as_str(_require(rec, "file_name", where), f"{where}.file_name"),
        width=width,
        height=height,
    )


def parse_bbox(value, what: str) -> BBox:
    if not isinstance(value, list) or len(value) != 4:
        raise SchemaError(f"{what} must be a list of 4 numbers, got {value!r}")
    return BBox(*(_as_real(v, what) for v in value))


def _parse_annotation(rec: dict, i: int) -> Annotation:
    where = f"annotations[{i}]"
    bbox = parse_bbox(_require(rec, "bbox", where), f"{where}.bbox")
    if min(bbox.to_list()) < 0:
        raise SchemaError(f"{where}.bbox must be non-negative, got {bbox.to_list()}")
    area = _as_real(rec["area"], f"{where}.area") if "area" in rec else bbox.area
    if area < 0:
        raise SchemaError(f"{where}.area must be non-negative")
    crowd = rec.get("iscrowd", 0)
    if crowd not in (0, 1) or isinstance(crowd, float):
        raise SchemaError(f"{where}.iscrowd must be 0 or 1, got {crowd!r}")
    return Annotation(
        id=_as_id(_require(rec, "id", where), f"{where}.id"),
        image_id=_as_id(_require(rec, "image_id", where), f"{where}.image_id"),
        category_id=_as_id(_require(rec, "category_id", where), f"{where}.category_id"),
        bbox=bbox,
        area=area,
        iscrowd=bool(crowd),
        segmentation=rec.get("segmentation"),
    )


def _parse_category(rec: dict, i: int) -> Category:
    where = f"categories[{i}]"
    return Category(
        id=_as_id(_require(rec, "id", where), f"{where}.id"),
        name=_as_str(_require(rec, "name", where), f"{where}.name"),
        supercategory=_as_str(rec.get("supercategory", ""), f"{where}.supercategory", allow_empty=True),
    )


def _duplicates(values: Iterable) -> list:
    return sorted(v for v, n in Counter(values).items() if n > 1)


def _load(source: Source):
    """Parse without raising on integrity problems.

    Returns ``(dataset, errors, warnings, offending_annotation_ids)``.
    """
    raw = _decode_json(_read_text(source))
    if not isinstance(raw, dict):
        raise SchemaError("top-level JSON value must be an object")
    for key in SECTIONS:
        if key not in raw:
            raise SchemaError(f"missing required top-level key {key!r}")

    warnings = []
    dropped = Counter()
    sections = {}
    for section, known, parse in (
        ("images", _IMAGE_KEYS, _parse_image),
        ("annotations", _ANNOTATION_KEYS, _parse_annotation),
        ("categories", _CATEGORY_KEYS, _parse_category),
    ):
        items = []
        for i, rec in enumerate(_records(raw, section)):
            items.append(parse(rec, i))
            for key in rec.keys() - known:
                dropped[section, key] += 1
        sections[section] = tuple(items)
    for (section, key), n in sorted(dropped.items()):
        warnings.append(f"dropped unknown key {key!r} from {n} {section} record(s)")

    d = Dataset(
        images=sections["images"],
        annotations=sections["annotations"],
        categories=sections["categories"],
        extra={k: v for k, v in raw.items() if k not in SECTIONS},
    )

    errors = []
    for section, attr in (("images", "id"), ("annotations", "id"), ("categories", "id"), ("categories", "name")):
        dups = _duplicates(getattr(r, attr) for r in getattr(d, section))
        if dups:
            errors.append(f"duplicate {section} {attr}(s): {', '.join(map(str, dups))}")
    image_ids = {im.id for im in d.images}
    cat_ids = {c.id for c in d.categories}
    bad_image = [a.id for a in d.annotations if a.image_id not in image_ids]
    bad_cat = [a.id for a in d.annotations if a.category_id not in cat_ids]
    if bad_image:
        errors.append(f"annotation(s) with unknown image_id: {', '.join(map(str, bad_image))}")
    if bad_cat:
        errors.append(f"annotation(s) with unknown category_id: {', '.join(map(str, bad_cat))}")
    for a in d.annotations:
        if a.bbox.is_degenerate:
            warnings.append(f"annotation {a.id} has a degenerate bbox {a.bbox.to_list()}")
    return d, errors, warnings, sorted(set(bad_image + bad_cat))


def parse_dataset(source: Source) -> Dataset:
    """Parse a COCO instances file.

    Raises ParseError for malformed JSON (with byte offset), SchemaError for
    missing keys or badly typed fields, and IntegrityError for duplicate ids
    or annotations pointing at images/categories that do not exist.
    Unknown per-record keys and degenerate boxes are logged as warnings.
    """
    d, errors, warnings, offending = _load(source)
    for w in warnings:
        logger.warning(w)
    if errors:
        raise IntegrityError("; ".join(errors), ids=offending)
    return d


def validate_dataset(source: Source) -> ValidationReport:
    report = ValidationReport()
    try:
        _, report.errors, report.warnings, _ = _load(source)
    except (ParseError, SchemaError) as exc:
        report.errors.append(str(exc))
    return report


def _num(v: float):
    if isinstance(v, float) and v.is_integer() and abs(v) <= _MAX_EXACT_INT:
        return int(v)
    return v


def dataset_to_dict(d: Dataset) -> dict:
    out = dict(d.extra)
    out["images"] = [
        {"id": im.id, "file_name": im.file_name, "width": im.width, "height": im.height} for im in d.images
    ]
    anns = []
    for a in d.annotations:
        rec = {
            "id": a.id,
            "image_id": a.image_id,
            "category_id": a.category_id,
            "bbox": [_num(v) for v in a.bbox.to_list()],
            "area": _num(a.area),
            "iscrowd": int(a.iscrowd),
        }
        if a.segmentation is not None:
            rec["segmentation"] = a.segmentation
        anns.append(rec)
    out["annotations"] = anns
    out["categories"] = [{"id": c.id, "name": c.name, "supercategory": c.supercategory} for c in d.categories]
    return out


def serialize_dataset(d: Dataset) -> bytes:
    """Compact UTF-8 JSON; side keys first in their original order, then images, annotations, categories."""
    return json.dumps(dataset_to_dict(d), ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def list_categories(d: Dataset) -> list:
    return sorted(d.categories, key=lambda c: c.id)
