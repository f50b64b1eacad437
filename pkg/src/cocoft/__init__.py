"""Category-subset tooling for fine-tuning detectors on parts of MS COCO.

Covers the pieces of a fine-tuning workflow that do not need a GPU:
reading and filtering COCO instance files, rewriting Caffe prototxt
definitions for a new class count, picking demo images, and scoring
detection dumps with the COCO AP@[.50:.95] protocol.
"""

from cocoft.coco import (
    Annotation,
    BBox,
    Category,
    Dataset,
    ImageRecord,
    list_categories,
    parse_dataset,
    serialize_dataset,
    validate_dataset,
)
from cocoft.config import SubsetConfig, parse_config, render_config
from cocoft.errors import (
    ConfigError,
    CoCoFtError,
    EmptyResultError,
    IntegrityError,
    ParseError,
    SchemaError,
)
from cocoft.evaluator import Detection, EvalReport, evaluate, parse_detections
from cocoft.prototxt import (
    PrototxtDocument,
    PrototxtSyntaxError,
    apply_rewrites,
    parse_prototxt,
    plan_rewrites,
    rewrite,
    serialize_prototxt,
    verify,
)
from cocoft.subset import CategoryMap, filter_dataset, make_category_map, select_demo_images

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "BBox",
    "Category",
    "CategoryMap",
    "CoCoFtError",
    "ConfigError",
    "Dataset",
    "Detection",
    "EmptyResultError",
    "EvalReport",
    "ImageRecord",
    "IntegrityError",
    "ParseError",
    "PrototxtDocument",
    "PrototxtSyntaxError",
    "SchemaError",
    "SubsetConfig",
    "apply_rewrites",
    "evaluate",
    "filter_dataset",
    "list_categories",
    "make_category_map",
    "parse_config",
    "parse_dataset",
    "parse_detections",
    "parse_prototxt",
    "plan_rewrites",
    "render_config",
    "rewrite",
    "select_demo_images",
    "serialize_dataset",
    "serialize_prototxt",
    "validate_dataset",
    "verify",
]
