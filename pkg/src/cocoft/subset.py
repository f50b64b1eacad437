"""Restricting a dataset to the configured categories, and picking demo images."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

from cocoft.coco import Dataset
from cocoft.errors import ConfigError, EmptyResultError

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class CategoryMap:
    """Selected original category ids and their contiguous training labels.

    Labels run 1..K in ascending id order; 0 is the background class, so
    ``num_classes == K + 1``.
    """

    selected_ids: tuple

    def __post_init__(self):
        ids = tuple(sorted(self.selected_ids))
        if not ids:
            raise ConfigError("a category map needs at least one category")
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate category ids in {list(self.selected_ids)}")
        object.__setattr__(self, "selected_ids", ids)

    @cached_property
    def label_of(self) -> dict:
        return {cat_id: label for label, cat_id in enumerate(self.selected_ids, start=1)}

    @property
    def k(self) -> int:
        return len(self.selected_ids)

    @property
    def num_classes(self) -> int:
        return self.k + 1

    def to_dict(self) -> dict:
        return {
            "selected_ids": list(self.selected_ids),
            "labels": {str(i): label for i, label in self.label_of.items()},
            "num_classes": self.num_classes,
        }

    def to_json(self) -> bytes:
        return (json.dumps(self.to_dict(), indent=2) + "\n").encode("utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "CategoryMap":
        m = cls(tuple(data["selected_ids"]))
        labels = {int(k): v for k, v in data.get("labels", m.label_of).items()}
        if labels != m.label_of or data.get("num_classes", m.num_classes) != m.num_classes:
            raise ConfigError("category map labels are not the ascending 1..K assignment")
        return m


@dataclass(frozen=True)
class FilterReport:
    images_kept: int
    images_dropped: int
    annotations_kept: int
    annotations_dropped: int

    def to_dict(self) -> dict:
        return {
            "images_kept": self.images_kept,
            "images_dropped": self.images_dropped,
            "annotations_kept": self.annotations_kept,
            "annotations_dropped": self.annotations_dropped,
        }


def make_category_map(d: Dataset, cat_ids) -> CategoryMap:
    ids = []
    for i in cat_ids:
        if isinstance(i, bool) or not isinstance(i, int):
            raise ConfigError(f"category ids must be integers, got {i!r}")
        ids.append(i)
    if not ids:
        raise ConfigError("CAT_IDS is empty; select at least one category")
    dups = sorted({i for i in ids if ids.count(i) > 1})
    if dups:
        raise ConfigError(f"duplicate category id(s) in CAT_IDS: {', '.join(map(str, dups))}")
    known = {c.id for c in d.categories}
    unknown = [i for i in ids if i not in known]
    if unknown:
        raise ConfigError(
            f"unknown category id(s) {', '.join(map(str, unknown))}; "
            "run `cocoft list-categories` to see the available ids"
        )
    return CategoryMap(tuple(ids))


def eligible_image_ids(d: Dataset, m: CategoryMap) -> set:
    selected = set(m.selected_ids)
    return {a.image_id for a in d.annotations if a.category_id in selected}


def filter_dataset(d: Dataset, m: CategoryMap):
    """Keep only images with at least one selected-category annotation, and only those annotations.

    Original category ids are kept in the output; the contiguous labels live
    in ``m``. Crowd annotations count like any other. Returns
    ``(dataset, FilterReport)`` and raises EmptyResultError if no image survives.
    """
    selected = set(m.selected_ids)
    annotations = tuple(a for a in d.annotations if a.category_id in selected)
    keep = {a.image_id for a in annotations}
    images = tuple(im for im in d.images if im.id in keep)
    if not images:
        raise EmptyResultError(
            f"no image contains an annotation of categories {list(m.selected_ids)}; the subset would be empty"
        )
    out = Dataset(
        images=images,
        annotations=annotations,
        categories=tuple(c for c in d.categories if c.id in selected),
        extra=dict(d.extra),
    )
    report = FilterReport(
        images_kept=len(images),
        images_dropped=len(d.images) - len(images),
        annotations_kept=len(annotations),
        annotations_dropped=len(d.annotations) - len(annotations),
    )
    return out, report


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood 2014): 64-bit state, one add and a mix per draw.

    Chosen over ``random.Random`` so the draw sequence is fixed by a short,
    published algorithm and can be reproduced outside Python.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection, no modulo bias."""
        if n < 1:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n


def select_demo_images(d: Dataset, m: CategoryMap, n: int, seed: int = 0) -> list:
    """Draw ``n`` distinct images that show at least one selected category.

    Sampling is uniform without replacement (partial Fisher-Yates over the
    eligible images in dataset order) and fully determined by ``seed``.
    """
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    keep = eligible_image_ids(d, m)
    pool = [im for im in d.images if im.id in keep]
    if len(pool) < n:
        raise EmptyResultError(f"asked for {n} demo images but only {len(pool)} eligible")
    rng = SplitMix64(seed)
    for i in range(n):
        j = i + rng.below(len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:n]
