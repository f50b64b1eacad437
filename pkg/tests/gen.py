"""Seeded random instance generators shared by the property and acceptance tests."""

import difflib
import random

from cocoft.coco import Annotation, BBox, Category, Dataset, ImageRecord
from cocoft.evaluator import Detection
from cocoft.prototxt import Scalar, ScalarKind, parse_prototxt, serialize_prototxt

SCORES = [0.1, 0.25, 0.5, 0.5, 0.75, 0.9, 0.9, 0.95]


def _box(rng, grid=12):
    w, h = rng.randint(1, 8), rng.randint(1, 8)
    return (rng.randint(0, grid), rng.randint(0, grid), w, h)


def _near(rng, box):
    x, y, w, h = box
    return (
        max(0, x + rng.randint(-1, 1)),
        max(0, y + rng.randint(-1, 1)),
        max(1, w + rng.randint(-1, 1)),
        max(1, h + rng.randint(-1, 1)),
    )


def random_eval_instance(rng: random.Random, max_images=5, max_gt=4, max_dets=6, max_cats=3):
    """Small integer-grid instance: lots of IoU ties, threshold hits and score ties."""
    n_images = rng.randint(1, max_images)
    n_cats = rng.randint(1, max_cats)
    images = list(range(1, n_images + 1))
    cats = list(range(1, n_cats + 1))
    gt, dets = [], []
    for img in images:
        boxes = []
        for _ in range(rng.randint(0, max_gt)):
            b = _box(rng)
            boxes.append(b)
            gt.append((img, rng.choice(cats), b, rng.random() < 0.2))
        for _ in range(rng.randint(0, max_dets)):
            if boxes and rng.random() < 0.7:
                b = rng.choice(boxes)
                b = b if rng.random() < 0.3 else _near(rng, b)
            else:
                b = _box(rng)
            dets.append((img, rng.choice(cats), b, rng.choice(SCORES)))
    return {"images": images, "categories": cats, "gt": gt, "dets": dets}


def to_dataset(inst) -> Dataset:
    images = tuple(ImageRecord(i, f"{i:06d}.jpg", 64, 64) for i in inst["images"])
    anns = tuple(
        Annotation(n, img, cat, BBox(*map(float, box)), float(box[2] * box[3]), bool(crowd))
        for n, (img, cat, box, crowd) in enumerate(inst["gt"], start=1)
    )
    cats = tuple(Category(c, f"cat{c}") for c in inst["categories"])
    return Dataset(images, anns, cats)


def to_detections(inst) -> list:
    return [Detection(img, cat, BBox(*map(float, box)), float(score)) for img, cat, box, score in inst["dets"]]


def random_dataset(rng: random.Random, max_images=20, max_cats=10) -> Dataset:
    n_cats = rng.randint(1, max_cats)
    cat_ids = sorted(rng.sample(range(1, 91), n_cats))
    images = tuple(ImageRecord(i, f"img_{i}.jpg", 640, 480) for i in rng.sample(range(1, 1000), rng.randint(0, max_images)))
    anns = []
    for im in images:
        for _ in range(rng.randint(0, 4)):
            anns.append(Annotation(len(anns) + 1, im.id, rng.choice(cat_ids), BBox(1.0, 2.0, 3.0, 4.0), 12.0,
                                   rng.random() < 0.1))
    cats = tuple(Category(c, f"name{c}", "thing") for c in cat_ids)
    return Dataset(images, tuple(anns), cats)


# ---------------------------------------------------------------- prototxt text

_NAMES = ["layer", "name", "type", "num_output", "param", "lr_mult", "python_param", "param_str",
          "inner_product_param", "weight_filler", "std", "phase", "include", "top", "bottom", "_x9"]
_WS = [" ", "  ", "\t", "\n", "\n  ", "\r\n", "\n\n    ", ""]
_COMMENTS = ["# c", "#", "# K + 1 { } 'x'", "#==== RPN ===="]


def _trivia(rng, required=False):
    parts = []
    for _ in range(rng.randint(0, 2)):
        parts.append(rng.choice(_WS))
        if rng.random() < 0.2:
            parts.append(rng.choice(_COMMENTS) + "\n")
    text = "".join(parts)
    return text if text or not required else " "


def _value(rng):
    kind = rng.randrange(7)
    if kind == 0:
        return str(rng.randint(-(2**63), 2**64 - 1))
    if kind == 1:
        return rng.choice(["0.01", "1e-3", "-2.5E+4", ".5", "3.", "1f", "0x1F", "-inf", "nan", "0"])
    if kind == 2:
        return rng.choice(["TRAIN", "true", "false", "MAX", "inf"])
    body = "".join(rng.choice(["a", " ", "'", '"', "\\n", "\\\\", "é", "{", "#", "\\x41", "\\101", "num_classes"])
                   for _ in range(rng.randint(0, 6)))
    q = rng.choice("\"'")
    body = body.replace(q, "\\" + q) if q == '"' else body.replace("'", "\\'")
    # a lone backslash before the closing quote would escape it; the pieces above are all complete escapes
    return q + body + q


def random_prototxt(rng: random.Random, max_depth=4, max_entries=5) -> str:
    """Syntactically valid text format with random layout, comments and lexemes."""
    out = []
    # frames: remaining entry count at each open depth
    stack = [rng.randint(0, max_entries)]
    while stack:
        if stack[-1] == 0:
            stack.pop()
            if stack:
                out.append(_trivia(rng) + "}")
            continue
        stack[-1] -= 1
        out.append(_trivia(rng, required=bool(out)) + rng.choice(_NAMES))
        if len(stack) < max_depth and rng.random() < 0.35:
            out.append(rng.choice(["", " ", ":", ": ", " :\n"]) + rng.choice(["", " "]) + "{")
            stack.append(rng.randint(0, max_entries))
        else:
            out.append(rng.choice([":", ": ", " : ", ":\t"]) + _value(rng))
    out.append(_trivia(rng))
    return "".join(out)


# ---------------------------------------------------------------- filter invariants

def check_filter_invariants(d: Dataset, rng: random.Random) -> int:
    """Assert soundness, completeness, idempotence and monotonicity for random subsets of ``d``.

    Returns the number of subsets checked; subsets that empty the dataset are
    checked for the error instead.
    """
    from cocoft.errors import EmptyResultError
    from cocoft.subset import filter_dataset, make_category_map

    all_ids = [c.id for c in d.categories]
    small = rng.sample(all_ids, rng.randint(1, len(all_ids)))
    large = sorted(set(small) | set(rng.sample(all_ids, rng.randint(0, len(all_ids)))))
    kept = []
    for ids in (small, large):
        m = make_category_map(d, ids)
        sel = set(ids)
        eligible = {a.image_id for a in d.annotations if a.category_id in sel}
        if not eligible:
            try:
                filter_dataset(d, m)
            except EmptyResultError:
                kept.append(0)
                continue
            raise AssertionError("empty subset did not raise")
        out, rep = filter_dataset(d, m)
        image_ids = {im.id for im in out.images}
        # soundness
        assert all(a.category_id in sel for a in out.annotations)
        assert all(any(a.image_id == i for a in out.annotations) for i in image_ids)
        # completeness
        assert image_ids == eligible
        assert [a for a in d.annotations if a.category_id in sel] == list(out.annotations)
        assert [im for im in d.images if im.id in eligible] == list(out.images)
        assert [c for c in d.categories if c.id in sel] == list(out.categories)
        # report arithmetic
        assert rep.images_kept + rep.images_dropped == len(d.images)
        assert rep.annotations_kept + rep.annotations_dropped == len(d.annotations)
        # idempotence
        again, rep2 = filter_dataset(out, m)
        assert again == out and rep2.images_dropped == 0 and rep2.annotations_dropped == 0
        kept.append(rep.images_kept)
    # monotonicity
    assert kept[0] <= kept[1]
    return 2


def ann(id, image_id, cat, box=(0.0, 0.0, 2.0, 2.0), crowd=False):
    b = BBox(*box)
    return Annotation(id, image_id, cat, b, b.area, crowd)


def five_candidates():
    """Five images with a person, one with only a dog."""
    images = tuple(ImageRecord(i, f"{i}.jpg", 10, 10) for i in range(1, 7))
    anns = tuple(ann(i, i, 1 if i <= 5 else 18) for i in range(1, 7))
    return Dataset(images, anns, (Category(1, "person"), Category(18, "dog")))


def changed_lines(a: str, b: str):
    """Line numbers (1-based, in ``a``) touched by the diff from a to b."""
    sm = difflib.SequenceMatcher(a=a.splitlines(), b=b.splitlines(), autojunk=False)
    touched = set()
    for tag, i1, i2, j1, j2 in sm.get_opcodes():
        if tag != "equal":
            touched.update(range(i1 + 1, i2 + 1))
    return touched


def scalar_offset(text, path):
    """Source offset of the scalar at ``path``: serialize with a marker in place of its value."""
    probe = parse_prototxt(text)
    marker = "\x00"
    entries = probe.entries
    for i in path[:-1]:
        entries = entries[i].entries
    target = entries[path[-1]]
    target.value = Scalar(ScalarKind.IDENT, marker, marker)
    return serialize_prototxt(probe).index(marker)
