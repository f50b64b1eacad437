"""Command-line entry point.

Machine-readable results go to stdout as JSON; diagnostics go to stderr as
one JSON object per line. Exit codes: 0 ok, 1 usage, 2 bad or inconsistent
data, 3 empty result (empty subset, nothing to rewrite, too few images).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from cocoft import __version__
from cocoft.coco import list_categories, parse_dataset, serialize_dataset, validate_dataset
from cocoft.config import parse_config
from cocoft.errors import CoCoFtError, DataError, UsageError
from cocoft.evaluator import evaluate, parse_detections
from cocoft.prototxt import RULES, apply_rewrites, parse_prototxt, plan_rewrites, serialize_prototxt, verify
from cocoft.subset import filter_dataset, make_category_map, select_demo_images

logger = logging.getLogger("cocoft")

FILTERED_NAME = "instances.json"
CATEGORY_MAP_NAME = "category_map.json"
DEMO_LIST_NAME = "demo_images.json"


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class _JsonLineFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname.lower(), "message": record.getMessage()})


def _diag(level: str, message: str, **extra):
    print(json.dumps({"level": level, "message": message, **extra}), file=sys.stderr)


def _emit(obj, indent=None):
    sys.stdout.write(json.dumps(obj, indent=indent) + "\n")


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None


def _write(path: Path, data) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror or exc}") from None


def _same_file(a: Path, b: Path) -> bool:
    try:
        return os.path.samefile(a, b)
    except OSError:
        return False


def _load_instances(path):
    return parse_dataset(_read(path))


def _load_config(path):
    return parse_config(_read(path))


def _seed_and_count(args, cfg):
    seed = args.seed if args.seed is not None else cfg.seed
    n = args.n if args.n is not None else cfg.demo_count
    if n < 1:
        raise UsageError("--n must be positive")
    return seed, n


# ---------------------------------------------------------------- commands


def cmd_list_categories(args) -> int:
    d = _load_instances(args.instances)
    cats = list_categories(d)
    if args.format == "json":
        _emit([{"id": c.id, "name": c.name, "supercategory": c.supercategory} for c in cats], indent=2)
    else:
        for c in cats:
            sys.stdout.write(f"{c.id}\t{c.name}\t{c.supercategory}\n")
    return 0


def _filter(instances_path, cfg, out_dir: Path):
    d = _load_instances(instances_path)
    m = make_category_map(d, cfg.cat_ids)
    filtered, report = filter_dataset(d, m)
    target = out_dir / FILTERED_NAME
    if _same_file(target, Path(instances_path)):
        raise UsageError(f"refusing to overwrite the input file {instances_path}; choose another --out")
    _write(target, serialize_dataset(filtered))
    _write(out_dir / CATEGORY_MAP_NAME, m.to_json())
    return filtered, m, report


def cmd_filter(args) -> int:
    cfg = _load_config(args.cfg)
    _, _, report = _filter(args.instances, cfg, Path(args.out))
    _emit(report.to_dict())
    return 0


def _rewrite_files(paths, k, out_dir, in_place, check):
    planned = []
    for p in paths:
        text = _read(p)
        doc = parse_prototxt(text)
        plan = plan_rewrites(doc, k)
        new_doc = apply_rewrites(doc, plan)  # raises EmptyResultError before anything is written
        target = Path(p) if in_place else Path(out_dir) / Path(p).name
        if not in_place and _same_file(target, Path(p)):
            raise UsageError(f"--out would overwrite {p}; use --in-place to edit inputs")
        planned.append((p, target, plan, new_doc))
    targets = [str(t) for _, t, _, _ in planned]
    if len(set(targets)) != len(targets):
        raise UsageError("two inputs share a file name; they would overwrite each other in --out")

    results = []
    failed = []
    for p, target, plan, new_doc in planned:
        entry = {"path": str(p), "output": str(target), "applied": plan.applied}
        if check:
            problems = verify(new_doc, k)
            entry["verify"] = problems
            failed.extend(f"{p}: {msg}" for msg in problems)
        results.append(entry)
    if failed:
        raise DataError("verification failed: " + "; ".join(failed))
    for _, target, _, new_doc in planned:
        _write(target, serialize_prototxt(new_doc))
    return results


def cmd_rewrite(args) -> int:
    if not args.in_place and not args.out:
        raise UsageError("rewrite needs --out DIR or --in-place")
    if args.in_place and args.out:
        raise UsageError("--out and --in-place are mutually exclusive")
    cfg = _load_config(args.cfg)
    k = len(cfg.cat_ids)
    results = _rewrite_files(args.prototxt, k, args.out, args.in_place, args.verify)
    _emit({"k": k, "num_classes": k + 1, "rules": RULES, "files": results}, indent=2)
    return 0


def _demo_listing(images, seed):
    return {"seed": seed, "images": [{"id": im.id, "file_name": im.file_name} for im in images]}


def cmd_select_demo(args) -> int:
    cfg = _load_config(args.cfg)
    seed, n = _seed_and_count(args, cfg)
    d = _load_instances(args.instances)
    m = make_category_map(d, cfg.cat_ids)
    images = select_demo_images(d, m, n, seed)
    if args.format == "tsv":
        for im in images:
            sys.stdout.write(f"{im.id}\t{im.file_name}\n")
    else:
        _emit(_demo_listing(images, seed), indent=2)
    return 0


def cmd_evaluate(args) -> int:
    d = _load_instances(args.instances)
    m = make_category_map(d, _load_config(args.cfg).cat_ids) if args.cfg else None
    dets = parse_detections(_read(args.detections))
    report = evaluate(d, dets, m)
    if args.out:
        _write(Path(args.out), report.to_json())
        sys.stdout.write(report.summary_table())
    else:
        sys.stdout.write(report.to_json().decode("utf-8"))
        sys.stderr.write(report.summary_table())
    return 0


def cmd_validate(args) -> int:
    report = validate_dataset(_read(args.instances))
    _emit(report.to_dict(), indent=2)
    return 0 if report.ok else DataError.exit_code


def cmd_pipeline(args) -> int:
    cfg = _load_config(args.cfg)
    seed, n = _seed_and_count(args, cfg)
    out = Path(args.out)
    filtered, m, report = _filter(args.instances, cfg, out)
    rewrites = _rewrite_files(args.prototxt, m.k, out, False, True) if args.prototxt else []
    images = select_demo_images(filtered, m, n, seed)
    _write(out / DEMO_LIST_NAME, json.dumps(_demo_listing(images, seed), indent=2) + "\n")
    _emit({
        "filter": report.to_dict(),
        "category_map": m.to_dict(),
        "rewrite": rewrites,
        "demo_images": [im.file_name for im in images],
        "outputs": sorted(
            [str(out / FILTERED_NAME), str(out / CATEGORY_MAP_NAME), str(out / DEMO_LIST_NAME)]
            + [r["output"] for r in rewrites]
        ),
    }, indent=2)
    return 0


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="cocoft", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, func, help):
        p = sub.add_parser(name, help=help, description=help)
        p.set_defaults(func=func)
        return p

    p = add("list-categories", cmd_list_categories, "list the categories of an instances file")
    p.add_argument("--instances", required=True, metavar="PATH")
    p.add_argument("--format", choices=("tsv", "json"), default="tsv")

    p = add("filter", cmd_filter, "keep only images and annotations of the CAT_IDS categories")
    p.add_argument("--instances", required=True, metavar="PATH")
    p.add_argument("--cfg", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="DIR")

    p = add("rewrite", cmd_rewrite, "set the class-dependent outputs of prototxt files for CAT_IDS")
    p.add_argument("prototxt", nargs="+", metavar="PROTOTXT")
    p.add_argument("--cfg", required=True, metavar="PATH")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--in-place", action="store_true")
    p.add_argument("--verify", action="store_true", help="check 4x and param_str consistency after rewriting")

    for name, func, help in (
        ("select-demo", cmd_select_demo, "randomly pick images showing at least one selected category"),
        ("pipeline", cmd_pipeline, "filter, rewrite and select demo images in one go"),
    ):
        p = add(name, func, help)
        p.add_argument("--instances", required=True, metavar="PATH")
        p.add_argument("--cfg", required=True, metavar="PATH")
        p.add_argument("--n", type=int, help="number of images (default: DEMO_COUNT from the config, else 5)")
        p.add_argument("--seed", type=int, help="RNG seed (default: SEED from the config, else 0)")
        if name == "select-demo":
            p.add_argument("--format", choices=("tsv", "json"), default="json")
        else:
            p.add_argument("--prototxt", nargs="*", default=[], metavar="PROTOTXT")
            p.add_argument("--out", required=True, metavar="DIR")

    p = add("evaluate", cmd_evaluate, "score a COCO results file with AP@[.50:.95]")
    p.add_argument("--instances", required=True, metavar="PATH")
    p.add_argument("--detections", required=True, metavar="PATH")
    p.add_argument("--cfg", metavar="PATH", help="restrict scoring to CAT_IDS (default: all categories)")
    p.add_argument("--out", metavar="PATH", help="write the JSON report here and print the table on stdout")

    p = add("validate", cmd_validate, "check an instances file for integrity problems")
    p.add_argument("--instances", required=True, metavar="PATH")
    return parser


def main(argv=None) -> int:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLineFormatter())
    root = logging.getLogger("cocoft")
    root.handlers[:] = [handler]
    root.propagate = False
    root.setLevel(logging.WARNING)
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CoCoFtError as exc:
        _diag("error", str(exc), type=type(exc).__name__, exit_code=exc.exit_code)
        return exc.exit_code


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
