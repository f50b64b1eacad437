"""Single-source run configuration: the ``CAT_IDS`` list plus a few run options.

Only a flat YAML subset is read::

    # comment
    CAT_IDS: [1, 3]
    SEED: 7
    EXP_DIR: faster_rcnn_end2end

Any other top-level key is kept verbatim in ``SubsetConfig.extra``. A key
with an empty value followed by indented lines (the ``TRAIN:``/``TEST:``
sections of a py-faster-rcnn config) is kept as an opaque ``RawBlock`` so
an existing experiment config can be pointed at directly.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from cocoft.errors import ConfigError

CAT_IDS_KEY = "CAT_IDS"
SEED_KEY = "SEED"
DEMO_COUNT_KEY = "DEMO_COUNT"

_KEY_LINE = re.compile(r"^([A-Za-z_][A-Za-z0-9_.\-]*)[ \t]*:(?:[ \t]+(.*?))?[ \t]*$")
_INT = re.compile(r"^[+-]?[0-9]+$")
_PLAIN_SAFE = re.compile(r"^[^\s#'\"\[\]{},&*!|>%@`][^#]*$")
_QUOTED = re.compile(r"""[ \t]*(?:"(?:[^"\\]|\\.)*"|'(?:[^']|'')*')[ \t]*""")
# one list element: a quoted string, or plain text up to the next comma
_LIST_ITEM = re.compile(r"""((?:[ \t]*(?:"(?:[^"\\]|\\.)*"|'(?:[^']|'')*')[ \t]*)|[^,]*)(?:,|\Z)""")
_LINE = re.compile(r"[^\r\n]*(?:\r\n|\r|\n)|[^\r\n]+")  # only CR and LF break lines
_SEED_RANGE = (-(2**63), 2**64 - 1)


class RawBlock(str):
    """Indented lines under a bare key, stored exactly as read (including the newlines)."""


@dataclass(frozen=True)
class SubsetConfig:
    cat_ids: tuple
    seed: int = 0
    demo_count: int = 5
    extra: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "cat_ids", tuple(self.cat_ids))
        check_cat_ids(self.cat_ids)


def check_cat_ids(ids, line=None):
    if not ids:
        raise ConfigError(f"{CAT_IDS_KEY} must list at least one category id", line=line)
    seen = set()
    for i in ids:
        if isinstance(i, bool) or not isinstance(i, int) or i < 1:
            raise ConfigError(f"{CAT_IDS_KEY} entries must be positive integers, got {i!r}", line=line)
        if i in seen:
            raise ConfigError(f"duplicate category id {i} in {CAT_IDS_KEY}", line=line)
        seen.add(i)


def _strip_comment(text: str) -> str:
    # a quote opens a string only where a scalar can start: after ':', '[' or ',' (and blanks)
    quote = None
    prev = ":"  # last non-blank character outside strings
    i = 0
    while i < len(text):
        ch = text[i]
        if quote:
            if ch == "\\" and quote == '"':
                i += 1
            elif ch == "'" == quote and text[i + 1:i + 2] == "'":
                i += 1
            elif ch == quote:
                quote = None
                prev = ch
        elif ch in "'\"" and prev in ":[,":
            quote = ch
        elif ch == "#" and (i == 0 or text[i - 1] in " \t"):
            return text[:i].rstrip(" \t")
        elif ch not in " \t":
            prev = ch
        i += 1
    return text.rstrip(" \t")


def _unquote(text: str, lineno: int) -> str:
    if text.startswith('"'):
        try:
            value = json.loads(text)
        except ValueError:
            raise ConfigError(f"bad double-quoted string {text!r}", line=lineno) from None
        if not isinstance(value, str):
            raise ConfigError(f"bad double-quoted string {text!r}", line=lineno)
        return value
    if text.startswith("'"):
        if len(text) < 2 or not text.endswith("'") or "'" in text[1:-1].replace("''", ""):
            raise ConfigError(f"bad single-quoted string {text!r}", line=lineno)
        return text[1:-1].replace("''", "'")
    return text


def _split_list(text: str, lineno: int) -> list:
    if not text.endswith("]"):
        raise ConfigError("unterminated inline list", line=lineno)
    body = text[1:-1]
    if not body.strip(" \t"):
        return []
    items = []
    pos = 0
    while True:
        m = _LIST_ITEM.match(body, pos)
        item = m.group(1).strip(" \t")
        if not item:
            raise ConfigError("empty element in inline list", line=lineno)
        if item[0] in "'\"" and _QUOTED.fullmatch(item) is None:
            raise ConfigError(f"bad quoted string {item!r}", line=lineno)
        items.append(_unquote(item, lineno))
        pos = m.end()
        if not m.group(0).endswith(",") or not body[pos:].strip(" \t"):
            return items  # end of body, or a trailing comma


def _parse_int(text: str, key: str, lineno: int) -> int:
    if not _INT.match(text):
        raise ConfigError(f"{key} expects an integer, got {text!r}", line=lineno)
    return int(text)


def parse_config(source: str) -> SubsetConfig:
    """Parse config text. Errors carry the 1-based line number where known."""
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError(f"config is not valid UTF-8: {exc.reason}") from None
    lines = _LINE.findall(source)
    values = {}
    key_lines = {}
    i = 0
    while i < len(lines):
        lineno = i + 1
        raw = lines[i]
        text = _strip_comment(raw.rstrip("\r\n"))
        i += 1
        if not text.strip(" \t"):
            continue
        if text[0] in " \t":
            raise ConfigError("unexpected indented line", line=lineno)
        m = _KEY_LINE.match(text)
        if not m:
            raise ConfigError(f"expected 'KEY: value', got {text.strip()!r}", line=lineno)
        key, value = m.group(1), m.group(2)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", line=lineno)
        key_lines[key] = lineno
        if value is None:
            block = []
            while i < len(lines):
                nxt = lines[i]
                stripped = nxt.strip()
                if stripped and nxt[0] not in " \t" and not stripped.startswith("#"):
                    break
                block.append(nxt)
                i += 1
            # trailing blank/comment lines belong to the top level, not the block
            while block and (not block[-1].strip() or block[-1].lstrip().startswith("#")):
                block.pop()
                i -= 1
            values[key] = RawBlock("".join(block))
        elif value.startswith("["):
            values[key] = _split_list(value, lineno)
        else:
            values[key] = _unquote(value, lineno)

    if CAT_IDS_KEY not in values:
        raise ConfigError(f"missing required key {CAT_IDS_KEY}")
    line = key_lines[CAT_IDS_KEY]
    raw_ids = values.pop(CAT_IDS_KEY)
    if isinstance(raw_ids, RawBlock):
        raise ConfigError(f"{CAT_IDS_KEY} must be an inline list such as [1, 3]", line=line)
    if isinstance(raw_ids, str):
        raw_ids = [raw_ids]
    cat_ids = [_parse_int(v, CAT_IDS_KEY, line) for v in raw_ids]
    check_cat_ids(cat_ids, line=line)

    seed = 0
    if SEED_KEY in values:
        seed = _scalar_int(values.pop(SEED_KEY), SEED_KEY, key_lines[SEED_KEY])
        if not _SEED_RANGE[0] <= seed <= _SEED_RANGE[1]:
            raise ConfigError(f"{SEED_KEY} must fit in 64 bits", line=key_lines[SEED_KEY])
    demo_count = 5
    if DEMO_COUNT_KEY in values:
        demo_count = _scalar_int(values.pop(DEMO_COUNT_KEY), DEMO_COUNT_KEY, key_lines[DEMO_COUNT_KEY])
        if demo_count < 1:
            raise ConfigError(f"{DEMO_COUNT_KEY} must be positive", line=key_lines[DEMO_COUNT_KEY])
    return SubsetConfig(cat_ids=cat_ids, seed=seed, demo_count=demo_count, extra=values)


def _scalar_int(value, key, line):
    if not isinstance(value, str) or isinstance(value, RawBlock):
        raise ConfigError(f"{key} expects an integer", line=line)
    return _parse_int(value, key, line)


def _render_scalar(value: str) -> str:
    if (
        _PLAIN_SAFE.match(value)
        and not value.endswith((" ", "\t", ":"))
        and ": " not in value
        and not any(ch in value for ch in ",[]")
        and value.isprintable()
    ):
        return value
    return json.dumps(value, ensure_ascii=False)


def render_config(cfg: SubsetConfig) -> str:
    out = [f"{CAT_IDS_KEY}: [{', '.join(str(i) for i in cfg.cat_ids)}]\n"]
    if cfg.seed != 0:
        out.append(f"{SEED_KEY}: {cfg.seed}\n")
    if cfg.demo_count != 5:
        out.append(f"{DEMO_COUNT_KEY}: {cfg.demo_count}\n")
    for key, value in cfg.extra.items():
        if isinstance(value, RawBlock):
            body = value if value.endswith("\n") or not value else value + "\n"
            out.append(f"{key}:\n{body}")
        elif isinstance(value, list):
            out.append(f"{key}: [{', '.join(_render_scalar(v) for v in value)}]\n")
        else:
            out.append(f"{key}: {_render_scalar(value)}\n")
    return "".join(out)
