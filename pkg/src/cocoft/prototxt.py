"""Lossless reader/writer for protobuf text format, plus the class-count rewrites.

Every entry keeps the exact whitespace and comments that preceded it and
every scalar keeps its original lexeme, so ``serialize_prototxt(parse_prototxt(s)) == s``
for any text the parser accepts. Equality between documents is structural:
names, nesting and scalar values, ignoring layout.

Only the category-dependent parameters of a Faster R-CNN end-to-end net
are rewritten; everything else passes through untouched.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from cocoft.errors import EmptyResultError, ParseError


class PrototxtSyntaxError(ParseError):
    pass


class ScalarKind(enum.Enum):
    INT = "int"
    REAL = "real"
    STRING = "string"
    IDENT = "ident"  # enum values and booleans: TRAIN, true, ...


@dataclass(eq=False)
class Scalar:
    kind: ScalarKind
    value: Union[int, float, str]
    # exact source text; None means render from value
    lexeme: Optional[str] = None
    quote: str = '"'

    def __eq__(self, other):
        if not isinstance(other, Scalar):
            return NotImplemented
        if self.kind is not other.kind:
            return False
        if self.kind is ScalarKind.REAL and math.isnan(self.value) and math.isnan(other.value):
            return True
        return self.value == other.value

    def render(self) -> str:
        if self.lexeme is not None:
            return self.lexeme
        if self.kind is ScalarKind.STRING:
            return quote_string(self.value, self.quote)
        if self.kind is ScalarKind.REAL:
            v = self.value
            if math.isnan(v):
                return "nan"
            if math.isinf(v):
                return "inf" if v > 0 else "-inf"
            return repr(v)
        return str(self.value)

    @classmethod
    def of(cls, value) -> "Scalar":
        if isinstance(value, bool):
            return cls(ScalarKind.IDENT, "true" if value else "false")
        if isinstance(value, int):
            return cls(ScalarKind.INT, value)
        if isinstance(value, float):
            return cls(ScalarKind.REAL, value)
        return cls(ScalarKind.STRING, value)


@dataclass
class ScalarField:
    name: str
    value: Scalar
    # trivia before the name, and the raw text between name and value (": ")
    leading: Optional[str] = field(default=None, compare=False)
    sep: Optional[str] = field(default=None, compare=False)


@dataclass
class MessageField:
    name: str
    entries: list = field(default_factory=list)
    leading: Optional[str] = field(default=None, compare=False)
    # raw text from after the name through "{", and from after the last entry through "}"
    opener: Optional[str] = field(default=None, compare=False)
    closer: Optional[str] = field(default=None, compare=False)

    def fields(self, name: str) -> Iterator:
        return (e for e in self.entries if e.name == name)

    def scalar(self, name: str):
        for e in self.entries:
            if e.name == name and isinstance(e, ScalarField):
                return e.value.value
        return None


Entry = Union[ScalarField, MessageField]


@dataclass
class PrototxtDocument:
    entries: list = field(default_factory=list)
    trailing: Optional[str] = field(default=None, compare=False)

    def fields(self, name: str) -> Iterator:
        return (e for e in self.entries if e.name == name)


# ---------------------------------------------------------------- lexing

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n\f\v]+)
  | (?P<comment>\#[^\n]*)
  | (?P<num>-?(?:0[xX][0-9a-fA-F]+|(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?[fF]?))
  | (?P<negspecial>-(?:[iI][nN][fF](?:[iI][nN][iI][tT][yY])?|[nN][aA][nN])(?![A-Za-z0-9_]))
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"(?:[^"\\\n]|\\[^\n])*"|'(?:[^'\\\n]|\\[^\n])*')
  | (?P<punct>[:{}])
    """,
    re.VERBOSE,
)
_INT_LEXEME = re.compile(r"-?(?:0[xX][0-9a-fA-F]+|[0-9]+)")
_WORD_CHAR = re.compile(r"[A-Za-z0-9_.]")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_INT_RANGE = (-(2**63), 2**64 - 1)

_SIMPLE_ESCAPES = {
    "a": "\a", "b": "\b", "f": "\f", "n": "\n", "r": "\r", "t": "\t", "v": "\v",
    "\\": "\\", "'": "'", '"': '"', "?": "?",
}
_ESCAPE = re.compile(r"\\(?:([0-7]{1,3})|x([0-9a-fA-F]{1,2})|u([0-9a-fA-F]{4})|U([0-9a-fA-F]{8})|(.))", re.S)


@dataclass
class _Token:
    kind: str  # "num" | "ident" | "str" | ":" | "{" | "}" | "eof"
    text: str
    pos: int
    pre: str  # whitespace and comments before the token


def _line_col(text: str, pos: int):
    line = text.count("\n", 0, pos) + 1
    return line, pos - (text.rfind("\n", 0, pos) + 1) + 1


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message, pos=None):
        line, col = _line_col(self.text, self.pos if pos is None else pos)
        return PrototxtSyntaxError(message, line=line, column=col)

    def next(self) -> _Token:
        text, start = self.text, self.pos
        pos = start
        while True:
            if pos >= len(text):
                self.pos = pos
                return _Token("eof", "", pos, text[start:pos])
            m = _TOKEN.match(text, pos)
            if m is None:
                ch = text[pos]
                if ch in "\"'":
                    raise self.error("unterminated string", pos)
                raise self.error(f"unexpected character {ch!r}", pos)
            kind = m.lastgroup
            if kind in ("ws", "comment"):
                pos = m.end()
                continue
            end = m.end()
            if kind in ("num", "negspecial") and end < len(text) and _WORD_CHAR.match(text, end):
                raise self.error(f"malformed number {text[pos:end + 1]!r}", pos)
            self.pos = end
            if kind == "punct":
                kind = m.group()
            elif kind == "negspecial":
                kind = "num"
            return _Token(kind, m.group(), pos, text[start:pos])


def unescape(body: str) -> str:
    """Decode the escapes of a quoted string body. Raises ValueError on a bad escape."""

    def repl(m):
        octal, hex2, u4, u8, simple = m.groups()
        if octal:
            code = int(octal, 8)
            if code > 0xFF:
                raise ValueError(f"octal escape out of range: \\{octal}")
            return chr(code)
        if hex2:
            return chr(int(hex2, 16))
        if u4 or u8:
            code = int(u4 or u8, 16)
            if code > 0x10FFFF or 0xD800 <= code <= 0xDFFF:
                raise ValueError(f"invalid unicode escape: {m.group()}")
            return chr(code)
        if simple in _SIMPLE_ESCAPES:
            return _SIMPLE_ESCAPES[simple]
        raise ValueError(f"invalid escape sequence: \\{simple}")

    return _ESCAPE.sub(repl, body)


def quote_string(value: str, quote: str = '"') -> str:
    out = []
    for ch in value:
        if ch == "\\":
            out.append("\\\\")
        elif ch == quote:
            out.append("\\" + quote)
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ch == "\t":
            out.append("\\t")
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\{ord(ch):03o}")
        else:
            out.append(ch)
    return quote + "".join(out) + quote


def _scalar_from_token(tok: _Token, lexer: _Lexer) -> Scalar:
    text = tok.text
    if tok.kind == "ident":
        return Scalar(ScalarKind.IDENT, text, text)
    if tok.kind == "str":
        try:
            value = unescape(text[1:-1])
        except ValueError as exc:
            raise lexer.error(str(exc), tok.pos) from None
        return Scalar(ScalarKind.STRING, value, text, text[0])
    if _INT_LEXEME.fullmatch(text):
        neg = text.startswith("-")
        digits = text[1:] if neg else text
        value = int(digits, 16) if digits[:2] in ("0x", "0X") else int(digits)
        value = -value if neg else value
        if not _INT_RANGE[0] <= value <= _INT_RANGE[1]:
            raise lexer.error(f"integer out of 64-bit range: {text}", tok.pos)
        return Scalar(ScalarKind.INT, value, text)
    lowered = text.lower()
    if lowered.startswith("-") and lowered[1:] in ("inf", "infinity", "nan"):
        value = float(lowered)
    else:
        value = float(text.rstrip("fF"))
    return Scalar(ScalarKind.REAL, value, text)


# ---------------------------------------------------------------- parsing


def parse_prototxt(source: Union[str, bytes]) -> PrototxtDocument:
    """Parse protobuf text format into a lossless document tree.

    Accepts ``name: value`` scalars, ``name { ... }`` / ``name: { ... }``
    messages, repeated names, ``#`` comments and both quote styles. Any
    failure is raised as :class:`PrototxtSyntaxError` with line and column.
    """
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError as exc:
            prefix = bytes(source[: exc.start]).decode("utf-8", errors="replace")
            line, col = _line_col(prefix, len(prefix))
            raise PrototxtSyntaxError(f"invalid UTF-8: {exc.reason}", line=line, column=col) from None

    lexer = _Lexer(source)
    doc = PrototxtDocument()
    # each frame: (entries being filled, message owning them, position of its "{")
    stack = [(doc.entries, None, None)]
    while True:
        tok = lexer.next()
        entries, owner, open_pos = stack[-1]
        if tok.kind == "eof":
            if owner is not None:
                line, _ = _line_col(source, open_pos)
                raise lexer.error(f"unexpected end of input: '{{' opened on line {line} is never closed")
            doc.trailing = tok.pre
            return doc
        if tok.kind == "}":
            if owner is None:
                raise lexer.error("unbalanced '}'", tok.pos)
            owner.closer = tok.pre + "}"
            stack.pop()
            continue
        if tok.kind != "ident":
            raise lexer.error(f"expected a field name, got {tok.text!r}", tok.pos)

        name_tok = tok
        tok = lexer.next()
        if tok.kind == ":":
            sep = tok.pre + ":"
            tok = lexer.next()
            if tok.kind == "{":
                msg = MessageField(name_tok.text, [], name_tok.pre, sep + tok.pre + "{")
                entries.append(msg)
                stack.append((msg.entries, msg, tok.pos))
            elif tok.kind in ("num", "ident", "str"):
                value = _scalar_from_token(tok, lexer)
                entries.append(ScalarField(name_tok.text, value, name_tok.pre, sep + tok.pre))
            else:
                what = "end of input" if tok.kind == "eof" else repr(tok.text)
                raise lexer.error(f"expected a value after '{name_tok.text}:', got {what}", tok.pos)
        elif tok.kind == "{":
            msg = MessageField(name_tok.text, [], name_tok.pre, tok.pre + "{")
            entries.append(msg)
            stack.append((msg.entries, msg, tok.pos))
        else:
            what = "end of input" if tok.kind == "eof" else repr(tok.text)
            raise lexer.error(f"expected ':' or '{{' after field name {name_tok.text!r}, got {what}", tok.pos)


# ---------------------------------------------------------------- serializing


def serialize_prototxt(doc: PrototxtDocument) -> str:
    """Render a document; parsed documents come back byte-for-byte.

    Entries built in code (no recorded layout) get two-space indentation.
    """
    out = []
    # work items: an entry to open at a depth, or a literal closing string
    work = [(e, 0) for e in reversed(doc.entries)]
    first = True
    while work:
        item, depth = work.pop()
        if isinstance(item, str):
            out.append(item)
            continue
        indent = "  " * depth
        if item.leading is not None:
            out.append(item.leading)
        elif not first:
            out.append("\n" + indent)
        first = False
        if not _IDENT.match(item.name):
            raise ValueError(f"invalid field name {item.name!r}")
        out.append(item.name)
        if isinstance(item, ScalarField):
            out.append(": " if item.sep is None else item.sep)
            out.append(item.value.render())
        else:
            out.append(" {" if item.opener is None else item.opener)
            closer = ("\n" + indent + "}") if item.closer is None else item.closer
            if item.closer is None and not item.entries:
                closer = "}"
            work.append((closer, None))
            work.extend((e, depth + 1) for e in reversed(item.entries))
    if doc.trailing is not None:
        out.append(doc.trailing)
    elif doc.entries:
        out.append("\n")
    return "".join(out)


# ---------------------------------------------------------------- rewriting

R1, R2, R3 = "R1", "R2", "R3"
RULES = {
    R1: "cls_score inner_product_param.num_output = K+1",
    R2: "bbox_pred inner_product_param.num_output = 4*(K+1)",
    R3: "python_param.param_str 'num_classes' = K+1",
}
CLS_LAYER = "cls_score"
BBOX_LAYER = "bbox_pred"
_NUM_CLASSES = re.compile(r"('num_classes':\s*)(-?\d+)")
_NUM_CLASSES_RAW = re.compile(r"(\\?'num_classes\\?':\s*)(-?\d+)")


@dataclass
class RewriteSite:
    rule: str
    path: tuple  # entry indices from the document root down to the scalar field
    layer: str
    old: Scalar
    new: Scalar


@dataclass
class RewritePlan:
    k: int
    sites: list = field(default_factory=list)
    applied: dict = field(default_factory=lambda: {r: 0 for r in RULES})

    def counts(self) -> dict:
        planned = {r: 0 for r in RULES}
        for s in self.sites:
            planned[s.rule] += 1
        return planned


def _walk(entries, path=()):
    """Yield (path, entry) for every entry, depth first, without recursion."""
    stack = [(entries, path)]
    while stack:
        items, prefix = stack.pop()
        for i, e in enumerate(items):
            yield prefix + (i,), e
        for i in range(len(items) - 1, -1, -1):
            if isinstance(items[i], MessageField):
                stack.append((items[i].entries, prefix + (i,)))


def _layer_name(layer: MessageField):
    name = layer.scalar("name")
    return name if isinstance(name, str) else None


def _num_output_sites(layer_path, layer: MessageField):
    for i, param in enumerate(layer.entries):
        if isinstance(param, MessageField) and param.name == "inner_product_param":
            for j, f in enumerate(param.entries):
                if isinstance(f, ScalarField) and f.name == "num_output":
                    yield layer_path + (i, j), f


def _rewrite_param_str(old: Scalar, count: int) -> Scalar:
    new_value = _NUM_CLASSES.sub(lambda m: m.group(1) + str(count), old.value)
    if old.lexeme is not None:
        q, body = old.lexeme[0], old.lexeme[1:-1]
        new_body = _NUM_CLASSES_RAW.sub(lambda m: m.group(1) + str(count), body)
        try:
            if unescape(new_body) == new_value:
                return Scalar(ScalarKind.STRING, new_value, q + new_body + q, q)
        except ValueError:
            pass
    return Scalar(ScalarKind.STRING, new_value, None, old.quote)


def plan_rewrites(doc: PrototxtDocument, k: int) -> RewritePlan:
    """Find every category-dependent site for ``k`` selected categories.

    Layers are matched by their ``name`` field wherever they appear, never by
    position. Planning never fails; a plan may be empty.
    """
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    plan = RewritePlan(k)
    targets = {CLS_LAYER: (R1, k + 1), BBOX_LAYER: (R2, 4 * (k + 1))}
    for path, entry in _walk(doc.entries):
        if not isinstance(entry, MessageField):
            continue
        if entry.name == "layer":
            name = _layer_name(entry)
            if name in targets:
                rule, value = targets[name]
                for site_path, f in _num_output_sites(path, entry):
                    plan.sites.append(RewriteSite(rule, site_path, name, f.value, Scalar(ScalarKind.INT, value)))
        elif entry.name == "python_param":
            for i, f in enumerate(entry.entries):
                if (
                    isinstance(f, ScalarField)
                    and f.name == "param_str"
                    and f.value.kind is ScalarKind.STRING
                    and _NUM_CLASSES.search(f.value.value)
                ):
                    layer = _enclosing_layer_name(doc, path)
                    plan.sites.append(RewriteSite(R3, path + (i,), layer, f.value, _rewrite_param_str(f.value, k + 1)))
    plan.sites.sort(key=lambda s: s.path)
    return plan


def _enclosing_layer_name(doc, path):
    entries, name = doc.entries, None
    for i in path:
        e = entries[i]
        if isinstance(e, MessageField):
            if e.name == "layer":
                name = _layer_name(e)
            entries = e.entries
    return name


def _replace(entries: list, path: tuple, new_value: Scalar, expected_name: str) -> list:
    out = list(entries)
    head, rest = path[0], path[1:]
    node = out[head]
    if rest:
        if not isinstance(node, MessageField):
            raise ValueError("rewrite plan does not match the document")
        out[head] = MessageField(node.name, _replace(node.entries, rest, new_value, expected_name),
                                 node.leading, node.opener, node.closer)
    else:
        if not isinstance(node, ScalarField) or node.name != expected_name:
            raise ValueError("rewrite plan does not match the document")
        out[head] = ScalarField(node.name, new_value, node.leading, node.sep)
    return out


def apply_rewrites(doc: PrototxtDocument, plan: RewritePlan) -> PrototxtDocument:
    """Return a rewritten copy of ``doc``; the input is not modified.

    Fills ``plan.applied`` with the number of sites written per rule, counting
    sites that already held the target value. Raises EmptyResultError when
    the plan has no sites at all.
    """
    applied = {r: 0 for r in RULES}
    entries = doc.entries
    for site in plan.sites:
        try:
            entries = _replace(entries, site.path, site.new, "param_str" if site.rule == R3 else "num_output")
        except IndexError:
            raise ValueError("rewrite plan does not match the document") from None
        applied[site.rule] += 1
    plan.applied = applied
    if not any(applied.values()):
        raise EmptyResultError(
            f"no rewrite targets found (looked for layers {CLS_LAYER!r}, {BBOX_LAYER!r} "
            "and python_param.param_str with 'num_classes')"
        )
    return PrototxtDocument(entries, doc.trailing)


def rewrite(doc: PrototxtDocument, k: int):
    plan = plan_rewrites(doc, k)
    return apply_rewrites(doc, plan), plan


def verify(doc: PrototxtDocument, k: Optional[int] = None) -> list:
    """Check the class-count relations between rewritten sites; returns problems found (empty = consistent).

    bbox_pred must output 4x what cls_score outputs, and each param_str class
    count must equal cls_score's output. With ``k`` given, cls_score must
    output k+1.
    """
    cls_out, bbox_out, param_counts = [], [], []
    for path, entry in _walk(doc.entries):
        if isinstance(entry, MessageField) and entry.name == "layer":
            name = _layer_name(entry)
            if name in (CLS_LAYER, BBOX_LAYER):
                for _, f in _num_output_sites(path, entry):
                    (cls_out if name == CLS_LAYER else bbox_out).append(f.value.value)
        elif isinstance(entry, ScalarField) and entry.name == "param_str" and entry.value.kind is ScalarKind.STRING:
            param_counts.extend(int(m.group(2)) for m in _NUM_CLASSES.finditer(entry.value.value))

    problems = []
    if not cls_out:
        problems.append(f"no {CLS_LAYER} num_output found")
    if len(set(cls_out)) > 1:
        problems.append(f"{CLS_LAYER} num_output values disagree: {cls_out}")
    if cls_out:
        c = cls_out[0]
        if k is not None and c != k + 1:
            problems.append(f"{CLS_LAYER} num_output is {c}, expected {k + 1}")
        for b in bbox_out:
            if b != 4 * c:
                problems.append(f"{BBOX_LAYER} num_output is {b}, expected 4 x {c} = {4 * c}")
        for n in param_counts:
            if n != c:
                problems.append(f"param_str num_classes is {n}, expected {c}")
    return problems
