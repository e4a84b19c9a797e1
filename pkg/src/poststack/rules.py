"""YARA-lite rule language: parser and byte-scanning matcher.

Grammar:

    rule NAME {
        meta: key = "value" ...
        strings: $id = "text" [nocase] | { 4D 5A ?? } | /regex/ ...
        condition: <boolean expr>
    }

Conditions support $id, #id <op> N, any of them, all of them, and/or/not
and parentheses. Occurrences are counted by start offset, overlapping
included. Matching is defined to agree with a naive sliding-window scan.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .errors import DuplicateRuleName, RuleSyntaxError, UndeclaredString

DEFAULT_SEVERITY = 50

# regex subset guard: forbid backreferences and (?...) extensions
_FORBIDDEN_RE = re.compile(r"\\[1-9]|\(\?")


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Pattern:
    kind: str  # text | hex | regex
    body: str
    modifiers: frozenset = frozenset()


@dataclass(frozen=True)
class Matched:
    sid: str


@dataclass(frozen=True)
class CountCmp:
    sid: str
    op: str  # > >= < <= ==
    value: int


@dataclass(frozen=True)
class And:
    left: object
    right: object


@dataclass(frozen=True)
class Or:
    left: object
    right: object


@dataclass(frozen=True)
class Not:
    operand: object


@dataclass(frozen=True)
class AnyOfThem:
    pass


@dataclass(frozen=True)
class AllOfThem:
    pass


@dataclass
class Rule:
    name: str
    meta: dict
    strings: dict  # sid -> Pattern
    condition: object

    @property
    def severity(self) -> int:
        try:
            sev = int(self.meta.get("severity", DEFAULT_SEVERITY))
        except ValueError:
            return DEFAULT_SEVERITY
        return min(100, max(1, sev))


@dataclass
class Ruleset:
    rules: list = field(default_factory=list)


@dataclass
class RuleMatch:
    rule_name: str
    severity: int
    matched_strings: list  # (sid, [offsets])


# ---------------------------------------------------------------------------
# lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<string>"(?:\\.|[^"\\])*")
  | (?P<regex>/(?:\\.|[^/\\\n])+/)
  | (?P<hex>\{[0-9A-Fa-f?\s]*\})
  | (?P<id>\$[A-Za-z_][A-Za-z0-9_]*|\#[A-Za-z_][A-Za-z0-9_]*)
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<num>\d+)
  | (?P<op>==|!=|>=|<=|[>{}<()=:])
    """,
    re.VERBOSE | re.DOTALL,
)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def _lex(source: str) -> list:
    tokens = []
    pos = 0
    line = 1
    line_start = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            col = pos - line_start + 1
            raise RuleSyntaxError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group(0)
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, text, line, pos - line_start + 1))
        nl = text.count("\n")
        if nl:
            line += nl
            line_start = pos + text.rfind("\n") + 1
        pos = m.end()
    return tokens


# ---------------------------------------------------------------------------
# parser

class _Parser:
    def __init__(self, tokens: list):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> Optional[Token]:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else Token("", "", 1, 1)
            raise RuleSyntaxError("unexpected end of input", last.line, last.col)
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.next()
        if tok.text.lower() != text.lower():
            raise RuleSyntaxError(f"expected {text!r}, got {tok.text!r}", tok.line, tok.col)
        return tok

    def parse_ruleset(self) -> Ruleset:
        rules = []
        names = set()
        while self.peek() is not None:
            rule = self.parse_rule()
            if rule.name in names:
                raise DuplicateRuleName(f"duplicate rule name {rule.name!r}")
            names.add(rule.name)
            rules.append(rule)
        return Ruleset(rules=rules)

    def parse_rule(self) -> Rule:
        self.expect("rule")
        name_tok = self.next()
        if name_tok.kind != "word":
            raise RuleSyntaxError("expected rule name", name_tok.line, name_tok.col)
        self.expect("{")
        meta: dict = {}
        strings: dict = {}
        condition = None
        while True:
            tok = self.next()
            if tok.text == "}":
                break
            section = tok.text.lower()
            if tok.kind != "word" or section not in ("meta", "strings", "condition"):
                raise RuleSyntaxError(f"expected section, got {tok.text!r}", tok.line, tok.col)
            self.expect(":")
            if section == "meta":
                meta.update(self.parse_meta())
            elif section == "strings":
                strings.update(self.parse_strings(name_tok.text))
            else:
                condition = self.parse_expr()
        if condition is None:
            raise RuleSyntaxError(f"rule {name_tok.text} has no condition", name_tok.line, name_tok.col)
        rule = Rule(name=name_tok.text, meta=meta, strings=strings, condition=condition)
        _check_declared(rule)
        return rule

    def parse_meta(self) -> dict:
        meta = {}
        while True:
            tok = self.peek()
            if tok is None or tok.kind != "word" or self._lookahead_is_section():
                break
            key = self.next().text
            self.expect("=")
            val = self.next()
            if val.kind == "string":
                meta[key] = _unescape_text(val.text[1:-1], val)
            elif val.kind == "num":
                meta[key] = val.text
            else:
                raise RuleSyntaxError("meta value must be string or number", val.line, val.col)
        return meta

    def _lookahead_is_section(self) -> bool:
        tok = self.peek()
        nxt = self.tokens[self.i + 1] if self.i + 1 < len(self.tokens) else None
        return (
            tok is not None
            and tok.kind == "word"
            and tok.text.lower() in ("meta", "strings", "condition")
            and nxt is not None
            and nxt.text == ":"
        )

    def parse_strings(self, rule_name: str) -> dict:
        strings = {}
        while True:
            tok = self.peek()
            if tok is None or not tok.text.startswith("$"):
                break
            sid = self.next().text[1:]
            self.expect("=")
            pat_tok = self.next()
            modifiers = set()
            while True:
                nxt = self.peek()
                if nxt is not None and nxt.kind == "word" and nxt.text in ("nocase", "ascii_only"):
                    modifiers.add(self.next().text)
                else:
                    break
            if pat_tok.kind == "string":
                body = _unescape_text(pat_tok.text[1:-1], pat_tok)
                if not body:
                    raise RuleSyntaxError("empty text pattern", pat_tok.line, pat_tok.col)
                pattern = Pattern("text", body, frozenset(modifiers))
            elif pat_tok.kind == "hex":
                pattern = _parse_hex(pat_tok)
            elif pat_tok.kind == "regex":
                body = pat_tok.text[1:-1]
                if _FORBIDDEN_RE.search(body):
                    raise RuleSyntaxError("unsupported regex construct", pat_tok.line, pat_tok.col)
                try:
                    re.compile(body)
                except re.error as exc:
                    raise RuleSyntaxError(f"bad regex: {exc}", pat_tok.line, pat_tok.col)
                pattern = Pattern("regex", body, frozenset(modifiers))
            else:
                raise RuleSyntaxError("expected pattern", pat_tok.line, pat_tok.col)
            strings[sid] = pattern
        return strings

    # condition grammar: or_expr
    def parse_expr(self):
        return self.parse_or()

    def parse_or(self):
        node = self.parse_and()
        while self._peek_word("or"):
            self.next()
            node = Or(node, self.parse_and())
        return node

    def parse_and(self):
        node = self.parse_not()
        while self._peek_word("and"):
            self.next()
            node = And(node, self.parse_not())
        return node

    def parse_not(self):
        if self._peek_word("not"):
            self.next()
            return Not(self.parse_not())
        return self.parse_primary()

    def parse_primary(self):
        tok = self.next()
        if tok.text == "(":
            node = self.parse_expr()
            self.expect(")")
            return node
        if tok.kind == "id" and tok.text.startswith("$"):
            return Matched(tok.text[1:])
        if tok.kind == "id" and tok.text.startswith("#"):
            op_tok = self.next()
            if op_tok.text not in (">", ">=", "<", "<=", "=="):
                raise RuleSyntaxError("expected comparison operator", op_tok.line, op_tok.col)
            num_tok = self.next()
            if num_tok.kind != "num":
                raise RuleSyntaxError("expected number", num_tok.line, num_tok.col)
            return CountCmp(tok.text[1:], op_tok.text, int(num_tok.text))
        if tok.kind == "word" and tok.text.lower() in ("any", "all"):
            self.expect("of")
            self.expect("them")
            return AnyOfThem() if tok.text.lower() == "any" else AllOfThem()
        raise RuleSyntaxError(f"unexpected token {tok.text!r} in condition", tok.line, tok.col)

    def _peek_word(self, word: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "word" and tok.text.lower() == word


def _unescape_text(body: str, tok: Token) -> str:
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            if i + 1 >= len(body):
                raise RuleSyntaxError("dangling escape", tok.line, tok.col)
            nxt = body[i + 1]
            if nxt == "n":
                out.append("\n")
                i += 2
            elif nxt == "t":
                out.append("\t")
                i += 2
            elif nxt in ("\\", '"'):
                out.append(nxt)
                i += 2
            elif nxt == "x":
                hexpair = body[i + 2 : i + 4]
                if len(hexpair) != 2:
                    raise RuleSyntaxError("bad \\x escape", tok.line, tok.col)
                try:
                    out.append(chr(int(hexpair, 16)))
                except ValueError:
                    raise RuleSyntaxError("bad \\x escape", tok.line, tok.col)
                i += 4
            else:
                raise RuleSyntaxError(f"unknown escape \\{nxt}", tok.line, tok.col)
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _parse_hex(tok: Token) -> Pattern:
    inner = tok.text[1:-1].split()
    if not inner:
        raise RuleSyntaxError("empty hex pattern", tok.line, tok.col)
    for unit in inner:
        if unit != "??" and not re.fullmatch(r"[0-9A-Fa-f]{2}", unit):
            raise RuleSyntaxError(f"bad hex unit {unit!r}", tok.line, tok.col)
    return Pattern("hex", " ".join(u.upper() for u in inner))


def _check_declared(rule: Rule) -> None:
    def walk(node):
        if isinstance(node, (Matched, CountCmp)):
            if node.sid not in rule.strings:
                raise UndeclaredString(
                    f"rule {rule.name}: condition references undeclared ${node.sid}"
                )
        elif isinstance(node, (And, Or)):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, Not):
            walk(node.operand)

    walk(rule.condition)


def parse_ruleset(source: str) -> Ruleset:
    return _Parser(_lex(source)).parse_ruleset()


# ---------------------------------------------------------------------------
# matcher

def find_occurrences(pattern: Pattern, data: bytes) -> list:
    """All start offsets where the pattern matches, overlapping included."""
    if pattern.kind == "text":
        needle = pattern.body.encode("latin-1", "replace")
        hay = data
        if "nocase" in pattern.modifiers:
            needle = needle.lower()
            hay = data.lower()
        out = []
        start = hay.find(needle)
        while start != -1:
            out.append(start)
            start = hay.find(needle, start + 1)
        return out
    if pattern.kind == "hex":
        units = [None if u == "??" else int(u, 16) for u in pattern.body.split()]
        n = len(units)
        out = []
        for i in range(len(data) - n + 1):
            ok = True
            for j, u in enumerate(units):
                if u is not None and data[i + j] != u:
                    ok = False
                    break
            if ok:
                out.append(i)
        return out
    # regex over the byte stream viewed as latin-1
    flags = re.IGNORECASE if "nocase" in pattern.modifiers else 0
    prog = re.compile(pattern.body, flags)
    text = data.decode("latin-1")
    out = []
    pos = 0
    while pos <= len(text):
        m = prog.search(text, pos)
        if m is None:
            break
        out.append(m.start())
        pos = m.start() + 1
    return out


def _eval(node, counts: dict, strings: dict) -> bool:
    if isinstance(node, Matched):
        return counts[node.sid] > 0
    if isinstance(node, CountCmp):
        c = counts[node.sid]
        return {
            ">": c > node.value,
            ">=": c >= node.value,
            "<": c < node.value,
            "<=": c <= node.value,
            "==": c == node.value,
        }[node.op]
    if isinstance(node, And):
        return _eval(node.left, counts, strings) and _eval(node.right, counts, strings)
    if isinstance(node, Or):
        return _eval(node.left, counts, strings) or _eval(node.right, counts, strings)
    if isinstance(node, Not):
        return not _eval(node.operand, counts, strings)
    if isinstance(node, AnyOfThem):
        return any(counts[s] > 0 for s in strings)
    if isinstance(node, AllOfThem):
        return all(counts[s] > 0 for s in strings)
    raise TypeError(f"unknown condition node {node!r}")


def match_rules(ruleset: Ruleset, data: bytes) -> list:
    matches = []
    for rule in sorted(ruleset.rules, key=lambda r: r.name):
        occurrences = {sid: find_occurrences(p, data) for sid, p in rule.strings.items()}
        counts = {sid: len(offs) for sid, offs in occurrences.items()}
        if _eval(rule.condition, counts, rule.strings):
            matched = [(sid, offs) for sid, offs in occurrences.items() if offs]
            matches.append(
                RuleMatch(rule_name=rule.name, severity=rule.severity, matched_strings=matched)
            )
    return matches


def load_rules_dir(path) -> tuple[Ruleset, list]:
    """Load every *.post-rules file under path into one Ruleset.

    Returns (ruleset, errors); files that fail to parse are skipped and
    reported so one bad file cannot take down the whole engine.
    """
    from pathlib import Path

    merged = Ruleset()
    names = set()
    errors = []
    for fp in sorted(Path(path).glob("*.post-rules")):
        try:
            rs = parse_ruleset(fp.read_text("utf-8"))
        except Exception as exc:
            errors.append(f"{fp.name}: {exc}")
            continue
        for rule in rs.rules:
            if rule.name in names:
                errors.append(f"{fp.name}: duplicate rule name {rule.name}")
                continue
            names.add(rule.name)
            merged.rules.append(rule)
    return merged, errors
