"""Knowledge-base documents: AST, parser, serializer, dialect detection,
TBox normalization, and nominal elimination."""
from __future__ import annotations

import re
from dataclasses import dataclass, field


# === errors ==================================================================

class CkbError(Exception):
    """Base error for knowledge-base processing."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.message = message
        self.line = line
        self.col = col
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", col {col}" if col is not None else "") + ")"
        super().__init__(message + where)


class ParseError(CkbError):
    pass


class PatternError(CkbError):
    """Invalid circumscription pattern (overlap, cycle, unknown name)."""


class NormalizationError(CkbError):
    pass


# === roles and concepts ======================================================

@dataclass(frozen=True)
class Role:
    name: str
    inverted: bool = False

    def inverse(self) -> Role:
        return Role(self.name, not self.inverted)

    def __str__(self) -> str:
        return f"inv({self.name})" if self.inverted else self.name


class Concept:
    """Base class for concept expressions."""


@dataclass(frozen=True)
class Top(Concept):
    def __str__(self) -> str:
        return "top"


@dataclass(frozen=True)
class Bot(Concept):
    def __str__(self) -> str:
        return "bot"


@dataclass(frozen=True)
class Name(Concept):
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Nominal(Concept):
    individual: str

    def __str__(self) -> str:
        return "{" + self.individual + "}"


@dataclass(frozen=True)
class Not(Concept):
    arg: Concept

    def __str__(self) -> str:
        return "not " + _cstr(self.arg, 3)


@dataclass(frozen=True)
class And(Concept):
    left: Concept
    right: Concept

    def __str__(self) -> str:
        return _cstr(self.left, 2) + " & " + _cstr(self.right, 2)


@dataclass(frozen=True)
class Or(Concept):
    left: Concept
    right: Concept

    def __str__(self) -> str:
        return _cstr(self.left, 1) + " | " + _cstr(self.right, 1)


@dataclass(frozen=True)
class Exists(Concept):
    role: Role
    filler: Concept = Top()

    def __str__(self) -> str:
        if self.filler == Top():
            return f"exists {self.role}"
        return f"exists {self.role} . " + _cstr(self.filler, 3)


def _level(c: Concept) -> int:
    if isinstance(c, Or):
        return 1
    if isinstance(c, And):
        return 2
    if isinstance(c, (Not, Exists)):
        return 3
    return 4


def _cstr(c: Concept, need: int) -> str:
    s = str(c)
    return f"({s})" if _level(c) < need else s


def concept_names_in(c: Concept) -> set[str]:
    if isinstance(c, Name):
        return {c.name}
    if isinstance(c, Not):
        return concept_names_in(c.arg)
    if isinstance(c, (And, Or)):
        return concept_names_in(c.left) | concept_names_in(c.right)
    if isinstance(c, Exists):
        return concept_names_in(c.filler)
    return set()


def roles_in(c: Concept) -> set[str]:
    if isinstance(c, Not):
        return roles_in(c.arg)
    if isinstance(c, (And, Or)):
        return roles_in(c.left) | roles_in(c.right)
    if isinstance(c, Exists):
        return {c.role.name} | roles_in(c.filler)
    return set()


def nominals_in(c: Concept) -> set[str]:
    if isinstance(c, Nominal):
        return {c.individual}
    if isinstance(c, Not):
        return nominals_in(c.arg)
    if isinstance(c, (And, Or)):
        return nominals_in(c.left) | nominals_in(c.right)
    if isinstance(c, Exists):
        return nominals_in(c.filler)
    return set()


# === axioms, assertions, queries, patterns ===================================

@dataclass(frozen=True)
class CI:
    lhs: Concept
    rhs: Concept

    def __str__(self) -> str:
        return f"{self.lhs} [= {self.rhs}"


@dataclass(frozen=True)
class RI:
    sub: Role
    sup: Role

    def __str__(self) -> str:
        return f"{self.sub} [= {self.sup}"


@dataclass(frozen=True)
class NegRI:
    sub: Role
    sup: Role

    def __str__(self) -> str:
        return f"{self.sub} [= not {self.sup}"


Axiom = CI | RI | NegRI


@dataclass(frozen=True)
class ConceptAssertion:
    concept: str
    individual: str

    def __str__(self) -> str:
        return f"{self.concept}({self.individual})"


@dataclass(frozen=True)
class RoleAssertion:
    role: str
    subject: str
    object: str

    def __str__(self) -> str:
        return f"{self.role}({self.subject}, {self.object})"


Assertion = ConceptAssertion | RoleAssertion


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return "?" + self.name


@dataclass(frozen=True)
class Const:
    name: str

    def __str__(self) -> str:
        return self.name


Term = Var | Const


@dataclass(frozen=True)
class ConceptAtom:
    concept: str
    term: Term

    def __str__(self) -> str:
        return f"{self.concept}({self.term})"


@dataclass(frozen=True)
class RoleAtom:
    role: str
    subject: Term
    object: Term

    def __str__(self) -> str:
        return f"{self.role}({self.subject}, {self.object})"


Atom = ConceptAtom | RoleAtom


def _atom_vars(atom: Atom) -> set[str]:
    out = set()
    terms = (atom.term,) if isinstance(atom, ConceptAtom) else (atom.subject, atom.object)
    for t in terms:
        if isinstance(t, Var):
            out.add(t.name)
    return out


@dataclass(frozen=True)
class Query:
    """Union of conjunctive queries; all disjuncts share the answer-variable
    sequence, and every answer variable occurs in every disjunct."""
    name: str
    answer_vars: tuple[str, ...]
    disjuncts: tuple[tuple[Atom, ...], ...]

    def __post_init__(self):
        if not self.disjuncts:
            raise CkbError(f"query {self.name} has no disjuncts")
        for d in self.disjuncts:
            if not d:
                raise CkbError(f"query {self.name} has an empty disjunct")
            dvars = set().union(*[_atom_vars(a) for a in d])
            missing = [v for v in self.answer_vars if v not in dvars]
            if missing:
                raise CkbError(
                    f"query {self.name}: answer variable ?{missing[0]} does not occur "
                    f"in every disjunct")

    def variables(self) -> set[str]:
        out = set()
        for d in self.disjuncts:
            for a in d:
                out |= _atom_vars(a)
        return out

    def constants(self) -> list[str]:
        out: list[str] = []
        for d in self.disjuncts:
            for a in d:
                terms = (a.term,) if isinstance(a, ConceptAtom) else (a.subject, a.object)
                for t in terms:
                    if isinstance(t, Const) and t.name not in out:
                        out.append(t.name)
        return out


@dataclass(frozen=True)
class CircPattern:
    """Which concept names are minimized (with a priority preorder), fixed,
    or left varying.  `prefer` holds pairs (a, b) meaning a has strictly
    higher minimization priority than b; it is transitively closed."""
    minimized: tuple[str, ...] = ()
    fixed: frozenset[str] = frozenset()
    prefer: frozenset[tuple[str, str]] = frozenset()

    @staticmethod
    def build(minimized: tuple[str, ...], fixed: tuple[str, ...],
              prefer_pairs: tuple[tuple[str, str], ...],
              line: int | None = None) -> CircPattern:
        seen = set()
        for a in minimized:
            if a in seen:
                raise PatternError(f"duplicate minimized name {a}", line)
            seen.add(a)
        fseen = set()
        for a in fixed:
            if a in fseen:
                raise PatternError(f"duplicate fixed name {a}", line)
            fseen.add(a)
        overlap = seen & fseen
        if overlap:
            raise PatternError(f"name {sorted(overlap)[0]} is both minimized and fixed", line)
        mset = set(minimized)
        for a, b in prefer_pairs:
            if a not in mset or b not in mset:
                bad = a if a not in mset else b
                raise PatternError(f"preference mentions non-minimized name {bad}", line)
        closed = _transitive_closure(set(prefer_pairs))
        for a, b in closed:
            if a == b:
                raise PatternError(f"preference cycle through {a}", line)
        return CircPattern(tuple(minimized), frozenset(fseen), frozenset(closed))

    def higher_priority(self, a: str) -> list[str]:
        """Names minimized with strictly higher priority than a."""
        return sorted(b for (b, x) in self.prefer if x == a)

    def scope(self) -> set[str]:
        return set(self.minimized) | set(self.fixed)


def _transitive_closure(pairs: set[tuple[str, str]]) -> set[tuple[str, str]]:
    closed = set(pairs)
    changed = True
    while changed:
        changed = False
        for (a, b) in list(closed):
            for (c, d) in list(closed):
                if b == c and (a, d) not in closed:
                    closed.add((a, d))
                    changed = True
    return closed


@dataclass
class KnowledgeBase:
    tbox: tuple[Axiom, ...] = ()
    abox: tuple[Assertion, ...] = ()
    circ: CircPattern = field(default_factory=CircPattern)
    queries: dict[str, Query] = field(default_factory=dict)

    def individuals(self) -> list[str]:
        """Named individuals, in order of first occurrence (ABox, then TBox
        nominals, then query constants)."""
        out: list[str] = []

        def add(x: str):
            if x not in out:
                out.append(x)

        for a in self.abox:
            if isinstance(a, ConceptAssertion):
                add(a.individual)
            else:
                add(a.subject)
                add(a.object)
        for ax in self.tbox:
            if isinstance(ax, CI):
                for x in sorted(nominals_in(ax.lhs) | nominals_in(ax.rhs)):
                    add(x)
        for q in self.queries.values():
            for x in q.constants():
                add(x)
        return out

    def concept_names(self) -> list[str]:
        out: list[str] = []

        def add(x: str):
            if x not in out:
                out.append(x)

        for ax in self.tbox:
            if isinstance(ax, CI):
                for x in sorted(concept_names_in(ax.lhs)):
                    add(x)
                for x in sorted(concept_names_in(ax.rhs)):
                    add(x)
        for a in self.abox:
            if isinstance(a, ConceptAssertion):
                add(a.concept)
        for q in self.queries.values():
            for d in q.disjuncts:
                for at in d:
                    if isinstance(at, ConceptAtom):
                        add(at.concept)
        for x in self.circ.minimized:
            add(x)
        for x in sorted(self.circ.fixed):
            add(x)
        return out

    def role_names(self) -> list[str]:
        out: list[str] = []

        def add(x: str):
            if x not in out:
                out.append(x)

        for ax in self.tbox:
            if isinstance(ax, CI):
                for x in sorted(roles_in(ax.lhs)):
                    add(x)
                for x in sorted(roles_in(ax.rhs)):
                    add(x)
            else:
                add(ax.sub.name)
                add(ax.sup.name)
        for a in self.abox:
            if isinstance(a, RoleAssertion):
                add(a.role)
        for q in self.queries.values():
            for d in q.disjuncts:
                for at in d:
                    if isinstance(at, RoleAtom):
                        add(at.role)
        return out

    def has_nominals(self) -> bool:
        return any(isinstance(ax, CI) and (nominals_in(ax.lhs) or nominals_in(ax.rhs))
                   for ax in self.tbox)


# === symbol interning ========================================================

class SymbolTable:
    """Dense integer ids for names, in insertion order."""

    def __init__(self, names: list[str] | None = None):
        self._ids: dict[str, int] = {}
        self._names: list[str] = []
        for n in names or []:
            self.intern(n)

    def intern(self, name: str) -> int:
        if name not in self._ids:
            self._ids[name] = len(self._names)
            self._names.append(name)
        return self._ids[name]

    def id(self, name: str) -> int:
        return self._ids[name]

    def name(self, i: int) -> str:
        return self._names[i]

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def names(self) -> list[str]:
        return list(self._names)


# === tokenizer ===============================================================

RESERVED = {"top", "bot", "not", "exists", "inv", "tbox", "abox", "circ",
            "query", "minimize", "fix", "prefer"}

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<subsume>\[=)
  | (?P<var>\?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(){},.&|<:])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str   # 'name' | 'var' | 'op'
    value: str
    line: int
    col: int


def _tokenize_line(text: str, line_no: int) -> list[Token]:
    out: list[Token] = []
    pos = 0
    while pos < len(text):
        if text[pos] == "#":
            break
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line_no, pos + 1)
        if m.lastgroup == "ws":
            pos = m.end()
            continue
        kind = {"subsume": "op", "punct": "op", "name": "name", "var": "var"}[m.lastgroup]
        out.append(Token(kind, m.group(), line_no, pos + 1))
        pos = m.end()
    return out


# === parser ==================================================================

class _TokenStream:
    def __init__(self, tokens: list[Token], line_no: int):
        self.toks = tokens
        self.pos = 0
        self.line_no = line_no

    def peek(self) -> Token | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def next(self) -> Token:
        t = self.peek()
        if t is None:
            raise ParseError("unexpected end of line", self.line_no)
        self.pos += 1
        return t

    def expect(self, value: str) -> Token:
        t = self.peek()
        if t is None or t.value != value:
            got = t.value if t else "end of line"
            raise ParseError(f"expected {value!r}, got {got!r}", self.line_no,
                             t.col if t else None)
        return self.next()

    def done(self) -> bool:
        return self.pos >= len(self.toks)


class _Parser:
    def __init__(self, text: str):
        self.allow_internal = False
        self.lines = text.splitlines()
        self.tbox: list[Axiom] = []
        self.abox: list[Assertion] = []
        self.minimized: list[str] = []
        self.fixed: list[str] = []
        self.prefer: list[tuple[str, str]] = []
        self.queries: dict[str, Query] = {}
        self._circ_line: int | None = None

    # --- name category helpers ---

    def _check_concept_name(self, tok: Token):
        if tok.kind != "name":
            raise ParseError(f"expected a concept name, got {tok.value!r}", tok.line, tok.col)
        if tok.value in RESERVED:
            raise ParseError(f"{tok.value!r} is a reserved word", tok.line, tok.col)
        if tok.value[0] == "_":
            if not self.allow_internal:
                raise ParseError("names starting with '_' are reserved for internal use",
                                 tok.line, tok.col)
        elif not tok.value[0].isupper():
            raise ParseError(f"concept names start with an uppercase letter: {tok.value!r}",
                             tok.line, tok.col)

    def _check_lower_name(self, tok: Token, what: str):
        if tok.kind != "name":
            raise ParseError(f"expected {what}, got {tok.value!r}", tok.line, tok.col)
        if tok.value in RESERVED:
            raise ParseError(f"{tok.value!r} is a reserved word", tok.line, tok.col)
        if not tok.value[0].islower():
            raise ParseError(f"{what}s start with a lowercase letter: {tok.value!r}",
                             tok.line, tok.col)

    # --- concept grammar ---

    def _parse_role(self, ts: _TokenStream) -> Role:
        t = ts.peek()
        if t is not None and t.value == "inv":
            ts.next()
            ts.expect("(")
            n = ts.next()
            self._check_lower_name(n, "role name")
            ts.expect(")")
            return Role(n.value, True)
        n = ts.next()
        self._check_lower_name(n, "role name")
        return Role(n.value, False)

    def _parse_concept(self, ts: _TokenStream) -> Concept:
        return self._parse_or(ts)

    def _parse_or(self, ts: _TokenStream) -> Concept:
        left = self._parse_and(ts)
        while (t := ts.peek()) is not None and t.value == "|":
            ts.next()
            left = Or(left, self._parse_and(ts))
        return left

    def _parse_and(self, ts: _TokenStream) -> Concept:
        left = self._parse_unary(ts)
        while (t := ts.peek()) is not None and t.value == "&":
            ts.next()
            left = And(left, self._parse_unary(ts))
        return left

    def _parse_unary(self, ts: _TokenStream) -> Concept:
        t = ts.peek()
        if t is None:
            raise ParseError("expected a concept", ts.line_no)
        if t.value == "not":
            ts.next()
            return Not(self._parse_unary(ts))
        if t.value == "exists":
            ts.next()
            role = self._parse_role(ts)
            nxt = ts.peek()
            if nxt is not None and nxt.value == ".":
                ts.next()
                return Exists(role, self._parse_unary(ts))
            return Exists(role, Top())
        return self._parse_atom(ts)

    def _parse_atom(self, ts: _TokenStream) -> Concept:
        t = ts.next()
        if t.value == "(":
            c = self._parse_or(ts)
            ts.expect(")")
            return c
        if t.value == "{":
            n = ts.next()
            self._check_lower_name(n, "individual name")
            ts.expect("}")
            return Nominal(n.value)
        if t.value == "top":
            return Top()
        if t.value == "bot":
            return Bot()
        self._check_concept_name(t)
        return Name(t.value)

    # --- statement dispatch ---

    def _looks_like_role_axiom(self, toks: list[Token]) -> bool:
        # lhs [= [not] rhs where both sides are role expressions
        def is_role_expr(seq: list[Token]) -> bool:
            if len(seq) == 1:
                return (seq[0].kind == "name" and seq[0].value not in RESERVED
                        and seq[0].value[0].islower())
            if len(seq) == 4:
                return (seq[0].value == "inv" and seq[1].value == "("
                        and seq[2].kind == "name" and seq[3].value == ")")
            return False

        try:
            i = [t.value for t in toks].index("[=")
        except ValueError:
            return False
        lhs, rhs = toks[:i], toks[i + 1:]
        if rhs and rhs[0].value == "not":
            rhs = rhs[1:]
        return is_role_expr(lhs) and is_role_expr(rhs)

    def _parse_tbox_line(self, toks: list[Token], line_no: int):
        values = [t.value for t in toks]
        if "[=" not in values:
            raise ParseError("expected '[=' in axiom", line_no,
                             toks[0].col if toks else None)
        if self._looks_like_role_axiom(toks):
            ts = _TokenStream(toks, line_no)
            sub = self._parse_role(ts)
            ts.expect("[=")
            neg = False
            t = ts.peek()
            if t is not None and t.value == "not":
                ts.next()
                neg = True
            sup = self._parse_role(ts)
            if not ts.done():
                bad = ts.peek()
                raise ParseError(f"unexpected {bad.value!r} after role axiom",
                                 line_no, bad.col)
            self.tbox.append(NegRI(sub, sup) if neg else RI(sub, sup))
            return
        ts = _TokenStream(toks, line_no)
        lhs = self._parse_concept(ts)
        ts.expect("[=")
        rhs = self._parse_concept(ts)
        if not ts.done():
            bad = ts.peek()
            raise ParseError(f"unexpected {bad.value!r} after axiom", line_no, bad.col)
        self.tbox.append(CI(lhs, rhs))

    def _parse_abox_line(self, toks: list[Token], line_no: int):
        ts = _TokenStream(toks, line_no)
        head = ts.next()
        if head.kind != "name" or head.value in RESERVED:
            raise ParseError(f"expected an assertion, got {head.value!r}", line_no, head.col)
        ts.expect("(")
        args: list[Token] = []
        args.append(ts.next())
        while (t := ts.peek()) is not None and t.value == ",":
            ts.next()
            args.append(ts.next())
        ts.expect(")")
        if not ts.done():
            bad = ts.peek()
            raise ParseError(f"unexpected {bad.value!r} after assertion", line_no, bad.col)
        for a in args:
            self._check_lower_name(a, "individual name")
        if head.value[0].isupper() or head.value[0] == "_":
            self._check_concept_name(head)
            if len(args) != 1:
                raise ParseError(f"concept assertion {head.value} takes one individual",
                                 line_no, head.col)
            self.abox.append(ConceptAssertion(head.value, args[0].value))
        else:
            if len(args) != 2:
                raise ParseError(f"role assertion {head.value} takes two individuals",
                                 line_no, head.col)
            self.abox.append(RoleAssertion(head.value, args[0].value, args[1].value))

    def _parse_circ_line(self, toks: list[Token], line_no: int):
        self._circ_line = line_no
        ts = _TokenStream(toks, line_no)
        head = ts.next()
        if head.value == "minimize" or head.value == "fix":
            names: list[str] = []
            while True:
                t = ts.next()
                self._check_concept_name(t)
                names.append(t.value)
                if ts.done():
                    break
                ts.expect(",")
            (self.minimized if head.value == "minimize" else self.fixed).extend(names)
        elif head.value == "prefer":
            a = ts.next()
            self._check_concept_name(a)
            ts.expect("<")
            b = ts.next()
            self._check_concept_name(b)
            if not ts.done():
                bad = ts.peek()
                raise ParseError(f"unexpected {bad.value!r} after preference", line_no, bad.col)
            self.prefer.append((a.value, b.value))
        else:
            raise ParseError(
                f"expected minimize/fix/prefer, got {head.value!r}", line_no, head.col)

    def _parse_term(self, ts: _TokenStream) -> Term:
        t = ts.next()
        if t.kind == "var":
            return Var(t.value[1:])
        self._check_lower_name(t, "individual name")
        return Const(t.value)

    def _parse_query_line(self, toks: list[Token], line_no: int) -> list[list[Atom]]:
        disjuncts: list[list[Atom]] = []
        current: list[Atom] = []
        ts = _TokenStream(toks, line_no)
        while not ts.done():
            head = ts.next()
            if head.kind != "name" or head.value in RESERVED:
                raise ParseError(f"expected a query atom, got {head.value!r}",
                                 line_no, head.col)
            ts.expect("(")
            terms = [self._parse_term(ts)]
            while (t := ts.peek()) is not None and t.value == ",":
                ts.next()
                terms.append(self._parse_term(ts))
            ts.expect(")")
            if head.value[0].isupper() or head.value[0] == "_":
                self._check_concept_name(head)
                if len(terms) != 1:
                    raise ParseError(f"concept atom {head.value} takes one term",
                                     line_no, head.col)
                current.append(ConceptAtom(head.value, terms[0]))
            else:
                if len(terms) != 2:
                    raise ParseError(f"role atom {head.value} takes two terms",
                                     line_no, head.col)
                current.append(RoleAtom(head.value, terms[0], terms[1]))
            if ts.done():
                break
            sep = ts.next()
            if sep.value == "&":
                continue
            if sep.value == "|":
                disjuncts.append(current)
                current = []
                continue
            raise ParseError(f"expected '&' or '|', got {sep.value!r}", line_no, sep.col)
        if current:
            disjuncts.append(current)
        if not disjuncts:
            raise ParseError("empty query line", line_no)
        for d in disjuncts:
            if not d:
                raise ParseError("empty query disjunct", line_no)
        return disjuncts

    # --- document ---

    def parse(self) -> KnowledgeBase:
        for raw in self.lines:
            m = re.match(r"^\s*#!\s*(.+?)\s*$", raw)
            if m:
                if m.group(1) == "allow-internal-names":
                    self.allow_internal = True
                else:
                    raise ParseError(f"unknown pragma {m.group(1)!r}")

        mode: str | None = None
        query_head: tuple[str, tuple[str, ...], int] | None = None
        query_body: list[list[Atom]] = []

        def flush_query():
            nonlocal query_head, query_body
            if query_head is None:
                return
            qname, qvars, qline = query_head
            if not query_body:
                raise ParseError(f"query {qname} has no body", qline)
            try:
                q = Query(qname, qvars, tuple(tuple(d) for d in query_body))
            except CkbError as e:
                raise ParseError(e.message, qline) from None
            self.queries[qname] = q
            query_head = None
            query_body = []

        for idx, raw in enumerate(self.lines, start=1):
            if re.match(r"^\s*#!", raw):
                continue
            toks = _tokenize_line(raw, idx)
            if not toks:
                continue
            values = [t.value for t in toks]
            if values[0] in ("tbox", "abox", "circ"):
                if len(values) != 2 or values[1] != ":":
                    raise ParseError(f"malformed section header {values[0]!r}", idx,
                                     toks[0].col)
                flush_query()
                mode = values[0]
                continue
            if values[0] == "query":
                flush_query()
                ts = _TokenStream(toks, idx)
                ts.next()
                nametok = ts.next()
                self._check_lower_name(nametok, "query name")
                if nametok.value in self.queries:
                    raise ParseError(f"duplicate query name {nametok.value!r}", idx,
                                     nametok.col)
                ts.expect("(")
                qvars: list[str] = []
                t = ts.peek()
                if t is not None and t.value != ")":
                    while True:
                        vt = ts.next()
                        if vt.kind != "var":
                            raise ParseError("answer variables are written ?name", idx, vt.col)
                        if vt.value[1:] in qvars:
                            raise ParseError(f"duplicate answer variable {vt.value}", idx,
                                             vt.col)
                        qvars.append(vt.value[1:])
                        if ts.peek() is not None and ts.peek().value == ",":
                            ts.next()
                            continue
                        break
                ts.expect(")")
                ts.expect(":")
                if not ts.done():
                    bad = ts.peek()
                    raise ParseError(f"unexpected {bad.value!r} after query header", idx,
                                     bad.col)
                mode = "query"
                query_head = (nametok.value, tuple(qvars), idx)
                continue
            if mode == "tbox":
                self._parse_tbox_line(toks, idx)
            elif mode == "abox":
                self._parse_abox_line(toks, idx)
            elif mode == "circ":
                self._parse_circ_line(toks, idx)
            elif mode == "query":
                query_body.extend(self._parse_query_line(toks, idx))
            else:
                raise ParseError("statement outside any section", idx, toks[0].col)
        flush_query()

        circ = CircPattern.build(tuple(self.minimized), tuple(self.fixed),
                                 tuple(self.prefer), self._circ_line)
        return KnowledgeBase(tuple(self.tbox), tuple(self.abox), circ, self.queries)


def parse_kb(text: str) -> KnowledgeBase:
    """Parse a knowledge-base document."""
    return _Parser(text).parse()


# === serializer ==============================================================

def serialize(kb: KnowledgeBase) -> str:
    """Render a document that parses back to an equal knowledge base."""
    names = set(kb.concept_names())
    internal = any(n.startswith("_") for n in names)
    out: list[str] = []
    if internal:
        out.append("#! allow-internal-names")
    if kb.tbox:
        out.append("tbox:")
        for ax in kb.tbox:
            out.append(f"  {ax}")
    if kb.abox:
        out.append("abox:")
        for a in kb.abox:
            out.append(f"  {a}")
    if kb.circ.minimized or kb.circ.fixed or kb.circ.prefer:
        out.append("circ:")
        if kb.circ.minimized:
            out.append("  minimize " + ", ".join(kb.circ.minimized))
        if kb.circ.fixed:
            out.append("  fix " + ", ".join(sorted(kb.circ.fixed)))
        for a, b in sorted(kb.circ.prefer):
            out.append(f"  prefer {a} < {b}")
    for q in kb.queries.values():
        head = ", ".join("?" + v for v in q.answer_vars)
        out.append(f"query {q.name}({head}):")
        for d in q.disjuncts:
            out.append("  " + " & ".join(str(a) for a in d))
    return "\n".join(out) + "\n"


# === dialect detection =======================================================

@dataclass(frozen=True)
class DialectInfo:
    base: str   # dllite_core | dllite_horn | dllite_bool | el | alchi | alchio
    role_inclusions: bool = False
    negative_role_inclusions: bool = False

    def tag(self) -> str:
        t = self.base
        if self.role_inclusions:
            t += "^H"
        if self.negative_role_inclusions:
            t += "+negri"
        return t


def _is_basic(c: Concept) -> bool:
    return isinstance(c, Name) or (isinstance(c, Exists) and c.filler == Top())


def _is_conj_basic(c: Concept) -> bool:
    if _is_basic(c):
        return True
    return isinstance(c, And) and _is_conj_basic(c.left) and _is_conj_basic(c.right)


def _is_bool_basic(c: Concept) -> bool:
    if _is_basic(c):
        return True
    if isinstance(c, Not):
        return _is_bool_basic(c.arg)
    if isinstance(c, (And, Or)):
        return _is_bool_basic(c.left) and _is_bool_basic(c.right)
    return False


def _is_el(c: Concept) -> bool:
    if isinstance(c, (Top, Name)):
        return True
    if isinstance(c, And):
        return _is_el(c.left) and _is_el(c.right)
    if isinstance(c, Exists):
        return not c.role.inverted and _is_el(c.filler)
    return False


def detect_dialect(kb: KnowledgeBase) -> DialectInfo:
    """Most specific dialect the TBox fits."""
    cis = [ax for ax in kb.tbox if isinstance(ax, CI)]
    has_ri = any(isinstance(ax, RI) for ax in kb.tbox)
    has_negri = any(isinstance(ax, NegRI) for ax in kb.tbox)
    has_nom = kb.has_nominals()

    if not has_nom:
        def core_ci(ci: CI) -> bool:
            rhs_ok = _is_basic(ci.rhs) or (isinstance(ci.rhs, Not) and _is_basic(ci.rhs.arg))
            return _is_basic(ci.lhs) and rhs_ok

        def horn_ci(ci: CI) -> bool:
            rhs_ok = _is_basic(ci.rhs) or (isinstance(ci.rhs, Not) and _is_basic(ci.rhs.arg))
            return _is_conj_basic(ci.lhs) and rhs_ok

        def bool_ci(ci: CI) -> bool:
            return _is_bool_basic(ci.lhs) and _is_bool_basic(ci.rhs)

        if all(core_ci(ci) for ci in cis):
            return DialectInfo("dllite_core", has_ri, has_negri)
        if all(horn_ci(ci) for ci in cis):
            return DialectInfo("dllite_horn", has_ri, has_negri)
        if all(bool_ci(ci) for ci in cis):
            return DialectInfo("dllite_bool", has_ri, has_negri)
        if not has_ri and not has_negri and all(
                _is_el(ci.lhs) and _is_el(ci.rhs) for ci in cis):
            return DialectInfo("el", False, False)
        return DialectInfo("alchi", has_ri, has_negri)
    return DialectInfo("alchio", has_ri, has_negri)


# === normalization ===========================================================

TOP_NAME = "_TT"
BOT_NAME = "_BOT"


@dataclass(frozen=True)
class NTop:
    a: str              # top [= a


@dataclass(frozen=True)
class NSubEx:
    a: str
    role: Role
    b: str              # a [= exists role . b


@dataclass(frozen=True)
class NExSub:
    role: Role
    b: str
    a: str              # exists role . b [= a


@dataclass(frozen=True)
class NAndSub:
    a1: str
    a2: str
    b: str              # a1 & a2 [= b


@dataclass(frozen=True)
class NSubNeg:
    a: str
    b: str              # a [= not b


@dataclass(frozen=True)
class NNegSub:
    b: str
    a: str              # not b [= a


NormalCI = NTop | NSubEx | NExSub | NAndSub | NSubNeg | NNegSub


def _shape_to_axiom(s: NormalCI) -> CI:
    if isinstance(s, NTop):
        return CI(Top(), Name(s.a))
    if isinstance(s, NSubEx):
        return CI(Name(s.a), Exists(s.role, Name(s.b)))
    if isinstance(s, NExSub):
        return CI(Exists(s.role, Name(s.b)), Name(s.a))
    if isinstance(s, NAndSub):
        return CI(And(Name(s.a1), Name(s.a2)), Name(s.b))
    if isinstance(s, NSubNeg):
        return CI(Name(s.a), Not(Name(s.b)))
    return CI(Not(Name(s.b)), Name(s.a))


@dataclass
class NormalizedTBox:
    """TBox restricted to six CI shapes plus role inclusions.  `fresh` maps
    introduced names to a description of what they stand for; `universal`
    lists names asserted to cover the whole domain (usable as existential
    fillers that never constrain witnesses)."""
    shapes: tuple[NormalCI, ...]
    ris: tuple[RI, ...]
    fresh: dict[str, str]

    def as_axioms(self) -> tuple[Axiom, ...]:
        return tuple(_shape_to_axiom(s) for s in self.shapes) + self.ris

    def concept_names(self) -> list[str]:
        out: list[str] = []

        def add(x: str):
            if x not in out:
                out.append(x)

        for s in self.shapes:
            if isinstance(s, NTop):
                add(s.a)
            elif isinstance(s, (NSubEx, NExSub)):
                add(s.a)
                add(s.b)
            elif isinstance(s, NAndSub):
                add(s.a1)
                add(s.a2)
                add(s.b)
            else:
                add(s.a)
                add(s.b)
        return out

    def universal_names(self) -> set[str]:
        return {s.a for s in self.shapes if isinstance(s, NTop)}

    def role_names(self) -> list[str]:
        out: list[str] = []
        for s in self.shapes:
            if isinstance(s, (NSubEx, NExSub)) and s.role.name not in out:
                out.append(s.role.name)
        for ri in self.ris:
            for n in (ri.sub.name, ri.sup.name):
                if n not in out:
                    out.append(n)
        return out


class _Normalizer:
    def __init__(self):
        self.shapes: list[NormalCI] = []
        self._seen: set[NormalCI] = set()
        self.fresh: dict[str, str] = {}
        self._memo: dict[tuple[str, Concept], str] = {}
        self._counter = 0

    def emit(self, s: NormalCI):
        if s not in self._seen:
            self._seen.add(s)
            self.shapes.append(s)

    def fresh_name(self, what: str) -> str:
        n = f"_N{self._counter}"
        self._counter += 1
        self.fresh[n] = what
        return n

    def top(self) -> str:
        if TOP_NAME not in self.fresh:
            self.fresh[TOP_NAME] = "top"
            self.emit(NTop(TOP_NAME))
        return TOP_NAME

    def bot(self) -> str:
        if BOT_NAME not in self.fresh:
            self.fresh[BOT_NAME] = "bot"
            self.emit(NSubNeg(BOT_NAME, self.top()))
        return BOT_NAME

    def enc(self, c: Concept, pol: str) -> str:
        """Name n with n [= c (pol='pos') or c [= n (pol='neg')."""
        if isinstance(c, Name):
            return c.name
        if isinstance(c, Top):
            return self.top()
        if isinstance(c, Bot):
            return self.bot()
        if isinstance(c, Nominal):
            raise NormalizationError("normalization requires a nominal-free TBox")
        key = (pol, c)
        if key in self._memo:
            return self._memo[key]
        n = self.fresh_name(f"{pol} {c}")
        self._memo[key] = n
        if isinstance(c, Not):
            if pol == "pos":
                self.emit(NSubNeg(n, self.enc(c.arg, "neg")))
            else:
                self.emit(NNegSub(self.enc(c.arg, "pos"), n))
        elif isinstance(c, And):
            if pol == "pos":
                self.emit(NAndSub(n, n, self.enc(c.left, "pos")))
                self.emit(NAndSub(n, n, self.enc(c.right, "pos")))
            else:
                self.emit(NAndSub(self.enc(c.left, "neg"), self.enc(c.right, "neg"), n))
        elif isinstance(c, Or):
            if pol == "pos":
                pl = self.enc(c.left, "pos")
                pr = self.enc(c.right, "pos")
                nn = self.fresh_name(f"pos complement of {c.left}")
                self.emit(NNegSub(pl, nn))
                self.emit(NAndSub(n, nn, pr))
            else:
                self.emit(NAndSub(self.enc(c.left, "neg"), self.enc(c.left, "neg"), n))
                self.emit(NAndSub(self.enc(c.right, "neg"), self.enc(c.right, "neg"), n))
        elif isinstance(c, Exists):
            if pol == "pos":
                self.emit(NSubEx(n, c.role, self.enc(c.filler, "pos")))
            else:
                self.emit(NExSub(c.role, self.enc(c.filler, "neg"), n))
        else:
            raise NormalizationError(f"cannot normalize concept {c}")
        return n

    def add_ci(self, ci: CI):
        lhs, rhs = ci.lhs, ci.rhs
        # direct shapes first, to keep the output small
        if isinstance(lhs, Top) and isinstance(rhs, Name):
            self.emit(NTop(rhs.name))
            return
        if isinstance(lhs, Name) and isinstance(rhs, Name):
            self.emit(NAndSub(lhs.name, lhs.name, rhs.name))
            return
        if isinstance(lhs, Name) and isinstance(rhs, Exists):
            f = rhs.filler
            if isinstance(f, (Name, Top)):
                b = f.name if isinstance(f, Name) else self.top()
                self.emit(NSubEx(lhs.name, rhs.role, b))
                return
        if isinstance(lhs, Exists) and isinstance(rhs, Name):
            f = lhs.filler
            if isinstance(f, (Name, Top)):
                b = f.name if isinstance(f, Name) else self.top()
                self.emit(NExSub(lhs.role, b, rhs.name))
                return
        if (isinstance(lhs, And) and isinstance(lhs.left, Name)
                and isinstance(lhs.right, Name) and isinstance(rhs, Name)):
            self.emit(NAndSub(lhs.left.name, lhs.right.name, rhs.name))
            return
        if (isinstance(lhs, Name) and isinstance(rhs, Not)
                and isinstance(rhs.arg, Name)):
            self.emit(NSubNeg(lhs.name, rhs.arg.name))
            return
        if (isinstance(lhs, Not) and isinstance(lhs.arg, Name)
                and isinstance(rhs, Name)):
            self.emit(NNegSub(lhs.arg.name, rhs.name))
            return
        l = lhs.name if isinstance(lhs, Name) else self.enc(lhs, "neg")
        r = rhs.name if isinstance(rhs, Name) else self.enc(rhs, "pos")
        self.emit(NAndSub(l, l, r))


def normalize_tbox(tbox: tuple[Axiom, ...]) -> NormalizedTBox:
    """Rewrite a nominal-free TBox without negative role inclusions into the
    six normal CI shapes plus role inclusions.  Conservative: models of the
    output restricted to the input signature are exactly the models of the
    input, over the same domain."""
    nz = _Normalizer()
    ris: list[RI] = []
    for ax in tbox:
        if isinstance(ax, NegRI):
            raise NormalizationError("normalization does not cover negative role inclusions")
        if isinstance(ax, RI):
            ris.append(ax)
        else:
            if nominals_in(ax.lhs) or nominals_in(ax.rhs):
                raise NormalizationError("normalization requires a nominal-free TBox")
            nz.add_ci(ax)
    return NormalizedTBox(tuple(nz.shapes), tuple(ris), nz.fresh)


def normalize_kb(kb: KnowledgeBase) -> tuple[KnowledgeBase, NormalizedTBox]:
    nt = normalize_tbox(kb.tbox)
    return KnowledgeBase(nt.as_axioms(), kb.abox, kb.circ, kb.queries), nt


def is_normalized(tbox: tuple[Axiom, ...]) -> bool:
    try:
        nt = normalize_tbox(tbox)
    except NormalizationError:
        return False
    return len(nt.fresh) == 0 or set(nt.fresh) <= {TOP_NAME, BOT_NAME}


# === nominal elimination =====================================================

QUERY_TOP_NAME = "_QT"


@dataclass
class NominalElimination:
    """Record of the rewriting: per eliminated individual, the three
    introduced names (marker, guard, violation-flag)."""
    per_individual: dict[str, tuple[str, str, str]]
    query_top: str | None


def _replace_nominals(c: Concept, repl: dict[str, str]) -> Concept:
    if isinstance(c, Nominal):
        return Name(repl[c.individual])
    if isinstance(c, Not):
        return Not(_replace_nominals(c.arg, repl))
    if isinstance(c, And):
        return And(_replace_nominals(c.left, repl), _replace_nominals(c.right, repl))
    if isinstance(c, Or):
        return Or(_replace_nominals(c.left, repl), _replace_nominals(c.right, repl))
    if isinstance(c, Exists):
        return Exists(c.role, _replace_nominals(c.filler, repl))
    return c


def eliminate_nominals(kb: KnowledgeBase) -> tuple[KnowledgeBase, NominalElimination]:
    """Rewrite away nominals: each {a} becomes a marker name asserted at a,
    guarded by a name minimized at the highest priority; a violation-flag name
    extends every query so that entailment is preserved."""
    inds: list[str] = []
    for ax in kb.tbox:
        if isinstance(ax, CI):
            for x in sorted(nominals_in(ax.lhs) | nominals_in(ax.rhs)):
                if x not in inds:
                    inds.append(x)
    if not inds:
        return kb, NominalElimination({}, None)

    marker = {a: f"_A_{a}" for a in inds}
    guard = {a: f"_B_{a}" for a in inds}
    flag = {a: f"_D_{a}" for a in inds}

    tbox: list[Axiom] = []
    for ax in kb.tbox:
        if isinstance(ax, CI):
            tbox.append(CI(_replace_nominals(ax.lhs, marker),
                           _replace_nominals(ax.rhs, marker)))
        else:
            tbox.append(ax)
    for a in inds:
        tbox.append(CI(And(Name(marker[a]), Not(Name(guard[a]))), Name(flag[a])))

    abox = list(kb.abox)
    for a in inds:
        abox.append(ConceptAssertion(marker[a], a))
        abox.append(ConceptAssertion(guard[a], a))

    need_query_top = any(q.answer_vars for q in kb.queries.values())
    if need_query_top:
        tbox.append(CI(Top(), Name(QUERY_TOP_NAME)))

    queries: dict[str, Query] = {}
    for q in kb.queries.values():
        used = q.variables()
        y = "y_flag"
        k = 0
        while y in used:
            y = f"y_flag{k}"
            k += 1
        extra = []
        for a in inds:
            atoms: list[Atom] = [ConceptAtom(flag[a], Var(y))]
            for v in q.answer_vars:
                atoms.append(ConceptAtom(QUERY_TOP_NAME, Var(v)))
            extra.append(tuple(atoms))
        queries[q.name] = Query(q.name, q.answer_vars, q.disjuncts + tuple(extra))

    minimized = tuple(guard[a] for a in inds) + kb.circ.minimized
    prefer = set(kb.circ.prefer)
    for a in inds:
        for m in kb.circ.minimized:
            prefer.add((guard[a], m))
    circ = CircPattern.build(minimized, tuple(sorted(kb.circ.fixed)),
                             tuple(sorted(prefer)))
    new_kb = KnowledgeBase(tuple(tbox), tuple(abox), circ, queries)
    info = NominalElimination(
        {a: (marker[a], guard[a], flag[a]) for a in inds},
        QUERY_TOP_NAME if need_query_top else None)
    return new_kb, info
