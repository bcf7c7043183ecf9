"""Finite interpretations: model checking, role hierarchies, query matching,
and JSON certificates."""
from __future__ import annotations

from dataclasses import dataclass, field

from .syntax import (
    CI, RI, NegRI, Axiom, Assertion, ConceptAssertion, RoleAssertion,
    Concept, Top, Bot, Name, Nominal, Not, And, Or, Exists, Role,
    KnowledgeBase, Query, Atom, ConceptAtom, RoleAtom, Var, Const, CkbError,
)


class CertificateError(CkbError):
    pass


# === interpretations =========================================================

@dataclass
class Interpretation:
    """Finite interpretation over domain {0, ..., n-1}.  Concept extensions
    are bitmasks; role extensions are sets of ordered pairs.  Named
    individuals map to pairwise distinct elements."""
    n: int
    named: dict[str, int] = field(default_factory=dict)
    concepts: dict[str, int] = field(default_factory=dict)
    roles: dict[str, set[tuple[int, int]]] = field(default_factory=dict)

    def full(self) -> int:
        return (1 << self.n) - 1

    def mask(self, name: str) -> int:
        return self.concepts.get(name, 0)

    def has(self, name: str, d: int) -> bool:
        return bool(self.concepts.get(name, 0) >> d & 1)

    def pairs(self, role: Role) -> set[tuple[int, int]]:
        base = self.roles.get(role.name, set())
        if role.inverted:
            return {(e, d) for (d, e) in base}
        return set(base)

    def element_name(self, d: int) -> str:
        for k, v in self.named.items():
            if v == d:
                return k
        return f"#{d}"

    def copy(self) -> Interpretation:
        return Interpretation(
            self.n, dict(self.named),
            dict(self.concepts),
            {r: set(p) for r, p in self.roles.items()})

    def canonical_key(self):
        return (
            self.n,
            tuple(sorted(self.named.items())),
            tuple(sorted((c, m) for c, m in self.concepts.items() if m)),
            tuple(sorted((r, tuple(sorted(p))) for r, p in self.roles.items() if p)),
        )


def extension(c: Concept, I: Interpretation) -> int:
    """Bitmask of elements satisfying the concept."""
    if isinstance(c, Top):
        return I.full()
    if isinstance(c, Bot):
        return 0
    if isinstance(c, Name):
        return I.mask(c.name)
    if isinstance(c, Nominal):
        if c.individual not in I.named:
            raise CkbError(f"nominal individual {c.individual} is not named in the "
                           "interpretation")
        return 1 << I.named[c.individual]
    if isinstance(c, Not):
        return I.full() & ~extension(c.arg, I)
    if isinstance(c, And):
        return extension(c.left, I) & extension(c.right, I)
    if isinstance(c, Or):
        return extension(c.left, I) | extension(c.right, I)
    if isinstance(c, Exists):
        fm = extension(c.filler, I)
        out = 0
        for (d, e) in I.pairs(c.role):
            if fm >> e & 1:
                out |= 1 << d
        return out
    raise CkbError(f"cannot evaluate concept {c}")


# === model checking ==========================================================

@dataclass
class ModelCheck:
    ok: bool
    violations: list[str] = field(default_factory=list)


def is_model(I: Interpretation, kb: KnowledgeBase) -> ModelCheck:
    """Check every assertion and axiom; collect human-readable violations."""
    v: list[str] = []
    inds = kb.individuals()
    seen_ids: dict[int, str] = {}
    for a in inds:
        if a not in I.named:
            v.append(f"individual {a} has no element")
            continue
        d = I.named[a]
        if not (0 <= d < I.n):
            v.append(f"individual {a} maps outside the domain")
        elif d in seen_ids:
            v.append(f"individuals {seen_ids[d]} and {a} share an element")
        else:
            seen_ids[d] = a
    if v:
        return ModelCheck(False, v)

    for a in kb.abox:
        if isinstance(a, ConceptAssertion):
            if not I.has(a.concept, I.named[a.individual]):
                v.append(f"assertion {a} fails")
        else:
            pair = (I.named[a.subject], I.named[a.object])
            if pair not in I.roles.get(a.role, set()):
                v.append(f"assertion {a} fails")
    for ax in kb.tbox:
        if isinstance(ax, CI):
            bad = extension(ax.lhs, I) & ~extension(ax.rhs, I)
            if bad:
                d = (bad & -bad).bit_length() - 1
                v.append(f"axiom {ax} fails at {I.element_name(d)}")
        elif isinstance(ax, RI):
            missing = I.pairs(ax.sub) - I.pairs(ax.sup)
            if missing:
                d, e = sorted(missing)[0]
                v.append(f"axiom {ax} fails at ({I.element_name(d)}, {I.element_name(e)})")
        else:
            shared = I.pairs(ax.sub) & I.pairs(ax.sup)
            if shared:
                d, e = sorted(shared)[0]
                v.append(f"axiom {ax} fails at ({I.element_name(d)}, {I.element_name(e)})")
    return ModelCheck(not v, v)


# === role hierarchy ==========================================================

class RoleHierarchy:
    """Reflexive-transitive closure of the role inclusions, closed under
    inversion."""

    def __init__(self, tbox: tuple[Axiom, ...]):
        edges: dict[Role, set[Role]] = {}
        for ax in tbox:
            if isinstance(ax, RI):
                for sub, sup in ((ax.sub, ax.sup),
                                 (ax.sub.inverse(), ax.sup.inverse())):
                    edges.setdefault(sub, set()).add(sup)
        self._edges = edges
        self._supers: dict[Role, frozenset[Role]] = {}

    def supers(self, r: Role) -> frozenset[Role]:
        if r in self._supers:
            return self._supers[r]
        out = {r}
        frontier = [r]
        while frontier:
            x = frontier.pop()
            for y in self._edges.get(x, ()):
                if y not in out:
                    out.add(y)
                    frontier.append(y)
        res = frozenset(out)
        self._supers[r] = res
        return res

    def entails(self, sub: Role, sup: Role) -> bool:
        return sup in self.supers(sub)


# === query matching ==========================================================

def _atom_candidates(atom: Atom, I: Interpretation, binding: dict[str, int]):
    """List of variable assignments extending the binding to this atom's
    unbound variables, or None/[] semantics: returns (cost, extensions)."""
    def term_val(t):
        if isinstance(t, Const):
            if t.name not in I.named:
                raise CkbError(f"query constant {t.name} is not named in the interpretation")
            return I.named[t.name]
        return binding.get(t.name)

    if isinstance(atom, ConceptAtom):
        val = term_val(atom.term)
        mask = I.mask(atom.concept)
        if val is not None:
            return [{}] if (mask >> val & 1) else []
        var = atom.term.name
        return [{var: d} for d in range(I.n) if mask >> d & 1]

    sv = term_val(atom.subject)
    ov = term_val(atom.object)
    pairs = I.pairs(Role(atom.role))
    if sv is not None and ov is not None:
        return [{}] if (sv, ov) in pairs else []
    if sv is not None:
        var = atom.object.name
        return [{var: e} for (d, e) in sorted(pairs) if d == sv]
    if ov is not None:
        var = atom.subject.name
        return [{var: d} for (d, e) in sorted(pairs) if e == ov]
    vs, vo = atom.subject.name, atom.object.name
    if vs == vo:
        return [{vs: d} for (d, e) in sorted(pairs) if d == e]
    return [{vs: d, vo: e} for (d, e) in sorted(pairs)]


def _match_atoms(atoms: list[Atom], I: Interpretation, binding: dict[str, int]) -> dict[str, int] | None:
    if not atoms:
        return dict(binding)
    best_i, best_ext = None, None
    for i, a in enumerate(atoms):
        ext = _atom_candidates(a, I, binding)
        if best_ext is None or len(ext) < len(best_ext):
            best_i, best_ext = i, ext
            if not ext:
                return None
    rest = atoms[:best_i] + atoms[best_i + 1:]
    for ext in best_ext:
        binding.update(ext)
        res = _match_atoms(rest, I, binding)
        if res is not None:
            return res
        for k in ext:
            del binding[k]
    return None


def match_exists(I: Interpretation, query: Query, answers: tuple[int, ...] = ()) -> dict[str, int] | None:
    """A satisfying assignment for some disjunct, with answer variables bound
    to the given elements; None when the query has no match."""
    if len(answers) != len(query.answer_vars):
        raise CkbError(f"query {query.name} expects {len(query.answer_vars)} answers, "
                       f"got {len(answers)}")
    base = dict(zip(query.answer_vars, answers))
    for d in query.disjuncts:
        got = _match_atoms(list(d), I, dict(base))
        if got is not None:
            return got
    return None


def find_answers(I: Interpretation, query: Query) -> set[tuple[str, ...]]:
    """Answer tuples over named individuals (existential variables range over
    the whole domain)."""
    names = sorted(I.named)
    out: set[tuple[str, ...]] = set()

    def rec(idx: int, chosen: list[str]):
        if idx == len(query.answer_vars):
            elems = tuple(I.named[x] for x in chosen)
            if match_exists(I, query, elems) is not None:
                out.add(tuple(chosen))
            return
        for x in names:
            chosen.append(x)
            rec(idx + 1, chosen)
            chosen.pop()

    rec(0, [])
    return out


# === restriction =============================================================

def restrict(I: Interpretation, elems: set[int]) -> tuple[Interpretation, dict[int, int]]:
    """Induced sub-interpretation on the given elements; returns the
    renumbering old->new (named individuals must survive to stay named)."""
    order = sorted(elems)
    old2new = {d: i for i, d in enumerate(order)}
    named = {a: old2new[d] for a, d in I.named.items() if d in elems}
    concepts = {}
    for c, m in I.concepts.items():
        nm = 0
        for d in order:
            if m >> d & 1:
                nm |= 1 << old2new[d]
        concepts[c] = nm
    roles = {}
    for r, ps in I.roles.items():
        roles[r] = {(old2new[d], old2new[e]) for (d, e) in ps
                    if d in elems and e in elems}
    return Interpretation(len(order), named, concepts, roles), old2new


# === certificates ============================================================

def to_json(I: Interpretation) -> dict:
    return {
        "domain": I.n,
        "named": dict(sorted(I.named.items())),
        "concepts": {c: [d for d in range(I.n) if m >> d & 1]
                     for c, m in sorted(I.concepts.items()) if m},
        "roles": {r: sorted([list(p) for p in ps])
                  for r, ps in sorted(I.roles.items()) if ps},
    }


def from_json(doc: dict) -> Interpretation:
    if not isinstance(doc, dict) or "domain" not in doc:
        raise CertificateError("certificate must be an object with a 'domain' key")
    n = doc["domain"]
    if not isinstance(n, int) or n <= 0:
        raise CertificateError("'domain' must be a positive integer")
    named = doc.get("named", {})
    if not isinstance(named, dict):
        raise CertificateError("'named' must be an object")
    used: set[int] = set()
    for a, d in named.items():
        if not isinstance(d, int) or not (0 <= d < n):
            raise CertificateError(f"named individual {a} maps outside the domain")
        if d in used:
            raise CertificateError(f"named individuals share element {d}")
        used.add(d)
    concepts: dict[str, int] = {}
    for c, elems in doc.get("concepts", {}).items():
        m = 0
        for d in elems:
            if not isinstance(d, int) or not (0 <= d < n):
                raise CertificateError(f"concept {c} lists element {d} outside the domain")
            m |= 1 << d
        concepts[c] = m
    roles: dict[str, set[tuple[int, int]]] = {}
    for r, pairs in doc.get("roles", {}).items():
        ps = set()
        for p in pairs:
            if (not isinstance(p, (list, tuple)) or len(p) != 2
                    or not all(isinstance(x, int) and 0 <= x < n for x in p)):
                raise CertificateError(f"role {r} lists a malformed pair {p}")
            ps.add((p[0], p[1]))
        roles[r] = ps
    return Interpretation(n, dict(named), concepts, roles)
