"""Propositional grounding over a fixed domain, plus a small complete
DPLL solver.  Groundings are built from normalized TBox shapes; the
preference relation between same-domain interpretations is encoded with
selector variables."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable

from .syntax import (
    RI, NegRI, ConceptAssertion, Assertion, Role, CkbError, NormalizedTBox,
    NTop, NSubEx, NExSub, NAndSub, NSubNeg, NNegSub, CircPattern, Query,
    ConceptAtom, Const, Var,
)
from .semantics import Interpretation


class GroundingBudgetError(CkbError):
    pass


class SolverBudgetError(CkbError):
    pass


# === CNF container ===========================================================

class CNF:
    """Clause store with interned variable keys (1-based DIMACS-style ids)."""

    def __init__(self, clause_budget: int = 2_000_000):
        self.clause_budget = clause_budget
        self.nvars = 0
        self.clauses: list[tuple[int, ...]] = []
        self._keys: dict[object, int] = {}
        self._names: list[object] = []

    def var(self, key: object) -> int:
        v = self._keys.get(key)
        if v is None:
            self.nvars += 1
            v = self.nvars
            self._keys[key] = v
            self._names.append(key)
        return v

    def key_of(self, var: int) -> object:
        return self._names[var - 1]

    def snapshot(self) -> CNF:
        """Independent copy; extra clauses on the copy leave the original
        untouched while variable ids stay aligned."""
        c = CNF(self.clause_budget)
        c.nvars = self.nvars
        c.clauses = list(self.clauses)
        c._keys = dict(self._keys)
        c._names = list(self._names)
        return c

    def add(self, lits: list[int]):
        if len(self.clauses) >= self.clause_budget:
            raise GroundingBudgetError(
                f"clause budget {self.clause_budget} exceeded")
        self.clauses.append(tuple(lits))

    def write_dimacs(self, path: str, varmap_path: str | None = None):
        with open(path, "w") as f:
            f.write(f"p cnf {self.nvars} {len(self.clauses)}\n")
            for c in self.clauses:
                f.write(" ".join(str(l) for l in c) + " 0\n")
        if varmap_path:
            mapping = {str(v): _key_str(k) for k, v in self._keys.items()}
            with open(varmap_path, "w") as f:
                json.dump(mapping, f, indent=1, sort_keys=True)


def _key_str(key: object) -> str:
    if isinstance(key, tuple):
        return "/".join(str(x) for x in key)
    return str(key)


# === grounding primitives ====================================================

def oriented(role: Role, d: int, e: int) -> tuple[str, int, int]:
    """Resolve an oriented role atom to (role name, subject, object)."""
    return (role.name, e, d) if role.inverted else (role.name, d, e)


def ground_shapes(cnf: CNF, nt: NormalizedTBox, negris: list[NegRI],
                  domain: list[int],
                  cvar: Callable[[str, int], int],
                  rvar: Callable[[str, int, int], int],
                  auxvar: Callable[[int, int, int], int]):
    """Clauses making the assignment a model of the normalized TBox (plus
    negative role inclusions) over the domain.  Existential witnesses are
    defined bidirectionally, so satisfying assignments correspond one-to-one
    to models."""
    def rv(role: Role, d: int, e: int) -> int:
        name, s, o = oriented(role, d, e)
        return rvar(name, s, o)

    for si, s in enumerate(nt.shapes):
        if isinstance(s, NTop):
            for d in domain:
                cnf.add([cvar(s.a, d)])
        elif isinstance(s, NAndSub):
            for d in domain:
                cnf.add([-cvar(s.a1, d), -cvar(s.a2, d), cvar(s.b, d)])
        elif isinstance(s, NSubNeg):
            for d in domain:
                cnf.add([-cvar(s.a, d), -cvar(s.b, d)])
        elif isinstance(s, NNegSub):
            for d in domain:
                cnf.add([cvar(s.b, d), cvar(s.a, d)])
        elif isinstance(s, NExSub):
            for d in domain:
                for e in domain:
                    cnf.add([-rv(s.role, d, e), -cvar(s.b, e), cvar(s.a, d)])
        elif isinstance(s, NSubEx):
            for d in domain:
                ws = []
                for e in domain:
                    w = auxvar(si, d, e)
                    ws.append(w)
                    r = rv(s.role, d, e)
                    b = cvar(s.b, e)
                    cnf.add([-w, r])
                    cnf.add([-w, b])
                    cnf.add([-r, -b, w])
                cnf.add([-cvar(s.a, d)] + ws)
    for ri in nt.ris:
        for d in domain:
            for e in domain:
                cnf.add([-rv(ri.sub, d, e), rv(ri.sup, d, e)])
    for nri in negris:
        for d in domain:
            for e in domain:
                cnf.add([-rv(nri.sub, d, e), -rv(nri.sup, d, e)])


def ground_abox(cnf: CNF, abox: tuple[Assertion, ...], named: dict[str, int],
                cvar: Callable[[str, int], int],
                rvar: Callable[[str, int, int], int]):
    for a in abox:
        if isinstance(a, ConceptAssertion):
            cnf.add([cvar(a.concept, named[a.individual])])
        else:
            cnf.add([rvar(a.role, named[a.subject], named[a.object])])


# === standard model grounding ================================================

@dataclass
class GroundContext:
    """One grounding of a KB over a fixed domain with the standard variable
    keys; decodes solver assignments back to interpretations."""
    cnf: CNF
    n: int
    named: dict[str, int]
    domain: list[int]
    concept_names: list[str]
    role_names: list[str]

    def cvar(self, a: str, d: int) -> int:
        return self.cnf.var(("c", a, d))

    def rvar(self, r: str, d: int, e: int) -> int:
        return self.cnf.var(("r", r, d, e))

    def rv(self, role: Role, d: int, e: int) -> int:
        name, s, o = oriented(role, d, e)
        return self.rvar(name, s, o)

    def decode(self, vals: list[bool]) -> Interpretation:
        concepts = {}
        for a in self.concept_names:
            m = 0
            for d in self.domain:
                if vals[self.cvar(a, d)]:
                    m |= 1 << d
            concepts[a] = m
        roles: dict[str, set[tuple[int, int]]] = {}
        for r in self.role_names:
            ps = set()
            for d in self.domain:
                for e in self.domain:
                    if vals[self.rvar(r, d, e)]:
                        ps.add((d, e))
            roles[r] = ps
        return Interpretation(self.n, dict(self.named), concepts, roles)

    def exact_blocking_clause(self, vals: list[bool]) -> list[int]:
        lits = []
        for a in self.concept_names:
            for d in self.domain:
                v = self.cvar(a, d)
                lits.append(-v if vals[v] else v)
        for r in self.role_names:
            for d in self.domain:
                for e in self.domain:
                    v = self.rvar(r, d, e)
                    lits.append(-v if vals[v] else v)
        return lits


def build_ground_model(nt: NormalizedTBox, negris: list[NegRI],
                       abox: tuple[Assertion, ...], named: dict[str, int],
                       n: int, concept_names: list[str], role_names: list[str],
                       clause_budget: int = 2_000_000) -> GroundContext:
    """Ground the KB over domain {0..n-1}; named individuals occupy their
    given elements."""
    cnf = CNF(clause_budget)
    ctx = GroundContext(cnf, n, dict(named), list(range(n)),
                        list(concept_names), list(role_names))
    ground_shapes(cnf, nt, negris, ctx.domain, ctx.cvar, ctx.rvar,
                  lambda si, d, e: cnf.var(("w", si, d, e)))
    ground_abox(cnf, abox, named, ctx.cvar, ctx.rvar)
    return ctx


# === preference grounding ====================================================

def ground_preferred(cnf: CNF, cp: CircPattern,
                     ihas: Callable[[str, int], bool], domain: list[int],
                     cvar: Callable[[str, int], int],
                     tag: object = "") -> dict[tuple[str, str], int]:
    """Clauses asserting that the grounded assignment is strictly preferred
    to the reference columns `ihas`: fixed names frozen, minimized names
    shrunk respecting priorities, with at least one strict shrink whose
    higher-priority names all stay equal."""
    sel: dict[tuple[str, str], int] = {}

    for a in sorted(cp.fixed):
        for d in domain:
            cnf.add([cvar(a, d)] if ihas(a, d) else [-cvar(a, d)])

    for a in cp.minimized:
        inside = [d for d in domain if ihas(a, d)]
        outside = [d for d in domain if not ihas(a, d)]
        u = cnf.var(("sel", tag, "u", a))
        dv = cnf.var(("sel", tag, "d", a))
        s = cnf.var(("sel", tag, "s", a))
        e = cnf.var(("sel", tag, "e", a))
        sel[("u", a)] = u
        sel[("d", a)] = dv
        sel[("s", a)] = s
        sel[("e", a)] = e
        # u <-> no element outside the reference extension is added
        for d in outside:
            cnf.add([-u, -cvar(a, d)])
        cnf.add([u] + [cvar(a, d) for d in outside])
        # dv <-> some element of the reference extension is dropped
        cnf.add([-dv] + [-cvar(a, d) for d in inside])
        for d in inside:
            cnf.add([cvar(a, d), dv])
        # s <-> strictly smaller
        cnf.add([-s, u])
        cnf.add([-s, dv])
        cnf.add([-u, -dv, s])
        # e <-> equal
        cnf.add([-e, u])
        for d in inside:
            cnf.add([-e, cvar(a, d)])
        cnf.add([e, -u] + [-cvar(a, d) for d in inside])

    # growth of a minimized name demands a strict shrink at higher priority
    for a in cp.minimized:
        excused = [sel[("s", b)] for b in cp.higher_priority(a)]
        for d in domain:
            if not ihas(a, d):
                cnf.add([-cvar(a, d)] + excused)

    # some minimized name shrinks strictly with all higher priorities equal
    witnesses = []
    for a in cp.minimized:
        c = cnf.var(("sel", tag, "w", a))
        higher = [sel[("e", b)] for b in cp.higher_priority(a)]
        cnf.add([-c, sel[("s", a)]])
        for h in higher:
            cnf.add([-c, h])
        cnf.add([c, -sel[("s", a)]] + [-h for h in higher])
        witnesses.append(c)
    cnf.add(witnesses if witnesses else [])
    return sel


# === query grounding =========================================================

def ground_no_match(cnf: CNF, query: Query, answers: tuple[int, ...],
                    named: dict[str, int], domain: list[int],
                    cvar: Callable[[str, int], int],
                    rvar: Callable[[str, int, int], int],
                    assignment_budget: int = 1_000_000):
    """One clause per disjunct per total assignment of its existential
    variables, forbidding every match of the query at the given answer
    elements."""
    binding0 = dict(zip(query.answer_vars, answers))

    def term_elem(t, binding):
        if isinstance(t, Const):
            if t.name not in named:
                raise CkbError(f"query constant {t.name} is not a named individual")
            return named[t.name]
        return binding[t.name]

    for atoms in query.disjuncts:
        evars = sorted({v for a in atoms for v in _vars_of(a)} - set(query.answer_vars))
        total = len(domain) ** len(evars)
        if total > assignment_budget:
            raise GroundingBudgetError(
                f"query grounding needs {total} assignments (budget {assignment_budget})")
        idx = [0] * len(evars)
        while True:
            binding = dict(binding0)
            for i, v in enumerate(evars):
                binding[v] = domain[idx[i]]
            lits = set()
            for a in atoms:
                if isinstance(a, ConceptAtom):
                    lits.add(-cvar(a.concept, term_elem(a.term, binding)))
                else:
                    lits.add(-rvar(a.role, term_elem(a.subject, binding),
                                   term_elem(a.object, binding)))
            cnf.add(sorted(lits, key=abs))
            # advance odometer
            k = len(evars) - 1
            while k >= 0:
                idx[k] += 1
                if idx[k] < len(domain):
                    break
                idx[k] = 0
                k -= 1
            if k < 0:
                break


def _vars_of(a) -> set[str]:
    if isinstance(a, ConceptAtom):
        return {a.term.name} if isinstance(a.term, Var) else set()
    out = set()
    if isinstance(a.subject, Var):
        out.add(a.subject.name)
    if isinstance(a.object, Var):
        out.add(a.object.name)
    return out


# === DPLL solver =============================================================

def solve(cnf: CNF, *, time_budget: float | None = None) -> list[bool] | None:
    """Complete DPLL with unit propagation.  Decisions take the lowest-index
    unassigned variable, false first, so the returned model is the
    lexicographically least one.  Returns None when unsatisfiable."""
    deadline = time.monotonic() + time_budget if time_budget else None
    nv = cnf.nvars
    cls: list[tuple[int, ...]] = []
    for c in cnf.clauses:
        s = frozenset(c)
        if not s:
            return None
        if any(-l in s for l in s):
            continue
        cls.append(tuple(sorted(s, key=abs)))

    occ: list[list[int]] = [[] for _ in range(2 * nv + 1)]
    for ci, c in enumerate(cls):
        for l in c:
            occ[l + nv].append(ci)

    assign = [0] * (nv + 1)
    trail: list[int] = []

    def enqueue(lit: int) -> bool:
        v = abs(lit)
        val = 1 if lit > 0 else -1
        if assign[v] != 0:
            return assign[v] == val
        assign[v] = val
        trail.append(lit)
        return True

    def propagate(start: int) -> bool:
        """Returns True on conflict."""
        qi = start
        while qi < len(trail):
            lit = trail[qi]
            qi += 1
            for ci in occ[-lit + nv]:
                c = cls[ci]
                unassigned = 0
                sat = False
                for l in c:
                    a = assign[abs(l)]
                    if a == 0:
                        if unassigned == 0:
                            unassigned = l
                        else:
                            unassigned = None
                            break
                    elif (a == 1) == (l > 0):
                        sat = True
                        break
                if sat or unassigned is None:
                    continue
                if unassigned == 0:
                    return True
                if not enqueue(unassigned):
                    return True
        return False

    conflict = False
    for c in cls:
        if len(c) == 1 and not enqueue(c[0]):
            conflict = True
            break
    if conflict or propagate(0):
        return None

    # decision stack: (trail length before decision, var, tried_true)
    stack: list[tuple[int, int, bool]] = []
    scan_from = 1
    checked = 0
    while True:
        if deadline is not None:
            checked += 1
            if checked % 64 == 0 and time.monotonic() > deadline:
                raise SolverBudgetError("solver time budget exceeded")
        x = 0
        i = scan_from
        while i <= nv:
            if assign[i] == 0:
                x = i
                break
            i += 1
        if x == 0:
            return [False] + [assign[v] == 1 for v in range(1, nv + 1)]
        tl = len(trail)
        stack.append((tl, x, False))
        enqueue(-x)
        conflict = propagate(tl)
        while conflict:
            while stack and stack[-1][2]:
                tl, _, _ = stack.pop()
                for lit in trail[tl:]:
                    assign[abs(lit)] = 0
                del trail[tl:]
            if not stack:
                return None
            tl, var, _ = stack.pop()
            for lit in trail[tl:]:
                assign[abs(lit)] = 0
            del trail[tl:]
            stack.append((tl, var, True))
            enqueue(var)
            conflict = propagate(tl)
        scan_from = stack[-1][1] + 1
