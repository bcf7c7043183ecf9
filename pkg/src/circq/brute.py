"""Brute-force reference engines: explicit model enumeration over a fixed
domain, and a per-element flag representation for fragments whose axioms
only constrain concept memberships and successor existence."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

from .syntax import (
    CI, RI, NegRI, ConceptAssertion, RoleAssertion, Concept, Top, Bot, Name,
    Nominal, Not, And, Or, Exists, Role, KnowledgeBase, CkbError,
)
from .semantics import Interpretation, RoleHierarchy, extension


class BruteBudgetError(CkbError):
    pass


def default_named(kb: KnowledgeBase, n: int) -> dict[str, int]:
    inds = kb.individuals()
    if n < max(1, len(inds)):
        raise CkbError(f"domain size {n} cannot host {len(inds)} individuals")
    return {a: i for i, a in enumerate(inds)}


# === explicit enumeration ====================================================

def _role_free(c: Concept) -> bool:
    if isinstance(c, (Top, Bot, Name, Nominal)):
        return True
    if isinstance(c, Not):
        return _role_free(c.arg)
    if isinstance(c, (And, Or)):
        return _role_free(c.left) and _role_free(c.right)
    return False


def all_models_explicit(kb: KnowledgeBase, n: int, *,
                        named: dict[str, int] | None = None,
                        extra_concepts: tuple[str, ...] = (),
                        budget: int = 1 << 18) -> Iterator[Interpretation]:
    """Every model of the KB over domain {0..n-1} with the given (default:
    parse-order) individual placement, in a fixed lexicographic order.
    Raises BruteBudgetError when the raw search space exceeds the budget."""
    named = dict(named) if named is not None else default_named(kb, n)
    cnames = kb.concept_names()
    for c in extra_concepts:
        if c not in cnames:
            cnames.append(c)
    rnames = kb.role_names()

    forced_c = {c: 0 for c in cnames}
    forced_r: dict[str, set[tuple[int, int]]] = {r: set() for r in rnames}
    for a in kb.abox:
        if isinstance(a, ConceptAssertion):
            if a.concept not in forced_c:
                forced_c[a.concept] = 0
                cnames.append(a.concept)
            forced_c[a.concept] |= 1 << named[a.individual]
        else:
            forced_r.setdefault(a.role, set()).add((named[a.subject], named[a.object]))

    cbits = [(c, d) for c in cnames for d in range(n)
             if not (forced_c[c] >> d & 1)]
    rbits = [(r, d, e) for r in rnames for d in range(n) for e in range(n)
             if (d, e) not in forced_r[r]]
    if len(cbits) + len(rbits) > 60 or (1 << (len(cbits) + len(rbits))) > budget:
        raise BruteBudgetError(
            f"explicit enumeration needs 2^{len(cbits) + len(rbits)} candidates "
            f"(budget {budget})")

    cis = [ax for ax in kb.tbox if isinstance(ax, CI)]
    concept_only = [ax for ax in cis if _role_free(ax.lhs) and _role_free(ax.rhs)]
    role_cis = [ax for ax in cis if ax not in concept_only]
    ris = [ax for ax in kb.tbox if isinstance(ax, RI)]
    negris = [ax for ax in kb.tbox if isinstance(ax, NegRI)]

    base = Interpretation(n, named, {c: forced_c[c] for c in cnames},
                          {r: set(forced_r[r]) for r in rnames})

    for ccode in range(1 << len(cbits)):
        I = base.copy()
        for i, (c, d) in enumerate(cbits):
            if ccode >> i & 1:
                I.concepts[c] |= 1 << d
        if any(extension(ax.lhs, I) & ~extension(ax.rhs, I) for ax in concept_only):
            continue
        for rcode in range(1 << len(rbits)):
            J = I if not rbits else I.copy()
            for i, (r, d, e) in enumerate(rbits):
                if rcode >> i & 1:
                    J.roles[r].add((d, e))
            ok = True
            for ax in role_cis:
                if extension(ax.lhs, J) & ~extension(ax.rhs, J):
                    ok = False
                    break
            if ok:
                for ax in ris:
                    if J.pairs(ax.sub) - J.pairs(ax.sup):
                        ok = False
                        break
            if ok:
                for ax in negris:
                    if J.pairs(ax.sub) & J.pairs(ax.sup):
                        ok = False
                        break
            if ok:
                yield J.copy() if J is I else J


# === flag representation =====================================================

@dataclass
class FlagSpace:
    """Per-element flag vectors: one bit per concept name plus two bits per
    role name (outgoing / incoming successor existence).  Applicable when
    every axiom's truth at an element depends only on that element's flags;
    realization draws canonical witness edges."""
    ok: bool
    reason: str | None
    n: int = 0
    named: dict[str, int] = field(default_factory=dict)
    concept_names: list[str] = field(default_factory=list)
    role_names: list[str] = field(default_factory=list)
    admissible: list[list[int]] = field(default_factory=list)
    named_pairs: dict[str, set[tuple[int, int]]] = field(default_factory=dict)
    hier: RoleHierarchy | None = None
    closure_masks: list[int] = field(default_factory=list)   # per dir-bit index

    def cbit(self, name: str) -> int:
        return self.concept_names.index(name)

    def dir_bit(self, role: Role) -> int:
        i = self.role_names.index(role.name)
        return len(self.concept_names) + 2 * i + (1 if role.inverted else 0)

    def ndirs(self) -> int:
        return 2 * len(self.role_names)

    def vec_of(self, I: Interpretation, d: int) -> int:
        """Flag vector the interpretation induces at element d."""
        vec = 0
        for i, c in enumerate(self.concept_names):
            if I.has(c, d):
                vec |= 1 << i
        C = len(self.concept_names)
        for i, r in enumerate(self.role_names):
            ps = I.roles.get(r, set())
            if any(x == d for (x, _) in ps):
                vec |= 1 << (C + 2 * i)
            if any(y == d for (_, y) in ps):
                vec |= 1 << (C + 2 * i + 1)
        return vec

    def coupling_ok(self, vecs: list[int]) -> bool:
        C = len(self.concept_names)
        for i in range(len(self.role_names)):
            out_any = any(v >> (C + 2 * i) & 1 for v in vecs)
            in_any = any(v >> (C + 2 * i + 1) & 1 for v in vecs)
            if out_any != in_any:
                return False
        return True

    def realize(self, vecs: list[int]) -> Interpretation:
        C = len(self.concept_names)
        concepts = {}
        for i, c in enumerate(self.concept_names):
            m = 0
            for d, v in enumerate(vecs):
                if v >> i & 1:
                    m |= 1 << d
            concepts[c] = m
        base: dict[str, set[tuple[int, int]]] = {}
        for i, r in enumerate(self.role_names):
            ps = set(self.named_pairs.get(r, set()))
            outs = [d for d, v in enumerate(vecs) if v >> (C + 2 * i) & 1]
            ins = [e for e, v in enumerate(vecs) if v >> (C + 2 * i + 1) & 1]
            if outs and ins:
                w_in, w_out = min(ins), min(outs)
                ps |= {(d, w_in) for d in outs}
                ps |= {(w_out, e) for e in ins}
            base[r] = ps
        roles: dict[str, set[tuple[int, int]]] = {r: set() for r in self.role_names}
        for r in self.role_names:
            for S in self.hier.supers(Role(r, False)):
                if S.name not in roles:
                    roles[S.name] = set()
                if S.inverted:
                    roles[S.name] |= {(e, d) for (d, e) in base[r]}
                else:
                    roles[S.name] |= base[r]
        return Interpretation(self.n, dict(self.named), concepts, roles)


def _flag_eval(c: Concept, vec: int, sp: FlagSpace, universal: set[str]) -> bool | None:
    """Truth of the concept at an element with these flags; None when not
    flag-determined."""
    if isinstance(c, Top):
        return True
    if isinstance(c, Bot):
        return False
    if isinstance(c, Name):
        return bool(vec >> sp.cbit(c.name) & 1)
    if isinstance(c, Not):
        r = _flag_eval(c.arg, vec, sp, universal)
        return None if r is None else not r
    if isinstance(c, And):
        a = _flag_eval(c.left, vec, sp, universal)
        b = _flag_eval(c.right, vec, sp, universal)
        return None if a is None or b is None else (a and b)
    if isinstance(c, Or):
        a = _flag_eval(c.left, vec, sp, universal)
        b = _flag_eval(c.right, vec, sp, universal)
        return None if a is None or b is None else (a or b)
    if isinstance(c, Exists):
        if not (isinstance(c.filler, Top)
                or (isinstance(c.filler, Name) and c.filler.name in universal)):
            return None
        return bool(vec >> sp.dir_bit(c.role) & 1)
    return None


def build_flag_space(kb: KnowledgeBase, n: int, *,
                     named: dict[str, int] | None = None,
                     extra_concepts: tuple[str, ...] = (),
                     budget_bits: int = 17) -> FlagSpace:
    """Admissible flag vectors per element, or ok=False with a reason when the
    KB is outside the flag-decidable fragment."""
    for ax in kb.tbox:
        if isinstance(ax, NegRI):
            return FlagSpace(False, "negative role inclusions are edge-level")
    if kb.has_nominals():
        return FlagSpace(False, "nominals are element-level")

    named = dict(named) if named is not None else default_named(kb, n)
    cnames = kb.concept_names()
    for c in extra_concepts:
        if c not in cnames:
            cnames.append(c)
    rnames = kb.role_names()
    sp = FlagSpace(True, None, n, named, cnames, rnames)
    sp.hier = RoleHierarchy(kb.tbox)
    C, D = len(cnames), 2 * len(rnames)
    if C + D > budget_bits:
        return FlagSpace(False, f"flag space needs 2^{C + D} vectors")

    universal = {ax.rhs.name for ax in kb.tbox
                 if isinstance(ax, CI) and isinstance(ax.lhs, Top)
                 and isinstance(ax.rhs, Name)}

    cis = [ax for ax in kb.tbox if isinstance(ax, CI)]
    sp.closure_masks = []
    for i, r in enumerate(rnames):
        for inv in (False, True):
            m = 0
            for S in sp.hier.supers(Role(r, inv)):
                if S.name in rnames:
                    m |= 1 << sp.dir_bit(S)
            sp.closure_masks.append(m)

    forced = [0] * n
    for a in kb.abox:
        if isinstance(a, ConceptAssertion):
            forced[named[a.individual]] |= 1 << sp.cbit(a.concept)
        else:
            sp.named_pairs.setdefault(a.role, set()).add(
                (named[a.subject], named[a.object]))
            forced[named[a.subject]] |= 1 << sp.dir_bit(Role(a.role, False))
            forced[named[a.object]] |= 1 << sp.dir_bit(Role(a.role, True))
    # close forced direction bits under the hierarchy
    for d in range(n):
        v = forced[d]
        for j in range(D):
            if v >> (C + j) & 1:
                v |= sp.closure_masks[j]
        forced[d] = v

    # probe one vector to detect non-flag-determined axioms
    for ax in cis:
        if (_flag_eval(ax.lhs, 0, sp, universal) is None
                or _flag_eval(ax.rhs, 0, sp, universal) is None):
            return FlagSpace(False, f"axiom {ax} is not flag-determined")

    anon_cache: list[int] | None = None
    for d in range(n):
        if forced[d] == 0 and anon_cache is not None:
            sp.admissible.append(anon_cache)
            continue
        vecs = []
        for vec in range(1 << (C + D)):
            if (vec & forced[d]) != forced[d]:
                continue
            closed = True
            for j in range(D):
                if vec >> (C + j) & 1 and (vec & sp.closure_masks[j]) != sp.closure_masks[j]:
                    closed = False
                    break
            if not closed:
                continue
            ok = True
            for ax in cis:
                if _flag_eval(ax.lhs, vec, sp, universal) and not _flag_eval(
                        ax.rhs, vec, sp, universal):
                    ok = False
                    break
            if ok:
                vecs.append(vec)
        sp.admissible.append(vecs)
        if forced[d] == 0:
            anon_cache = vecs
    return sp


def flag_satisfiable(sp: FlagSpace, *,
                     forbid: dict[int, int] | None = None) -> list[int] | None:
    """One admissible, coupled flag assignment, or None.  `forbid` maps an
    element to a bitmask its vector must avoid entirely."""
    if not sp.ok:
        raise CkbError(f"flag space unavailable: {sp.reason}")
    forbid = forbid or {}
    C, D = len(sp.concept_names), sp.ndirs()
    # state: union of direction bits seen so far, shifted down by C
    layers: list[dict[int, tuple[int, int]]] = [{0: (-1, -1)}]
    for d in range(sp.n):
        bad = forbid.get(d, 0)
        nxt: dict[int, tuple[int, int]] = {}
        for st in layers[-1]:
            for v in sp.admissible[d]:
                if v & bad:
                    continue
                st2 = st | (v >> C)
                if st2 not in nxt:
                    nxt[st2] = (st, v)
        if not nxt:
            return None
        layers.append(nxt)
    final = None
    for st in sorted(layers[-1]):
        if all((st >> 2 * i & 1) == (st >> (2 * i + 1) & 1)
               for i in range(len(sp.role_names))):
            final = st
            break
    if final is None:
        return None
    vecs = [0] * sp.n
    st = final
    for d in range(sp.n - 1, -1, -1):
        st, v = layers[d + 1][st]
        vecs[d] = v
    return vecs
