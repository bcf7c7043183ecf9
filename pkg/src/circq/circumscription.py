"""Minimality of models under concept circumscription: the preference
relation itself, bounded search engines for strictly preferred models, the
portion-based local criteria, and the ABox/countermodel reductions for
atomic queries."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

from .syntax import (
    KnowledgeBase, CircPattern, CkbError, Role, Concept, Name, Top, Exists,
    CI, RI, NegRI, ConceptAssertion, RoleAssertion, normalize_tbox,
    NormalizedTBox, is_normalized, detect_dialect, roles_in,
)
from .semantics import Interpretation, is_model, extension, RoleHierarchy
from .brute import all_models_explicit, build_flag_space, BruteBudgetError
from .grounding import (
    CNF, build_ground_model, ground_shapes, ground_abox, ground_preferred,
    solve,
)


class DomainMismatchError(CkbError):
    pass


# === the preference relation =================================================

def preferred(J: Interpretation, I: Interpretation, cp: CircPattern) -> bool:
    """Whether J is strictly preferred to I: same domain and named elements,
    fixed names equal, minimized names only grow under a higher-priority
    strict shrink, and some minimized name shrinks strictly while all its
    higher-priority names stay equal."""
    if J.n != I.n or J.named != I.named:
        raise DomainMismatchError("preference compares interpretations over "
                                  "the same domain and naming")
    for a in cp.fixed:
        if J.mask(a) != I.mask(a):
            return False

    def shrinks(a: str) -> bool:
        jm, im = J.mask(a), I.mask(a)
        return jm != im and jm & ~im == 0

    def equal(a: str) -> bool:
        return J.mask(a) == I.mask(a)

    for a in cp.minimized:
        if J.mask(a) & ~I.mask(a):
            if not any(shrinks(b) for b in cp.higher_priority(a)):
                return False
    for a in cp.minimized:
        if shrinks(a) and all(equal(b) for b in cp.higher_priority(a)):
            return True
    return False


# === minimality engines ======================================================

@dataclass
class MinimalityResult:
    minimal: bool
    witness: Interpretation | None
    engine: str
    detail: object = None


def is_minimal(kb: KnowledgeBase, I: Interpretation,
               cp: CircPattern | None = None, *, engine: str = "brute",
               budget: int = 1 << 18, state_budget: int = 1 << 20,
               time_budget: float | None = None,
               clause_budget: int = 2_000_000) -> MinimalityResult:
    """Whether no model of the KB on the same domain is strictly preferred
    to I.  Engines: brute (flag vectors when the KB supports them, explicit
    enumeration otherwise), grounded (one SAT call), criteria (portion-based
    local check)."""
    cp = cp if cp is not None else kb.circ
    mc = is_model(I, kb)
    if not mc.ok:
        raise CkbError("minimality is defined for models only: "
                       + mc.violations[0])
    if engine == "brute":
        sp = build_flag_space(kb, I.n, named=I.named,
                              extra_concepts=tuple(sorted(cp.scope())))
        if sp.ok and _flag_dp_fits(sp, cp, state_budget):
            w = _flag_minimal_search(sp, kb, I, cp, state_budget)
            return MinimalityResult(w is None, w, "brute-flags")
        w = _explicit_minimal_search(kb, I, cp, budget)
        return MinimalityResult(w is None, w, "brute-explicit")
    if engine == "grounded":
        w = _grounded_minimal_search(kb, I, cp, time_budget, clause_budget)
        return MinimalityResult(w is None, w, "grounded")
    if engine == "criteria":
        res = criteria_combined(kb, I, cp, clause_budget=clause_budget,
                                time_budget=time_budget)
        return MinimalityResult(not res.nonminimal, None, "criteria",
                                detail=(res.p, res.witness))
    raise CkbError(f"unknown minimality engine: {engine}")


def _flag_dp_fits(sp, cp: CircPattern, state_budget: int) -> bool:
    if any(a not in sp.concept_names for a in cp.scope()):
        return False
    return (1 << sp.ndirs()) * (4 ** len(cp.minimized)) <= state_budget


def _flag_minimal_search(sp, kb: KnowledgeBase, I: Interpretation,
                         cp: CircPattern,
                         state_budget: int) -> Interpretation | None:
    """DP over elements: state is (role directions hit so far, per-minimized
    grow/shrink bits).  An accepting final state reconstructs a witness flag
    assignment, realized to a strictly preferred model."""
    C = len(sp.concept_names)
    ivecs = [sp.vec_of(I, d) for d in range(sp.n)]
    fixed_bits = 0
    for a in cp.fixed:
        fixed_bits |= 1 << sp.cbit(a)
    mnames = list(cp.minimized)
    mb = [1 << sp.cbit(a) for a in mnames]
    midx = {a: k for k, a in enumerate(mnames)}
    higher_idx = [[midx[b] for b in cp.higher_priority(a)] for a in mnames]

    cands = []
    for d in range(sp.n):
        iv = ivecs[d]
        cands.append([v for v in sp.admissible[d]
                      if not ((v ^ iv) & fixed_bits)])

    layers: list[dict[tuple[int, int], tuple[int, int, int] | None]] = [
        {(0, 0): None}]
    for d in range(sp.n):
        iv = ivecs[d]
        nxt: dict[tuple[int, int], tuple[int, int, int]] = {}
        for (hd, ps) in layers[-1]:
            for v in cands[d]:
                nh = hd | (v >> C)
                nps = ps
                for k, bit in enumerate(mb):
                    if v & bit:
                        if not iv & bit:
                            nps |= 1 << (2 * k)
                    elif iv & bit:
                        nps |= 1 << (2 * k + 1)
                key = (nh, nps)
                if key not in nxt:
                    nxt[key] = (hd, ps, v)
        if len(nxt) > state_budget:
            raise BruteBudgetError(
                f"minimality state space exceeds {state_budget}")
        layers.append(nxt)

    def pref_ok(ps: int) -> bool:
        def grew(k):
            return ps >> (2 * k) & 1

        def shrank(k):
            return ps >> (2 * k + 1) & 1 and not grew(k)

        def same(k):
            return not ps >> (2 * k) & 1 and not ps >> (2 * k + 1) & 1

        for k in range(len(mnames)):
            if grew(k) and not any(shrank(j) for j in higher_idx[k]):
                return False
        return any(shrank(k) and all(same(j) for j in higher_idx[k])
                   for k in range(len(mnames)))

    for key in sorted(layers[-1]):
        hd, ps = key
        if not _coupling_state_ok(sp, hd):
            continue
        if not pref_ok(ps):
            continue
        vecs = []
        cur = key
        for d in range(sp.n - 1, -1, -1):
            ph, pp, v = layers[d + 1][cur]
            vecs.append(v)
            cur = (ph, pp)
        vecs.reverse()
        J = sp.realize(vecs)
        if not is_model(J, kb).ok or not preferred(J, I, cp):
            raise CkbError("internal invariant: flag witness failed "
                           "re-verification")
        return J
    return None


def _coupling_state_ok(sp, hd: int) -> bool:
    for i in range(len(sp.role_names)):
        if (hd >> (2 * i) & 1) != (hd >> (2 * i + 1) & 1):
            return False
    return True


def _explicit_minimal_search(kb: KnowledgeBase, I: Interpretation,
                             cp: CircPattern,
                             budget: int) -> Interpretation | None:
    extra = tuple(sorted(set(cp.scope()) - set(kb.concept_names())))
    for J in all_models_explicit(kb, I.n, named=I.named,
                                 extra_concepts=extra, budget=budget):
        if preferred(J, I, cp):
            return J
    return None


def _grounded_minimal_search(kb: KnowledgeBase, I: Interpretation,
                             cp: CircPattern, time_budget: float | None,
                             clause_budget: int) -> Interpretation | None:
    if kb.has_nominals():
        raise CkbError("grounded minimality requires a nominal-free KB")
    negris = [ax for ax in kb.tbox if isinstance(ax, NegRI)]
    rest = tuple(ax for ax in kb.tbox if not isinstance(ax, NegRI))
    nt = normalize_tbox(rest)
    concepts = list(dict.fromkeys(
        list(nt.concept_names()) + kb.concept_names()
        + sorted(cp.scope())))
    roles = list(dict.fromkeys(list(nt.role_names()) + kb.role_names()))
    ctx = build_ground_model(nt, negris, kb.abox, I.named, I.n,
                             concepts, roles, clause_budget)
    ground_preferred(ctx.cnf, cp, I.has, ctx.domain, ctx.cvar)
    vals = solve(ctx.cnf, time_budget=time_budget)
    if vals is None:
        return None
    J = ctx.decode(vals)
    if not is_model(J, kb).ok or not preferred(J, I, cp):
        raise CkbError("internal invariant: grounded witness failed "
                       "re-verification")
    return J


# === portions ================================================================

@dataclass
class Portion:
    """A small sub-interpretation with rerouted role edges, over the original
    element ids (dense copy in `interp` via `old2new`)."""
    p: frozenset[int]
    elements: tuple[int, ...]
    old2new: dict[int, int]
    interp: Interpretation
    witnesses: dict[Role, int]
    kb: KnowledgeBase


def _tbox_role_names(kb: KnowledgeBase) -> list[str]:
    out: list[str] = []
    for ax in kb.tbox:
        if isinstance(ax, CI):
            for r in roles_in(ax.lhs) | roles_in(ax.rhs):
                if r not in out:
                    out.append(r)
        elif isinstance(ax, (RI, NegRI)):
            for r in (ax.sub.name, ax.sup.name):
                if r not in out:
                    out.append(r)
    return sorted(out)


def _direction_witnesses(I: Interpretation,
                         role_names: list[str]) -> dict[Role, int]:
    """Per role direction s with a nonempty extension, the least element
    having an s-predecessor."""
    wit: dict[Role, int] = {}
    for r in role_names:
        for s in (Role(r), Role(r, True)):
            m = extension(Exists(s.inverse(), Top()), I)
            if m:
                wit[s] = (m & -m).bit_length() - 1
    return wit


def _rerouted_roles(I: Interpretation, elems: set[int], kb: KnowledgeBase,
                    wit: dict[Role, int], role_names: list[str],
                    keep_named_pairs: bool) -> dict[str, set[tuple[int, int]]]:
    hier = RoleHierarchy(kb.tbox)
    named_elems = set(I.named.values())
    has_succ = {s: extension(Exists(s, Top()), I) for s in wit}
    roles: dict[str, set[tuple[int, int]]] = {}
    for r in role_names:
        ps: set[tuple[int, int]] = set()
        if keep_named_pairs:
            for (d, e) in I.pairs(Role(r)):
                if d in named_elems and e in named_elems:
                    ps.add((d, e))
        for s, w in wit.items():
            fwd = hier.entails(s, Role(r))
            bwd = hier.entails(s, Role(r, True))
            if not fwd and not bwd:
                continue
            m = has_succ[s]
            for e in elems:
                if m >> e & 1:
                    if fwd:
                        ps.add((e, w))
                    if bwd:
                        ps.add((w, e))
        roles[r] = ps
    return roles


def _portion_pack(I: Interpretation, p: frozenset[int], elems: set[int],
                  wit: dict[Role, int],
                  roles_old: dict[str, set[tuple[int, int]]],
                  kb: KnowledgeBase, port_kb: KnowledgeBase) -> Portion:
    order = tuple(sorted(elems))
    old2new = {d: i for i, d in enumerate(order)}
    named = {a: old2new[d] for a, d in I.named.items() if d in elems}
    concepts = {}
    for a, m in I.concepts.items():
        nm = 0
        for d in order:
            if m >> d & 1:
                nm |= 1 << old2new[d]
        concepts[a] = nm
    roles = {r: {(old2new[d], old2new[e]) for (d, e) in ps}
             for r, ps in roles_old.items()}
    interp = Interpretation(len(order), named, concepts, roles)
    return Portion(p, order, old2new, interp, dict(wit), port_kb)


def build_portion_combined(I: Interpretation, p, kb: KnowledgeBase) -> Portion:
    """Restriction to p, the named elements, and one witness per role
    direction; role edges between named elements survive, everything else is
    rerouted through the witnesses."""
    p = frozenset(p)
    role_names = kb.role_names()
    wit = _direction_witnesses(I, role_names)
    elems = set(p) | set(I.named.values()) | set(wit.values())
    if not elems <= set(range(I.n)):
        raise DomainMismatchError("portion elements outside the domain")
    roles_old = _rerouted_roles(I, elems, kb, wit, role_names, True)
    return _portion_pack(I, p, elems, wit, roles_old, kb, kb)


def build_portion_data(I: Interpretation, p, kb: KnowledgeBase,
                       atypes: dict[int, frozenset[str]] | None = None) -> Portion:
    """Restriction to p, one representative per realized (entailed-type,
    model-type) pair, and one witness per TBox role direction; all role edges
    are rerouted, and the packed KB keeps only the entailed concept
    assertions of surviving individuals."""
    p = frozenset(p)
    if atypes is None:
        atypes = element_abox_types(kb, I)
    cn = sorted(kb.concept_names())
    reps: dict[tuple[frozenset[str], frozenset[str]], int] = {}
    for e in range(I.n):
        tp = frozenset(a for a in cn if I.has(a, e))
        key = (atypes[e], tp)
        if key not in reps:
            reps[key] = e
    troles = _tbox_role_names(kb)
    wit = _direction_witnesses(I, troles)
    elems = set(p) | set(reps.values()) | set(wit.values())
    if not elems <= set(range(I.n)):
        raise DomainMismatchError("portion elements outside the domain")
    roles_old = _rerouted_roles(I, elems, kb, wit, troles, False)
    inv_named = {d: a for a, d in I.named.items()}
    abox = []
    for d in sorted(elems):
        a = inv_named.get(d)
        if a is not None:
            for c in sorted(atypes[d]):
                abox.append(ConceptAssertion(c, a))
    port_kb = KnowledgeBase(kb.tbox, tuple(abox), kb.circ, {})
    return _portion_pack(I, p, elems, wit, roles_old, kb, port_kb)


# === local criteria ==========================================================

@dataclass
class CombinedCriteria:
    nonminimal: bool
    p: frozenset[int] | None
    witness: Interpretation | None


@dataclass
class DataCriteria:
    holds: bool
    p: frozenset[int] | None
    reason: str | None


def _require_portionable(kb: KnowledgeBase, what: str):
    probe = build_flag_space(kb, max(1, len(kb.individuals())))
    if not probe.ok:
        raise CkbError(f"{what} requires an unqualified-existential KB: "
                       + probe.reason)


def criteria_combined(kb: KnowledgeBase, I: Interpretation,
                      cp: CircPattern | None = None, *,
                      clause_budget: int = 2_000_000,
                      time_budget: float | None = None,
                      max_portion: int | None = None) -> CombinedCriteria:
    """Non-minimality via portions: some strictly preferred model exists iff
    for some small portion seed there is a family of locally preferred models
    agreeing on the portion.  One SAT call per seed decides the family."""
    cp = cp if cp is not None else kb.circ
    _require_portionable(kb, "the combined criterion")
    mc = is_model(I, kb)
    if not mc.ok:
        raise CkbError("the combined criterion applies to models only: "
                       + mc.violations[0])
    nt = normalize_tbox(kb.tbox)
    bound = I.n if max_portion is None else min(max_portion, I.n)
    seen: set[tuple[int, ...]] = set()
    for size in range(bound + 1):
        for pc in itertools.combinations(range(I.n), size):
            port = build_portion_combined(I, frozenset(pc), kb)
            if port.elements in seen:
                continue
            seen.add(port.elements)
            w = _combined_family_sat(kb, nt, I, port, cp, clause_budget,
                                     time_budget)
            if w is not None:
                return CombinedCriteria(True, frozenset(pc), w)
    return CombinedCriteria(False, None, None)


def _combined_family_sat(kb: KnowledgeBase, nt: NormalizedTBox,
                         I: Interpretation, port: Portion, cp: CircPattern,
                         clause_budget: int,
                         time_budget: float | None) -> Interpretation | None:
    core = set(port.elements)
    cnf = CNF(clause_budget)

    def cv_shared(a: str, d: int) -> int:
        return cnf.var(("c", a, d))

    def rv_shared(r: str, d: int, e: int) -> int:
        return cnf.var(("r", r, d, e))

    ground_abox(cnf, kb.abox, I.named, cv_shared, rv_shared)
    for e in range(I.n):
        dom = sorted(core | {e})

        def cv(a: str, d: int, _e=e) -> int:
            if d in core:
                return cv_shared(a, d)
            return cnf.var(("ce", _e, a))

        def rv(r: str, d: int, x: int, _e=e) -> int:
            if d in core and x in core:
                return rv_shared(r, d, x)
            return cnf.var(("re", _e, r, d, x))

        ground_shapes(cnf, nt, [], dom, cv, rv,
                      lambda si, d, x, _e=e: cnf.var(("we", _e, si, d, x)))
        ground_preferred(cnf, cp, I.has, dom, cv, tag=("p", e))
    vals = solve(cnf, time_budget=time_budget)
    if vals is None:
        return None
    concepts = {}
    order = port.elements
    for a in sorted(set(list(nt.concept_names()) + kb.concept_names())):
        m = 0
        for d in order:
            if vals[cv_shared(a, d)]:
                m |= 1 << port.old2new[d]
        concepts[a] = m
    roles: dict[str, set[tuple[int, int]]] = {}
    for r in sorted(set(list(nt.role_names()) + kb.role_names())):
        ps = set()
        for d in order:
            for x in order:
                if vals[rv_shared(r, d, x)]:
                    ps.add((port.old2new[d], port.old2new[x]))
        roles[r] = ps
    named = {a: port.old2new[d] for a, d in I.named.items()}
    return Interpretation(len(order), named, concepts, roles)


def criteria_data(kb: KnowledgeBase, I: Interpretation,
                  cp: CircPattern | None = None, *,
                  clause_budget: int = 2_000_000,
                  time_budget: float | None = None,
                  max_portion: int | None = None) -> DataCriteria:
    """Minimality via data portions: I models the circumscribed KB iff every
    small portion models its own reduced KB minimally."""
    cp = cp if cp is not None else kb.circ
    _require_portionable(kb, "the data criterion")
    if not is_normalized(kb.tbox):
        raise CkbError("the data criterion expects a normalized TBox")
    mc = is_model(I, kb)
    if not mc.ok:
        raise CkbError("the data criterion applies to models only: "
                       + mc.violations[0])
    atypes = element_abox_types(kb, I)
    bound = I.n if max_portion is None else min(max_portion, I.n)
    seen: set[tuple[int, ...]] = set()
    for size in range(bound + 1):
        for pc in itertools.combinations(range(I.n), size):
            port = build_portion_data(I, frozenset(pc), kb, atypes)
            if port.elements in seen:
                continue
            seen.add(port.elements)
            sub = is_model(port.interp, port.kb)
            if not sub.ok:
                return DataCriteria(False, frozenset(pc),
                                    "portion is not a model: " + sub.violations[0])
            r = is_minimal(port.kb, port.interp, cp, engine="grounded",
                           time_budget=time_budget,
                           clause_budget=clause_budget)
            if not r.minimal:
                return DataCriteria(False, frozenset(pc),
                                    "portion is not minimal")
    return DataCriteria(True, None, None)


# === entailed types ==========================================================

def abox_type(kb: KnowledgeBase, a: str) -> frozenset[str]:
    """Concept names entailed at the individual under classical semantics."""
    from .entailment import classical_entails_concept
    return frozenset(c for c in sorted(kb.concept_names())
                     if classical_entails_concept(kb, Name(c), a))


def generic_type(kb: KnowledgeBase) -> frozenset[str]:
    """Concept names classically entailed at every element."""
    from .entailment import classical_entails_concept
    return frozenset(c for c in sorted(kb.concept_names())
                     if classical_entails_concept(kb, Name(c), None))


def element_abox_types(kb: KnowledgeBase,
                       I: Interpretation) -> dict[int, frozenset[str]]:
    inv_named = {d: a for a, d in I.named.items()}
    anon = None
    out: dict[int, frozenset[str]] = {}
    for e in range(I.n):
        a = inv_named.get(e)
        if a is not None:
            out[e] = abox_type(kb, a)
        else:
            if anon is None:
                anon = generic_type(kb)
            out[e] = anon
    return out


# === atomic-query reductions =================================================

def _fixed_profile_closure(kb: KnowledgeBase, fnames: frozenset[str]):
    """Names and role directions classically entailed by the conjunction of
    the given fixed names."""
    from .entailment import classical_entails_concept
    probe = KnowledgeBase(kb.tbox,
                          tuple(ConceptAssertion(f, "_ft")
                                for f in sorted(fnames)))
    names = frozenset(c for c in sorted(kb.concept_names())
                      if classical_entails_concept(probe, Name(c), "_ft"))
    dirs = []
    for r in kb.role_names():
        for s in (Role(r), Role(r, True)):
            if classical_entails_concept(probe, Exists(s, Top()), "_ft"):
                dirs.append(s)
    return names, tuple(dirs)


def linear_countermodel_reduce(kb: KnowledgeBase, I: Interpretation,
                               cp: CircPattern | None = None) -> Portion:
    """Shrink a countermodel to the named elements plus, per role direction
    forced by fixed names somewhere, the least such element and a target
    witness.  Preserves modelhood, minimality, and atomic-query failures."""
    cp = cp if cp is not None else kb.circ
    d = detect_dialect(kb)
    if d.base not in ("dllite_core", "dllite_horn"):
        raise CkbError("the countermodel reduction is for horn-style KBs "
                       f"(got {d.tag()})")
    if d.negative_role_inclusions:
        raise CkbError("the countermodel reduction does not support "
                       "negative role inclusions")
    profiles: dict[frozenset[str], tuple] = {}
    forced: dict[Role, int] = {}
    for e in range(I.n):
        fn = frozenset(f for f in cp.fixed if I.has(f, e))
        if fn not in profiles:
            profiles[fn] = _fixed_profile_closure(kb, fn)
        for s in profiles[fn][1]:
            if s not in forced:
                forced[s] = e
    return build_portion_combined(I, frozenset(forced.values()), kb)


def reduce_abox_aq(kb: KnowledgeBase, a0: str) -> KnowledgeBase:
    """Replace the ABox by entailed concept assertions over boundedly many
    individuals per entailed type, keeping a0; atomic-query answers at a0
    are unchanged."""
    _require_portionable(kb, "the ABox reduction")
    abox_inds: list[str] = []
    for a in kb.abox:
        for x in ((a.individual,) if isinstance(a, ConceptAssertion)
                  else (a.subject, a.object)):
            if x not in abox_inds:
                abox_inds.append(x)
    if a0 not in abox_inds:
        raise CkbError(f"individual {a0} does not occur in the ABox")
    types = {a: abox_type(kb, a) for a in abox_inds}
    measure = len(kb.concept_names()) + len(kb.tbox)
    cap = 4 ** measure if measure < 16 else 1 << 62
    groups: dict[frozenset[str], list[str]] = {}
    for a in abox_inds:
        groups.setdefault(types[a], []).append(a)
    t0 = types[a0]
    groups[t0].remove(a0)
    groups[t0].insert(0, a0)
    abox = []
    for a in abox_inds:
        g = groups[types[a]]
        if a in g[:min(len(g), cap)]:
            for c in sorted(types[a]):
                abox.append(ConceptAssertion(c, a))
    return KnowledgeBase(kb.tbox, tuple(abox), kb.circ, kb.queries)
