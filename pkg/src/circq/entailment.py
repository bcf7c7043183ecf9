"""Top-level decision procedures: classical atom entailment, circumscribed
query entailment by bounded countermodel search, minimal-model enumeration,
and the domain bounds that make positive verdicts sound."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

from .syntax import (CkbError, KnowledgeBase, CircPattern, Query, Concept,
                     Name, Exists, Top, CI, Role, DialectInfo, ConceptAtom,
                     normalize_tbox, NegRI, detect_dialect, eliminate_nominals)
from .semantics import Interpretation, is_model, match_exists
from .brute import (build_flag_space, flag_satisfiable, all_models_explicit,
                    default_named, BruteBudgetError)
from .grounding import (build_ground_model, ground_no_match, solve,
                        SolverBudgetError, GroundingBudgetError)
from .circumscription import is_minimal, criteria_combined, criteria_data
from .typespace import build_typespace, TypeSpaceError


# === configuration and verdicts =============================================

@dataclass
class SearchConfig:
    """Knobs for the countermodel search.  `complete_bound` is a domain size
    the caller vouches for; positive verdicts are issued only after the
    search exhausts a bound some rule justifies."""
    max_domain: int = 8
    engine: str = "grounded"          # candidate generation: grounded | brute
    minimality: str = "brute"         # brute | grounded | criteria-combined | criteria-data
    blocking: str = "exact"           # exact | projection
    complete_bound: int | None = None
    clause_budget: int = 2_000_000
    assignment_budget: int = 1_000_000
    time_budget: float | None = None


@dataclass
class Verdict:
    status: str                       # entailed | not_entailed | resource_limit
    countermodel: Interpretation | None = None
    reached: int | None = None
    detail: str | None = None

    @property
    def entailed(self) -> bool:
        return self.status == "entailed"


def _deadline(config: SearchConfig) -> float | None:
    return None if config.time_budget is None else time.monotonic() + config.time_budget


def _remaining(deadline: float | None) -> float | None:
    if deadline is None:
        return None
    rem = deadline - time.monotonic()
    if rem <= 0:
        raise SolverBudgetError("time budget exhausted")
    return rem


# === search bounds ==========================================================

def _pow_guard(base: int, exp: int) -> int | None:
    """base ** exp, or None once the value would exceed 2^62."""
    if exp == 0 or base == 1:
        return 1
    if base == 0:
        return 0
    if exp * math.log2(base) > 62:
        return None
    return base ** exp


def is_atomic_query(q: Query | None) -> bool:
    return q is None or (len(q.disjuncts) == 1 and len(q.disjuncts[0]) == 1
                         and isinstance(q.disjuncts[0][0], ConceptAtom))


def theoretical_bound(dialect: DialectInfo | None, kb: KnowledgeBase,
                      q: Query | None) -> int | None:
    """Worst-case countermodel domain size for the dialect, or None when it
    exceeds 2^62 (search then runs to max_domain and may hit the cap)."""
    if dialect is None:
        dialect = detect_dialect(kb)
    na, nt = len(kb.abox), len(kb.tbox)
    nq = sum(len(d) for d in q.disjuncts) if q is not None else 1
    if is_atomic_query(q) and dialect.base in ("dllite_core", "dllite_horn"):
        return na + 2 * nt
    base = None if nt > 62 else na + 2 ** nt
    if base is None:
        return None
    if dialect.base == "dllite_bool":
        exp = nq * nq * (nt + 1)
    else:
        exp = _pow_guard(nt, nq)
        if exp is None:
            return None
    return _pow_guard(base, exp)


def complete_bound_for(kb: KnowledgeBase, q: Query | None, config: SearchConfig,
                       dialect: DialectInfo | None = None) -> tuple[int | None, str]:
    """Smallest domain bound some completeness rule justifies, with the rule's
    name; (None, reason) when no rule applies."""
    if dialect is None:
        dialect = detect_dialect(kb)
    inds = kb.individuals()
    floor = max(1, len(inds))
    cands: list[tuple[int, str]] = []
    if config.complete_bound is not None:
        cands.append((max(config.complete_bound, floor), "caller"))
    if not kb.role_names():
        # roles absent everywhere: restricting any countermodel to the named
        # elements (or one element) preserves modelhood, minimality and the
        # absence of matches
        cands.append((floor, "role-free"))
    else:
        if (is_atomic_query(q) and dialect.base in ("dllite_core", "dllite_horn")
                and not dialect.negative_role_inclusions and not kb.has_nominals()):
            direct = len(kb.abox) + 2 * len(kb.tbox)
            # shrinking through flag vectors keeps the named elements plus one
            # carrier per role direction, so never claim completeness below that
            safety = len(inds) + 2 * len(kb.role_names()) + 1
            cands.append((max(direct, safety), "aq-horn"))
        tb = theoretical_bound(dialect, kb, q)
        if tb is not None:
            cands.append((max(tb, floor), "theoretical"))
    if not cands:
        return None, "no finite bound applies"
    bound, tag = min(cands)
    return bound, tag


# === classical entailment ===================================================

def _fresh_name(kb: KnowledgeBase, stem: str) -> str:
    used = set(kb.concept_names())
    if stem not in used:
        return stem
    k = 0
    while f"{stem}{k}" in used:
        k += 1
    return f"{stem}{k}"


def classical_entails_concept(kb: KnowledgeBase, c: Concept,
                              individual: str | None, *,
                              max_domain: int = 64,
                              clause_budget: int = 2_000_000,
                              time_budget: float | None = None) -> bool:
    """Whether every model of the KB (circumscription ignored) puts the
    individual in the concept; individual None asks about every element of
    every model."""
    if isinstance(c, Exists) and isinstance(c.filler, Top) \
            and c.role.name not in kb.role_names():
        # unknown role: the concept is empty, so entailment is vacuity
        c = Name(_fresh_name(kb, "_QX"))
    if not isinstance(c, Name):
        # reduce to a name: K entails C(a) iff K + (C [= X) entails X(a)
        x = _fresh_name(kb, "_QX")
        kb = KnowledgeBase(kb.tbox + (CI(c, Name(x)),), kb.abox, kb.circ,
                           kb.queries)
        c = Name(x)
    inds = kb.individuals()
    if individual is not None and individual not in inds:
        raise CkbError(f"unknown individual {individual}")

    nr = len(kb.role_names())
    n_flag = len(inds) + 2 * nr + 1
    sp = build_flag_space(kb, n_flag, extra_concepts=(c.name,))
    if sp.ok:
        target = sp.named[individual] if individual is not None else len(sp.named)
        bit = 1 << sp.cbit(c.name)
        return flag_satisfiable(sp, forbid={target: bit}) is None

    # ground search; complete through |Ind| + |TP(T)| by quotienting any
    # countermodel's anonymous part to one element per type
    if kb.has_nominals():
        raise CkbError("classical entailment over nominals needs elimination first")
    nt = normalize_tbox(tuple(ax for ax in kb.tbox if not isinstance(ax, NegRI)))
    negris = [ax for ax in kb.tbox if isinstance(ax, NegRI)]
    bound = None
    if not negris:
        try:
            nkb = KnowledgeBase(nt.as_axioms(), kb.abox, kb.circ, {})
            bound = len(inds) + len(build_typespace(nkb).types)
        except TypeSpaceError:
            bound = None
    cnames = list(kb.concept_names())
    for x in nt.concept_names():
        if x not in cnames:
            cnames.append(x)
    rnames = kb.role_names()
    named = default_named(kb, max(1, len(inds)))
    deadline = None if time_budget is None else time.monotonic() + time_budget
    lo = max(1, len(inds)) if individual is not None else len(inds) + 1
    hi = min(bound, max_domain) if bound is not None else max_domain
    for n in range(lo, hi + 1):
        ctx = build_ground_model(nt, negris, kb.abox, named, n, cnames, rnames,
                                 clause_budget)
        target = named[individual] if individual is not None else len(named)
        ctx.cnf.add([-ctx.cvar(c.name, target)])
        m = solve(ctx.cnf, time_budget=_remaining(deadline))
        if m is not None:
            I = ctx.decode(m)
            if not is_model(I, kb).ok:
                raise CkbError("internal invariant violated: ground countermodel "
                               "fails model re-check")
            return False
    if bound is not None and hi >= bound:
        return True
    raise CkbError(f"classical entailment undecided within domain {hi}: "
                   "no applicable complete bound")


def classical_entails_atom(kb: KnowledgeBase, aname: str,
                           individual: str | None, **kw) -> bool:
    return classical_entails_concept(kb, Name(aname), individual, **kw)


# === circumscribed query entailment =========================================

def _minimal_check(kb: KnowledgeBase, I: Interpretation, cp: CircPattern,
                   config: SearchConfig, deadline: float | None):
    """Dispatch on the configured minimality strategy; returns (minimal,
    witness-or-None)."""
    how = config.minimality
    if how in ("brute", "grounded"):
        r = is_minimal(kb, I, cp, engine=how, time_budget=_remaining(deadline),
                       clause_budget=config.clause_budget)
        return r.minimal, r.witness
    if how == "criteria-combined":
        r = criteria_combined(kb, I, cp, clause_budget=config.clause_budget,
                              time_budget=_remaining(deadline))
        return not r.nonminimal, None
    if how == "criteria-data":
        r = criteria_data(kb, I, cp, clause_budget=config.clause_budget,
                          time_budget=_remaining(deadline))
        return r.holds, None
    raise CkbError(f"unknown minimality strategy {how}")


def _verify_countermodel(kb: KnowledgeBase, q: Query, ids: tuple[int, ...],
                         cp: CircPattern, I: Interpretation,
                         config: SearchConfig, deadline: float | None):
    if not is_model(I, kb).ok:
        raise CkbError("internal invariant violated: countermodel fails "
                       "model re-check")
    if match_exists(I, q, ids) is not None:
        raise CkbError("internal invariant violated: countermodel matches "
                       "the query")
    try:
        r = is_minimal(kb, I, cp, engine="brute", budget=1 << 14,
                       time_budget=_remaining(deadline))
    except BruteBudgetError:
        r = is_minimal(kb, I, cp, engine="grounded",
                       time_budget=_remaining(deadline),
                       clause_budget=config.clause_budget)
    if not r.minimal:
        raise CkbError("internal invariant violated: countermodel is not "
                       "minimal on re-check")


def _descend_to_minimal(kb: KnowledgeBase, I: Interpretation, cp: CircPattern,
                        config: SearchConfig, deadline: float | None) -> Interpretation:
    # witnesses never grow minimized names when priorities are empty, so the
    # total minimized mass strictly shrinks each step
    J = I
    while True:
        r = is_minimal(kb, J, cp, engine="grounded",
                       time_budget=_remaining(deadline),
                       clause_budget=config.clause_budget)
        if r.minimal:
            return J
        J = r.witness


def _projection_of(I: Interpretation, cp: CircPattern) -> list[tuple[str, int]]:
    out = []
    for a in cp.minimized:
        for d in range(I.n):
            if I.has(a, d):
                out.append((a, d))
    return out


def _require_projectable(cp: CircPattern):
    if cp.prefer or cp.fixed:
        raise CkbError("projection blocking requires an empty priority order "
                       "and no fixed names")


def _ground_context(kb: KnowledgeBase, q: Query | None, ids: tuple[int, ...],
                    named: dict[str, int], n: int, config: SearchConfig):
    nt = normalize_tbox(tuple(ax for ax in kb.tbox if not isinstance(ax, NegRI)))
    negris = [ax for ax in kb.tbox if isinstance(ax, NegRI)]
    cnames = list(kb.concept_names())
    for x in nt.concept_names():
        if x not in cnames:
            cnames.append(x)
    ctx = build_ground_model(nt, negris, kb.abox, named, n, cnames,
                             kb.role_names(), config.clause_budget)
    if q is not None:
        ground_no_match(ctx.cnf, q, ids, named, ctx.domain, ctx.cvar, ctx.rvar,
                        assignment_budget=config.assignment_budget)
    return ctx


def _search_at_grounded(kb: KnowledgeBase, q: Query, ids: tuple[int, ...],
                        cp: CircPattern, named: dict[str, int], n: int,
                        config: SearchConfig,
                        deadline: float | None) -> Interpretation | None:
    ctx = _ground_context(kb, q, ids, named, n, config)
    while True:
        m = solve(ctx.cnf, time_budget=_remaining(deadline))
        if m is None:
            return None
        I = ctx.decode(m)
        minimal, _ = _minimal_check(kb, I, cp, config, deadline)
        if minimal:
            return I
        if config.blocking == "exact":
            ctx.cnf.add(ctx.exact_blocking_clause(m))
            continue
        _require_projectable(cp)
        jmin = _descend_to_minimal(kb, I, cp, config, deadline)
        pi = _projection_of(jmin, cp)
        probe = ctx.cnf.snapshot()
        pos = set(pi)
        for a in cp.minimized:
            for d in range(n):
                v = ctx.cvar(a, d)
                probe.add([v] if (a, d) in pos else [-v])
        pm = solve(probe, time_budget=_remaining(deadline))
        if pm is not None:
            # every model sharing a minimal projection is itself minimal when
            # nothing is fixed and priorities are empty
            return ctx.decode(pm)
        ctx.cnf.add([-ctx.cvar(a, d) for (a, d) in pi])


def _search_at_brute(kb: KnowledgeBase, q: Query, ids: tuple[int, ...],
                     cp: CircPattern, named: dict[str, int], n: int,
                     config: SearchConfig,
                     deadline: float | None) -> Interpretation | None:
    for I in all_models_explicit(kb, n, named=named):
        _remaining(deadline)
        if match_exists(I, q, ids) is not None:
            continue
        minimal, _ = _minimal_check(kb, I, cp, config, deadline)
        if minimal:
            return I
    return None


def circ_entails(kb: KnowledgeBase, query: Query | str,
                 answer: tuple[str, ...] = (), *, cp: CircPattern | None = None,
                 config: SearchConfig | None = None) -> Verdict:
    """Whether the tuple is a certain answer over the circumscribed KB:
    search domain sizes upward for a minimal model without a match; the
    positive verdict needs a justified complete bound."""
    config = config or SearchConfig()
    cp = cp if cp is not None else kb.circ
    if isinstance(query, str):
        if query not in kb.queries:
            raise CkbError(f"unknown query {query}")
        query = kb.queries[query]
    if len(answer) != len(query.answer_vars):
        raise CkbError(f"query {query.name} expects {len(query.answer_vars)} "
                       f"answer terms, got {len(answer)}")
    work = KnowledgeBase(kb.tbox, kb.abox, cp, {query.name: query})
    if work.has_nominals():
        work, _info = eliminate_nominals(work)
        cp = work.circ
        query = work.queries[query.name]
    inds = work.individuals()
    for a in answer:
        if a not in inds:
            raise CkbError(f"answer term {a} is not a named individual")
    dialect = detect_dialect(work)
    bound, btag = complete_bound_for(work, query, config, dialect)
    lo = max(1, len(inds))
    hi = min(bound, config.max_domain) if bound is not None else config.max_domain
    named = default_named(work, lo)
    ids = tuple(named[a] for a in answer)
    deadline = _deadline(config)
    search = _search_at_grounded if config.engine == "grounded" else _search_at_brute
    n = lo
    try:
        while n <= hi:
            I = search(work, query, ids, cp, named, n, config, deadline)
            if I is not None:
                _verify_countermodel(work, query, ids, cp, I, config, deadline)
                return Verdict("not_entailed", countermodel=I, reached=n)
            n += 1
    except (SolverBudgetError, GroundingBudgetError, BruteBudgetError) as e:
        return Verdict("resource_limit", reached=n, detail=str(e))
    if bound is not None and hi >= bound:
        return Verdict("entailed", reached=hi, detail=f"complete: {btag}")
    return Verdict("resource_limit", reached=hi,
                   detail=f"domain cap {config.max_domain} below any complete "
                          f"bound ({btag})")


def certain_answers(kb: KnowledgeBase, query: Query | str, *,
                    cp: CircPattern | None = None,
                    config: SearchConfig | None = None) -> dict[tuple[str, ...], Verdict]:
    """Verdict for every candidate tuple of named individuals."""
    if isinstance(query, str):
        if query not in kb.queries:
            raise CkbError(f"unknown query {query}")
        query = kb.queries[query]
    inds = kb.individuals()
    arity = len(query.answer_vars)
    out: dict[tuple[str, ...], Verdict] = {}
    tuples: list[tuple[str, ...]] = [()]
    for _ in range(arity):
        tuples = [t + (a,) for t in tuples for a in inds]
    for t in tuples:
        out[t] = circ_entails(kb, query, t, cp=cp, config=config)
    return out


# === minimal model enumeration ==============================================

def _strip_to_signature(kb: KnowledgeBase, I: Interpretation) -> Interpretation:
    return Interpretation(I.n, dict(I.named),
                          {c: I.mask(c) for c in kb.concept_names()},
                          {r: I.pairs(Role(r)) for r in kb.role_names()})


def minimal_models(kb: KnowledgeBase, max_size: int, *,
                   cp: CircPattern | None = None,
                   config: SearchConfig | None = None):
    """All minimal models with domain size up to max_size, smallest domain
    first, lexicographic within a size; each restricted to the KB signature
    and emitted once."""
    config = config or SearchConfig()
    cp = cp if cp is not None else kb.circ
    if kb.has_nominals():
        raise CkbError("minimal-model enumeration requires a nominal-free KB")
    inds = kb.individuals()
    deadline = _deadline(config)
    named = default_named(kb, max(1, len(inds)))
    for n in range(max(1, len(inds)), max_size + 1):
        if config.engine == "brute":
            for I in all_models_explicit(kb, n, named=named):
                _remaining(deadline)
                minimal, _ = _minimal_check(kb, I, cp, config, deadline)
                if minimal:
                    yield I
            continue
        ctx = _ground_context(kb, None, (), named, n, config)
        seen = set()
        while True:
            m = solve(ctx.cnf, time_budget=_remaining(deadline))
            if m is None:
                break
            I = _strip_to_signature(kb, ctx.decode(m))
            key = I.canonical_key()
            if key not in seen:
                seen.add(key)
                minimal, _ = _minimal_check(kb, I, cp, config, deadline)
                if minimal:
                    yield I
            ctx.cnf.add(ctx.exact_blocking_clause(m))


def minimal_projections(kb: KnowledgeBase, max_size: int, *,
                        cp: CircPattern | None = None,
                        config: SearchConfig | None = None):
    """The minimized-name extensions realized by minimal models, one witness
    each, per domain size.  Every minimal model's projection appears: a model
    is minimal exactly when its projection is set-minimal among models of the
    same size, provided priorities are empty and nothing is fixed."""
    config = config or SearchConfig()
    cp = cp if cp is not None else kb.circ
    _require_projectable(cp)
    if kb.has_nominals():
        raise CkbError("projection enumeration requires a nominal-free KB")
    inds = kb.individuals()
    deadline = _deadline(config)
    named = default_named(kb, max(1, len(inds)))
    for n in range(max(1, len(inds)), max_size + 1):
        ctx = _ground_context(kb, None, (), named, n, config)
        while True:
            m = solve(ctx.cnf, time_budget=_remaining(deadline))
            if m is None:
                break
            jmin = _descend_to_minimal(kb, ctx.decode(m), cp, config, deadline)
            pi = _projection_of(jmin, cp)
            proj = {a: frozenset(d for (b, d) in pi if b == a)
                    for a in cp.minimized}
            yield n, proj, jmin
            ctx.cnf.add([-ctx.cvar(a, d) for (a, d) in pi])
