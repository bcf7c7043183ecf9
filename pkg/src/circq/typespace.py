"""Unary type spaces over normalized TBoxes: locally consistent types,
successor compatibility, realizable-type elimination, and the core/noncore
split of a finite interpretation."""

from __future__ import annotations

from dataclasses import dataclass, field

from .syntax import (CkbError, KnowledgeBase, Role, NSubEx, NExSub, NTop,
                     NAndSub, NSubNeg, NNegSub, NormalizedTBox, normalize_tbox,
                     is_normalized)
from .semantics import Interpretation, RoleHierarchy


class TypeSpaceError(CkbError):
    pass


# === type space ==============================================================

@dataclass
class CoreSplit:
    """Partition of an interpretation's elements by how often their type
    recurs anonymously.  A type is core when its anonymous instance count
    stays below the threshold (the number of realizable types)."""
    threshold: int
    counts: dict[int, int]
    core_types: frozenset[int]
    noncore_types: frozenset[int]
    core_elements: tuple[int, ...]


@dataclass
class TypeSpace:
    universe: tuple[str, ...]
    types: tuple[int, ...]
    nt: NormalizedTBox
    hier: RoleHierarchy
    _bit: dict[str, int] = field(default_factory=dict)
    _needs: dict[Role, tuple[tuple[tuple[int, int], ...],
                             tuple[tuple[int, int], ...]]] = field(default_factory=dict)

    def bit(self, name: str) -> int:
        return self._bit[name]

    def names_of(self, mask: int) -> frozenset[str]:
        return frozenset(n for n in self.universe if mask >> self._bit[n] & 1)

    def _need_lists(self, role: Role):
        # for each exists-on-the-left shape, cache which implications an edge
        # along `role` triggers: (filler bit in target, head bit in source)
        # when role entails the shape's role, and the mirrored pair when the
        # inverse does
        if role in self._needs:
            return self._needs[role]
        fwd: list[tuple[int, int]] = []
        bwd: list[tuple[int, int]] = []
        for s in self.nt.shapes:
            if not isinstance(s, NExSub):
                continue
            if s.b not in self._bit or s.a not in self._bit:
                continue
            pair = (self._bit[s.b], self._bit[s.a])
            if self.hier.entails(role, s.role):
                fwd.append(pair)
            if self.hier.entails(role.inverse(), s.role):
                bwd.append(pair)
        res = (tuple(fwd), tuple(bwd))
        self._needs[role] = res
        return res

    def edge_ok(self, t: int, role: Role, u: int) -> bool:
        """Whether an edge along `role` from an element of type t to one of
        type u is consistent with every exists-on-the-left axiom."""
        fwd, bwd = self._need_lists(role)
        for b, a in fwd:
            if u >> b & 1 and not t >> a & 1:
                return False
        for b, a in bwd:
            if t >> b & 1 and not u >> a & 1:
                return False
        return True

    def tp_of(self, I: Interpretation, d: int) -> int:
        t = 0
        for i, n in enumerate(self.universe):
            if I.mask(n) >> d & 1:
                t |= 1 << i
        return t

    def realized(self, I: Interpretation) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for d in range(I.n):
            out.setdefault(self.tp_of(I, d), []).append(d)
        return out

    def core_split(self, I: Interpretation) -> CoreSplit:
        threshold = len(self.types)
        named = set(I.named.values())
        counts: dict[int, int] = {}
        tps = [self.tp_of(I, d) for d in range(I.n)]
        for d, t in enumerate(tps):
            counts.setdefault(t, 0)
            if d not in named:
                counts[t] += 1
        core = frozenset(t for t, c in counts.items() if c < threshold)
        noncore = frozenset(t for t in counts if t not in core)
        core_elems = tuple(d for d, t in enumerate(tps) if t in core)
        return CoreSplit(threshold, counts, core, noncore, core_elems)

    def canonical(self) -> tuple[Interpretation, tuple[int, ...]]:
        """One model of the TBox (empty ABox) whose element i realizes
        types[i]; every realizable type occurs exactly once."""
        n = len(self.types)
        concepts = {name: 0 for name in self.universe}
        for i, t in enumerate(self.types):
            for name in self.universe:
                if t >> self._bit[name] & 1:
                    concepts[name] |= 1 << i
        base: dict[str, set[tuple[int, int]]] = {r: set() for r in self.nt.role_names()}
        for r in self.nt.role_names():
            ro = Role(r)
            for i, t in enumerate(self.types):
                for j, u in enumerate(self.types):
                    if self.edge_ok(t, ro, u):
                        base[r].add((i, j))
        roles: dict[str, set[tuple[int, int]]] = {r: set() for r in base}
        for r, pairs in base.items():
            for sup in self.hier.supers(Role(r)):
                tgt = roles.setdefault(sup.name, set())
                tgt |= pairs if not sup.inverted else {(j, i) for i, j in pairs}
        return Interpretation(n, {}, concepts, {r: frozenset(p) for r, p in roles.items()}), self.types


def build_typespace(kb: KnowledgeBase, *, cap: int = 12) -> TypeSpace:
    """Realizable unary types of the KB's TBox, which must already be in
    normal form.  Only concept names mentioned by the TBox participate."""
    if not is_normalized(kb.tbox):
        raise TypeSpaceError("type space requires a TBox already in normal form")
    nt = normalize_tbox(kb.tbox)
    universe = tuple(sorted(nt.concept_names()))
    if len(universe) > cap:
        raise TypeSpaceError(
            f"type space over {len(universe)} concept names exceeds the cap of {cap}")
    hier = RoleHierarchy(kb.tbox)
    sp = TypeSpace(universe, (), nt, hier)
    sp._bit = {n: i for i, n in enumerate(universe)}
    bit = sp._bit

    forced = 0
    for s in nt.shapes:
        if isinstance(s, NTop):
            forced |= 1 << bit[s.a]
    local: list[int] = []
    for t in range(1 << len(universe)):
        if t & forced != forced:
            continue
        ok = True
        for s in nt.shapes:
            if isinstance(s, NAndSub):
                if t >> bit[s.a1] & 1 and t >> bit[s.a2] & 1 and not t >> bit[s.b] & 1:
                    ok = False
                    break
            elif isinstance(s, NSubNeg):
                if t >> bit[s.a] & 1 and t >> bit[s.b] & 1:
                    ok = False
                    break
            elif isinstance(s, NNegSub):
                if not (t >> bit[s.b] & 1 or t >> bit[s.a] & 1):
                    ok = False
                    break
        if ok:
            local.append(t)

    # drop types whose existential obligations no surviving type can witness
    obligations = [(bit[s.a], s.role, bit[s.b])
                   for s in nt.shapes if isinstance(s, NSubEx)]
    alive = set(local)
    changed = bool(obligations)
    while changed:
        changed = False
        for t in sorted(alive):
            for abit, role, bbit in obligations:
                if not t >> abit & 1:
                    continue
                if not any(u >> bbit & 1 and sp.edge_ok(t, role, u) for u in alive):
                    alive.discard(t)
                    changed = True
                    break
    sp.types = tuple(sorted(alive))
    return sp
