"""Semidirect products S = V x| G with V an elementary abelian module.

V is kept symbolic: it is never enumerated as group elements.  Everything on
the V side is subspace linear algebra over F_p, and only G is enumerated.
An explicit mode (full closure of the affine embedding of S) exists for
oracle cross-checks on small instances.

Conventions: row vectors act on the right (v |-> v.g), commutators on the
module are [v, g] = v(g - 1), and the affine embedding of s = (v, g) is the
(n+1) x (n+1) block matrix [[g, 0], [v, 1]].
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import (
    CapExceeded,
    DimensionMismatch,
    NoProductMaximal,
    TheoremViolation,
    UnsupportedInstance,
)
from .linalg import FieldSpec, FpMatrix, Subspace, kernel, unipotent_index
from .groups import (
    DEFAULT_CAP,
    ExplicitGroup,
    SearchNode,
    SubgroupHandle,
    center,
    close,
    enumerate_abelian_subgroups,
    normal_closure,
    omega1,
    upper_central_series,
)


# ---------------------------------------------------------------------------
# Context
# ---------------------------------------------------------------------------


class SemidirectContext:
    """The pair (G, V) with G <= GL(n, p) a p-group acting on V = F_p^n.

    The action is faithful by construction (elements of G are the matrices
    themselves); the group being a p-group is enforced by ExplicitGroup.
    """

    def __init__(self, group: ExplicitGroup):
        self.G = group
        self.field = group.field
        self.p = group.p
        self.n = group.dim
        self.affine_dim = group.dim + 1
        self.module_order = group.p ** group.dim
        self._explicit = None
        self._default_series = None
        self._offender_cache = {}

    def __repr__(self):
        return (
            f"SemidirectContext(p={self.p}, n={self.n}, |G|={self.G.order})"
        )

    @property
    def full_module(self) -> Subspace:
        return Subspace.full(self.n, self.p)

    # -- affine embedding ---------------------------------------------------

    def embed_g(self, gmat: np.ndarray) -> FpMatrix:
        """(0, g) as an affine matrix."""
        m = np.eye(self.affine_dim, dtype=np.int64)
        m[: self.n, : self.n] = gmat % self.p
        return FpMatrix(m, self.p)

    def embed_v(self, v) -> FpMatrix:
        """(v, 1) as an affine matrix (a translation)."""
        m = np.eye(self.affine_dim, dtype=np.int64)
        m[self.n, : self.n] = np.asarray(v, dtype=np.int64) % self.p
        return FpMatrix(m, self.p)

    def embed(self, v, gmat) -> FpMatrix:
        m = np.eye(self.affine_dim, dtype=np.int64)
        m[: self.n, : self.n] = gmat % self.p
        m[self.n, : self.n] = np.asarray(v, dtype=np.int64) % self.p
        return FpMatrix(m, self.p)

    def project(self, m: FpMatrix) -> FpMatrix:
        """pi: S -> G, the quotient by the translation subgroup V."""
        return FpMatrix(m.a[: self.n, : self.n], self.p)

    def v_part(self, m: FpMatrix) -> np.ndarray:
        return m.a[self.n, : self.n].copy()

    def explicit_group(self, cap: int | None = None) -> ExplicitGroup:
        """Full enumeration of the embedded S (explicit small-S mode)."""
        if self._explicit is None:
            gens = [self.embed_g(self.G.arr()[i]) for i in self.G._gen_idx]
            gens += [
                self.embed_v(row)
                for row in np.eye(self.n, dtype=np.int64)
            ]
            s = close(self.field, gens, cap=cap or DEFAULT_CAP)
            if s.order != self.module_order * self.G.order:
                raise TheoremViolation(
                    "embedded S has wrong order; the extension is not split "
                    "as expected",
                    certificate={"order": s.order},
                )
            self._explicit = s
        return self._explicit


# ---------------------------------------------------------------------------
# Product subgroups A = D x E
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProductSubgroup:
    """A = D.E <= S with D an E-invariant subspace of V, E <= G.

    Then A ∩ V = D and pi(A) = A ∩ G = E.  The members of A_x(S)
    additionally satisfy D <= C_V(E) (which makes A abelian when E is).
    """

    D: Subspace
    E: SubgroupHandle

    @property
    def order(self) -> int:
        return self.D.size * self.E.order

    @property
    def key(self) -> bytes:
        return self.D.key + self.E.key

    def conjugate(self, ctx: SemidirectContext, g_idx: int) -> "ProductSubgroup":
        """A^g for g in G: (D.g, E^g)."""
        gmat = ctx.G.arr()[g_idx]
        return ProductSubgroup(self.D.apply(gmat), self.E.conjugate(g_idx))

    def handle_in(self, ctx: SemidirectContext, s: ExplicitGroup) -> SubgroupHandle:
        """The same subgroup inside the explicit embedded S."""
        gens = [
            s.index_of(ctx.embed_g(ctx.G.arr()[i])) for i in self.E.gens_idx
        ]
        gens += [s.index_of(ctx.embed_v(row)) for row in self.D.basis]
        if not gens:
            return s.trivial_handle()
        return s.subgroup_from_gens(gens)


def validate_product(ctx: SemidirectContext, a: ProductSubgroup) -> None:
    """D must be invariant under E, or D.E is not even a subgroup."""
    if a.D.ambient_dim != ctx.n or a.D.p != ctx.p:
        raise DimensionMismatch("module part lives in the wrong space")
    for i in a.E.gens_idx:
        if a.D.apply(ctx.G.arr()[i]) != a.D:
            raise TheoremViolation(
                "product data with D not E-invariant",
                certificate={"D": a.D.basis.tolist(), "gen": int(i)},
            )


def is_abelian_product(ctx: SemidirectContext, a: ProductSubgroup) -> bool:
    return a.E.is_abelian() and fixed_space(ctx, a.E).contains(a.D)


def product_closure(ctx: SemidirectContext, b: SubgroupHandle) -> ProductSubgroup:
    """B |-> B_x = (B ∩ V).pi(B) for B a subgroup of the embedded S.

    Satisfies: (B_x)_x = B_x, |B| = |B_x|, and abelian B gives abelian B_x.
    """
    s = b.ambient
    if s.dim != ctx.affine_dim:
        raise DimensionMismatch("expected a subgroup of the embedded S")
    mats = s.arr()[b.idx]
    in_v = (
        mats[:, : ctx.n, : ctx.n] == np.eye(ctx.n, dtype=np.int64)
    ).all(axis=(1, 2))
    d = Subspace(mats[in_v][:, ctx.n, : ctx.n], ctx.p, ctx.n)
    proj = mats[:, : ctx.n, : ctx.n]
    e_idx = np.unique(ctx.G.lookup_rows(proj))
    e = SubgroupHandle(ctx.G, e_idx)
    return ProductSubgroup(d, e)


# ---------------------------------------------------------------------------
# Module-side commutators
# ---------------------------------------------------------------------------


def fixed_space(ctx: SemidirectContext, e: SubgroupHandle) -> Subspace:
    """C_V(E) = ∩ kernel(e - 1); generators of E suffice."""
    return _fixed_space_of_gens(ctx, [ctx.G.arr()[i] for i in e.gens_idx])


def _fixed_space_of_gens(ctx, gen_mats) -> Subspace:
    out = Subspace.full(ctx.n, ctx.p)
    ident = np.eye(ctx.n, dtype=np.int64)
    for gmat in gen_mats:
        out = out.intersect(
            Subspace(
                _nullspace_rows(gmat - ident, ctx.p, ctx.n), ctx.p, ctx.n
            )
        )
        if out.dim == 0:
            break
    return out


def _nullspace_rows(mat, p, n):
    from .linalg import nullspace

    return nullspace(np.asarray(mat, dtype=np.int64) % p, p)


def _bracket_once(ctx: SemidirectContext, u: Subspace, gen_mats) -> Subspace:
    """[U, H] for H-invariant U, via the augmentation images of generators,
    closed to a fixed point (needed because (g-1)h is not a generator image).
    """
    ident = np.eye(ctx.n, dtype=np.int64)
    w = Subspace.zero(ctx.n, ctx.p)
    offsets = [(gmat - ident) % ctx.p for gmat in gen_mats]
    for off in offsets:
        w = w.sum(u.apply(off))
    changed = True
    while changed:
        changed = False
        for off in offsets:
            s = w.sum(w.apply(off))
            if s.dim != w.dim:
                w = s
                changed = True
    return w


def module_bracket(ctx: SemidirectContext, who, k: int) -> Subspace:
    """[V, who; k] as a subspace of V.

    who may be an FpMatrix, an index into G, or a SubgroupHandle.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if isinstance(who, SubgroupHandle):
        gen_mats = [ctx.G.arr()[i] for i in who.gens_idx]
        u = Subspace.full(ctx.n, ctx.p)
        for _ in range(k):
            u = _bracket_once(ctx, u, gen_mats)
            if u.dim == 0:
                break
        return u
    if isinstance(who, (int, np.integer)):
        gmat = ctx.G.arr()[int(who)]
    else:
        gmat = who.a
    ident = np.eye(ctx.n, dtype=np.int64)
    powk = np.eye(ctx.n, dtype=np.int64)
    off = (gmat - ident) % ctx.p
    for _ in range(k):
        powk = (powk @ off) % ctx.p
    return Subspace(powk, ctx.p, ctx.n)


def is_quadratic(ctx: SemidirectContext, e: SubgroupHandle) -> bool:
    """[V, E, E] = 1 with [V, E] != 1."""
    if module_bracket(ctx, e, 1).dim == 0:
        return False
    return module_bracket(ctx, e, 2).dim == 0


# ---------------------------------------------------------------------------
# PS-modules and offenders
# ---------------------------------------------------------------------------


def ps_degree(ctx: SemidirectContext) -> int:
    """min over 1 != z in Omega_1 Z(G) of the unipotent index of z on V."""
    if ctx.G.order == 1:
        raise UnsupportedInstance("ps_degree undefined for the trivial group")
    zc = omega1(center(ctx.G.full_handle()))
    best = None
    for i in zc.idx:
        if int(i) == ctx.G.identity_idx:
            continue
        d = unipotent_index(FpMatrix(ctx.G.arr()[int(i)], ctx.p))
        best = d if best is None else min(best, d)
    if best is None:
        raise UnsupportedInstance("ps_degree undefined for the trivial group")
    return best


def is_ps_module(ctx: SemidirectContext, k: int) -> bool:
    return ps_degree(ctx) >= k


@dataclass(frozen=True)
class Offender:
    """Nontrivial elementary abelian E <= G with |E| |C_V(E)| >= |V|."""

    E: SubgroupHandle
    fixed: Subspace
    defect: int          # log_p(|E| |C_V(E)|) - log_p|V|
    quadratic: bool
    two_subnormal: bool


def _gen_fixed_cache(ctx):
    cache = {(): Subspace.full(ctx.n, ctx.p)}

    def fs(gens: tuple) -> Subspace:
        got = cache.get(gens)
        if got is None:
            parent = fs(gens[:-1])
            ident = np.eye(ctx.n, dtype=np.int64)
            gmat = ctx.G.arr()[gens[-1]]
            got = parent.intersect(
                Subspace(_nullspace_rows(gmat - ident, ctx.p, ctx.n),
                         ctx.p, ctx.n)
            )
            cache[gens] = got
        return got

    return fs


def find_offenders(
    ctx: SemidirectContext,
    quadratic_only: bool = False,
    two_subnormal_only: bool = False,
    best_only: bool = False,
    max_count: int | None = None,
) -> list:
    """All offenders on V, in the deterministic subgroup-search order.

    Empty result means V is not an F-module for G.  Branch and bound: any
    extension of E has order at most the commuting-pool size and fixed space
    inside C_V(E), so subtrees that cannot reach |V| are cut.
    """
    cache_key = (quadratic_only, two_subnormal_only, best_only, max_count)
    cached = ctx._offender_cache.get(cache_key)
    if cached is not None:
        return list(cached)
    target = ctx.module_order
    fs = _gen_fixed_cache(ctx)

    def prune(node: SearchNode) -> bool:
        return node.comm_count * fs(node.gens).size >= target

    out = []
    for h in enumerate_abelian_subgroups(
        ctx.G, elementary_only=True, prune=prune, max_count=max_count
    ):
        if h.order == 1:
            continue
        fixed = fs(tuple(h.gens_idx))
        if h.order * fixed.size < target:
            continue
        quad = is_quadratic(ctx, h)
        if quadratic_only and not quad:
            continue
        _, two_sub = normal_closure(ctx.G, h)
        if two_subnormal_only and not two_sub:
            continue
        defect = _logp(h.order * fixed.size, ctx.p) - ctx.n
        out.append(Offender(h, fixed, defect, quad, two_sub))
    if best_only and out:
        top = max(o.defect for o in out)
        out = [o for o in out if o.defect == top]
    ctx._offender_cache[cache_key] = list(out)
    return out


def _logp(x: int, p: int) -> int:
    e = 0
    while x > 1:
        x //= p
        e += 1
    return e


# ---------------------------------------------------------------------------
# Central series of S through V
# ---------------------------------------------------------------------------


@dataclass
class ModuleSeries:
    """Ascending central series of S passing through V.

    Terms Z_1..Z_v_index are subspaces U_i <= V (with U_{i+1} = the full
    preimage of the S-action centralizer over U_i), then Z_{v_index+j} is the
    preimage under pi of the j-th upper-central term of G, ending at S.
    """

    module_terms: list   # [U_0 = 0, ..., U_m = V]
    group_terms: list    # [H_1, ..., H_c = G] (upper central series of G)
    name: str = "default"

    @property
    def v_index(self) -> int:
        return len(self.module_terms) - 1

    def __len__(self):
        return self.v_index + len(self.group_terms)

    def orders(self, ctx: SemidirectContext) -> list:
        out = [u.size for u in self.module_terms[1:]]
        out += [ctx.module_order * h.order for h in self.group_terms]
        return out


def central_series_through_V(ctx: SemidirectContext) -> ModuleSeries:
    """1 = U_0 < U_1 < ... < V < pi^-1(Z_1(G)) < ... < S.

    U_{i+1} = {v : v(g-1) in U_i for all generators g}; since each U_i is
    G-invariant, generators suffice.  The chain reaches V because G is
    unipotent on V, so it is strictly ascending.
    """
    p, n = ctx.p, ctx.n
    terms = [Subspace.zero(n, p)]
    ident = np.eye(n, dtype=np.int64)
    gen_mats = [ctx.G.arr()[i] for i in ctx.G._gen_idx]
    cur = terms[0]
    while cur.dim < n:
        nxt = Subspace.full(n, p)
        for gmat in gen_mats:
            off = (gmat - ident) % p
            # {v : v.off in cur} = preimage of cur under the linear map off
            nxt = nxt.intersect(_preimage(off, cur, p, n))
        if nxt.dim == cur.dim:
            raise TheoremViolation(
                "module central series stalled: the action of G on V is "
                "not unipotent",
                certificate={"dim": cur.dim},
            )
        terms.append(nxt)
        cur = nxt
    ucs = upper_central_series(ctx.G)
    group_terms = list(ucs.terms[1:]) if ctx.G.order > 1 else []
    if not group_terms:
        group_terms = [ctx.G.full_handle()]
    return ModuleSeries(module_terms=terms, group_terms=group_terms)


def _preimage(m: np.ndarray, target: Subspace, p: int, n: int) -> Subspace:
    """{v : v.m in target}."""
    if target.dim == n:
        return Subspace.full(n, p)
    # v.m in target  <=>  v.m.c^T = 0 where c spans the complement equations
    from .linalg import nullspace

    checks = nullspace(target.basis.T, p) if target.dim else np.eye(
        n, dtype=np.int64
    )
    # rows w with w . target-basis^T = 0 give the linear conditions:
    # target = {x : x.checks^T = 0}
    cond = (m @ checks.T) % p
    return Subspace(nullspace(cond, p), p, n)


# ---------------------------------------------------------------------------
# Profiles along a series and the <=_S ordering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeriesProfile:
    order: int
    intersections: tuple

    def __post_init__(self):
        v = self.intersections
        if any(v[i] > v[i + 1] for i in range(len(v) - 1)):
            raise ValueError("profile must be nondecreasing")
        if v and v[-1] != self.order:
            raise ValueError("last intersection must be the full order")


def profile(
    ctx: SemidirectContext, a: ProductSubgroup, series: ModuleSeries
) -> SeriesProfile:
    """(|A ∩ Z_1|, ..., |A ∩ Z_last|) for the product subgroup A = D x E.

    Below the V index, A ∩ Z_i = D ∩ U_i; at and above it,
    A ∩ pi^-1(H_j) = D x (E ∩ H_j).
    """
    validate_product(ctx, a)
    ints = []
    for u in series.module_terms[1:]:
        ints.append(a.D.intersect(u).size)
    for h in series.group_terms:
        ints.append(a.D.size * a.E.intersect(h).order)
    return SeriesProfile(order=a.order, intersections=tuple(ints))


def cmp_series(a: SeriesProfile, b: SeriesProfile) -> str:
    """A <_S B needs equal order, componentwise <=, strict somewhere."""
    if a.order != b.order or len(a.intersections) != len(b.intersections):
        return "incomparable"
    le = all(x <= y for x, y in zip(a.intersections, b.intersections))
    ge = all(x >= y for x, y in zip(a.intersections, b.intersections))
    if le and ge:
        return "equal"
    if le:
        return "less"
    if ge:
        return "greater"
    return "incomparable"


# ---------------------------------------------------------------------------
# A_x(S): maximum-order abelian product subgroups not inside V
# ---------------------------------------------------------------------------


def max_abelian_order(ctx: SemidirectContext) -> tuple:
    """(m, attaining subgroups): m = max(|V|, max_E |C_V(E)| |E|) over
    nontrivial abelian E <= G.

    m is the maximum order of an abelian subgroup of S: any abelian B <= S
    has |B| = |B_x| with B_x = (B ∩ V) x pi(B) abelian, and an abelian
    product subgroup D x E satisfies |D x E| <= |C_V(E)| |E|.
    """
    fs = _gen_fixed_cache(ctx)
    best = [ctx.module_order]
    found = []

    def prune(node: SearchNode) -> bool:
        return node.comm_count * fs(node.gens).size >= best[0]

    for h in enumerate_abelian_subgroups(
        ctx.G, elementary_only=False, prune=prune
    ):
        if h.order == 1:
            continue
        val = h.order * fs(tuple(h.gens_idx)).size
        if val > best[0]:
            best[0] = val
            found.clear()
        if val == best[0]:
            found.append(h)
    return best[0], found


def enumerate_A_times(ctx: SemidirectContext) -> list:
    """A_x(S) = {C_V(E) x E : E != 1 abelian attaining the maximum}.

    Empty (an error) exactly when every abelian subgroup of maximal order
    lies inside V, which requires V not to be an F-module.
    """
    m, attaining = max_abelian_order(ctx)
    if not attaining:
        raise NoProductMaximal(
            f"every abelian subgroup of maximum order {m} lies inside V"
        )
    out = [ProductSubgroup(fixed_space(ctx, e), e) for e in attaining]
    out.sort(key=lambda a: a.key)
    return out


def select_max(
    ctx: SemidirectContext, series: ModuleSeries | None = None
) -> ProductSubgroup:
    """A <=_S-maximal member of A_x(S), deterministically tie-broken by
    lexicographically greatest profile then smallest canonical key.

    Postcondition (asserted): V normalizes A, hence [V, A, A] = 1.
    """
    if series is None:
        series = default_series(ctx)
    members = enumerate_A_times(ctx)
    profs = [profile(ctx, a, series) for a in members]
    maximal = [
        (a, pa)
        for a, pa in zip(members, profs)
        if not any(cmp_series(pa, pb) == "less" for pb in profs)
    ]
    maximal.sort(key=lambda t: (_neg_lex(t[1].intersections), t[0].key))
    a = maximal[0][0]
    _assert_v_normalizes(ctx, a)
    return a


def _neg_lex(v):
    return tuple(-x for x in v)


def default_series(ctx: SemidirectContext) -> ModuleSeries:
    if ctx._default_series is None:
        ctx._default_series = central_series_through_V(ctx)
    return ctx._default_series


def _assert_v_normalizes(ctx: SemidirectContext, a: ProductSubgroup) -> None:
    """[V, E] <= D makes A invariant under V (and forces [V, A, A] = 1)."""
    ve = module_bracket(ctx, a.E, 1)
    if not a.D.contains(ve):
        raise TheoremViolation(
            "counterexample candidate: V does not normalize the selected "
            "maximal product subgroup",
            certificate={
                "D": a.D.basis.tolist(),
                "E_gens": list(a.E.gens_idx),
                "[V,E]": ve.basis.tolist(),
            },
        )
    if module_bracket(ctx, a.E, 2).dim != 0:
        raise TheoremViolation(
            "counterexample candidate: selected maximal A is not quadratic "
            "on V",
            certificate={"E_gens": list(a.E.gens_idx)},
        )
