"""Constructors for the standard group/module instances used by the tests,
the acceptance run, and the CLI corpus export.

Every registered instance carries its expected facts (orders, nilpotence
classes, named subgroup identities) and re-verifies them on construction.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import OliverError, UnsupportedInstance
from .linalg import FieldSpec, FpMatrix, Subspace, nullspace, rref
from .groups import (
    DEFAULT_CAP,
    ExplicitGroup,
    SubgroupHandle,
    close,
    nilpotence_class,
    thompson_subgroup,
)
from .action import SemidirectContext, find_offenders, ps_degree


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def unitriangular(n: int, p: int, cap: int = DEFAULT_CAP) -> ExplicitGroup:
    """Full upper unitriangular group UT(n, p) as n x n matrices, generated
    by the superdiagonal transvections I + E_{i,i+1}.  Order p^(n(n-1)/2),
    class n - 1."""
    if n < 2:
        raise OliverError("unitriangular needs n >= 2")
    fs = FieldSpec(p)
    gens = []
    for i in range(n - 1):
        m = np.eye(n, dtype=np.int64)
        m[i, i + 1] = 1
        gens.append(FpMatrix(m, p))
    g = close(fs, gens, cap=cap)
    assert g.order == p ** (n * (n - 1) // 2)
    return g


def unitriangular_context(n: int, p: int, cap: int = DEFAULT_CAP) -> SemidirectContext:
    """UT(n, p) together with its natural module F_p^n."""
    return SemidirectContext(unitriangular(n, p, cap=cap))


def _perm_matrix(perm, p: int) -> FpMatrix:
    n = len(perm)
    m = np.zeros((n, n), dtype=np.int64)
    for i, j in enumerate(perm):
        m[i, j] = 1
    return FpMatrix(m, p)


@dataclass
class WreathGroup:
    """C_p wr C_p as degree-p^2 permutation matrices, with the base subgroup
    (the direct product of the p block cycles) exposed."""

    group: ExplicitGroup
    base: SubgroupHandle
    p: int


def wreath_cp_cp(p: int, cap: int = DEFAULT_CAP) -> WreathGroup:
    """The regular wreath product C_p wr C_p of order p^(p+1).

    Points are (block, position) pairs flattened to range(p^2); the base
    generators cycle the positions within one block each, and the top
    generator shifts the blocks."""
    n = p * p
    base_perms = []
    for b in range(p):
        perm = list(range(n))
        for i in range(p):
            perm[b * p + i] = b * p + (i + 1) % p
        base_perms.append(perm)
    top = [((b + 1) % p) * p + i for b in range(p) for i in range(p)]
    gens = [_perm_matrix(q, p) for q in base_perms] + [_perm_matrix(top, p)]
    g = close(FieldSpec(p), gens, cap=cap)
    assert g.order == p ** (p + 1)
    base_idx = [g.index_of(m) for m in gens[:-1]]
    base = g.subgroup_from_gens(base_idx)
    assert base.order == p ** p
    return WreathGroup(group=g, base=base, p=p)


def extraspecial_exponent_p(p: int, cap: int = DEFAULT_CAP) -> ExplicitGroup:
    """The extraspecial group of order p^3 and exponent p, realized as
    UT(3, p)."""
    return unitriangular(3, p, cap=cap)


def jordan_block_module(n: int, p: int, cap: int = DEFAULT_CAP) -> SemidirectContext:
    """The cyclic group generated by a single full Jordan block J_n acting on
    F_p^n.  For n <= p this is a PS-module of degree min(n, p)."""
    m = np.eye(n, dtype=np.int64)
    for i in range(n - 1):
        m[i, i + 1] = 1
    g = close(FieldSpec(p), [FpMatrix(m, p)], cap=cap)
    return SemidirectContext(g)


def direct_sum_contexts(*contexts, cap: int = DEFAULT_CAP) -> SemidirectContext:
    """Diagonal direct sum: each summand contributes its i-th generator to a
    block-diagonal generator of the sum, so G acts diagonally on V_1 + V_2 +
    ...  All summands must share p and have the same number of generators."""
    if not contexts:
        raise OliverError("direct_sum_contexts needs at least one context")
    p = contexts[0].p
    gen_lists = []
    for ctx in contexts:
        if ctx.p != p:
            raise OliverError("direct summands must share the same prime")
        gen_lists.append([ctx.G.arr()[i] for i in ctx.G._gen_idx])
    counts = {len(gl) for gl in gen_lists}
    if len(counts) != 1:
        raise OliverError(
            "diagonal direct sum needs the same number of generators per summand"
        )
    dims = [ctx.n for ctx in contexts]
    total = sum(dims)
    gens = []
    for i in range(counts.pop()):
        m = np.zeros((total, total), dtype=np.int64)
        off = 0
        for gl, d in zip(gen_lists, dims):
            m[off : off + d, off : off + d] = gl[i]
            off += d
        gens.append(FpMatrix(m, p))
    return SemidirectContext(close(FieldSpec(p), gens, cap=cap))


# ---------------------------------------------------------------------------
# Module restriction / quotient helpers (used to reconstruct the candidate
# 8-dimensional modules from the degree-9 permutation module)
# ---------------------------------------------------------------------------


def _coords_in_rowspace(basis: np.ndarray, rows: np.ndarray, p: int) -> np.ndarray:
    """Coordinates of each row of `rows` in the span of `basis` (full row
    rank, RREF), i.e. the C with C @ basis = rows."""
    r = rref(basis, p)
    if r.shape[0] != basis.shape[0]:
        raise OliverError("basis rows must be independent")
    # With basis already in RREF, the pivot-column entries of a vector in the
    # row space are exactly its coordinates.
    pivots = [int(np.flatnonzero(row)[0]) for row in r]
    coords = rows[:, pivots] % p
    if np.any((coords @ r - rows) % p):
        raise OliverError("rows not contained in the span of the basis")
    return coords


def submodule_action(gens, basis: np.ndarray, p: int):
    """Matrices of the action of each generator on the invariant subspace
    spanned by `basis` (rows, RREF)."""
    b = rref(basis, p)
    out = []
    for g in gens:
        out.append(FpMatrix(_coords_in_rowspace(b, (b @ g.a) % p, p), p))
    return out


def quotient_action(gens, sub: Subspace, p: int):
    """Matrices of the action of each generator on V / sub, in the basis of
    cosets of a complement (the non-pivot coordinates of sub)."""
    n = sub.ambient_dim
    pivots = set()
    if sub.dim:
        pivots = {int(np.flatnonzero(row)[0]) for row in sub.basis}
    free = [j for j in range(n) if j not in pivots]
    if len(free) != n - sub.dim:
        raise OliverError("degenerate pivot structure")
    lift = np.zeros((len(free), n), dtype=np.int64)
    for i, j in enumerate(free):
        lift[i, j] = 1

    def reduce_rows(rows):
        # subtract the sub-component: for each pivot column, clear it using
        # the corresponding RREF basis row of sub
        r = rows % p
        for row in sub.basis:
            j = int(np.flatnonzero(row)[0])
            r = (r - np.outer(r[:, j], row)) % p
        return r[:, free]

    return [FpMatrix(reduce_rows((lift @ g.a) % p), p) for g in gens]


@dataclass
class CandidateModule:
    """One reconstructed faithful module candidate with its diagnostics."""

    name: str
    context: SemidirectContext
    is_f_module: bool
    offender_count: int
    ps_degree: int


def candidate_modules_for_wreath3(cap: int = DEFAULT_CAP):
    """The natural 8-dimensional candidates for the C_3 wr C_3 module.

    Starting from the degree-9 permutation module over F_3 (the wreath group
    itself in its permutation-matrix form), build the augmentation submodule
    (coordinate sums zero), the quotient by the fixed points (the constant
    vectors), and the block-augmentation submodule (sums zero within every
    block), and keep those on which the group acts faithfully.  On the
    block-augmentation candidate the base subgroup offends with equality
    (27 * 27 = 3^6), so the search does recover an F-module."""
    w = wreath_cp_cp(3, cap=cap)
    p = 3
    gens = [w.group.arr()[i] for i in w.group._gen_idx]
    gens = [FpMatrix(m, p) for m in gens]
    out = []

    aug_basis = nullspace(np.ones((9, 1), dtype=np.int64), p)  # sum-zero rows
    aug_gens = submodule_action(gens, aug_basis, p)
    fixed = Subspace(np.ones((1, 9), dtype=np.int64), p, 9)
    quo_gens = quotient_action(gens, fixed, p)
    block_checks = np.zeros((9, 3), dtype=np.int64)
    for b in range(3):
        block_checks[3 * b : 3 * b + 3, b] = 1
    blk_gens = submodule_action(gens, nullspace(block_checks, p), p)

    for name, mats in (
        ("augmentation", aug_gens),
        ("quotient-by-fixed", quo_gens),
        ("block-augmentation", blk_gens),
    ):
        g8 = close(FieldSpec(p), mats, cap=cap)
        if g8.order != w.group.order:
            continue  # not faithful
        ctx = SemidirectContext(g8)
        offs = find_offenders(ctx)
        out.append(
            CandidateModule(
                name=name,
                context=ctx,
                is_f_module=bool(offs),
                offender_count=len(offs),
                ps_degree=ps_degree(ctx),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


@dataclass
class InstanceSpec:
    """A named corpus instance: a builder plus expected facts re-verified on
    every build."""

    name: str
    p: int
    build: object  # () -> instance (ExplicitGroup | SemidirectContext | WreathGroup)
    facts: list = field(default_factory=list)  # [(description, instance -> bool)]

    def construct(self, verify: bool = True):
        obj = self.build()
        if verify:
            for desc, check in self.facts:
                if not check(obj):
                    raise OliverError(f"corpus fact failed for {self.name}: {desc}")
        return obj


def _group_of(obj) -> ExplicitGroup:
    if isinstance(obj, ExplicitGroup):
        return obj
    if isinstance(obj, SemidirectContext):
        return obj.G
    if isinstance(obj, WreathGroup):
        return obj.group
    raise UnsupportedInstance(f"no group in {type(obj).__name__}")


def _wreath3_je_is_base(w: WreathGroup) -> bool:
    return thompson_subgroup(w.group).key == w.base.key


CORPUS = [
    InstanceSpec(
        name="ut2_5",
        p=5,
        build=lambda: unitriangular_context(2, 5),
        facts=[
            ("order 5", lambda c: c.G.order == 5),
            ("abelian (class 1)", lambda c: nilpotence_class(c.G) == 1),
        ],
    ),
    InstanceSpec(
        name="ut3_5",
        p=5,
        build=lambda: unitriangular_context(3, 5),
        facts=[
            ("order 125", lambda c: c.G.order == 125),
            ("class 2", lambda c: nilpotence_class(c.G) == 2),
            ("natural module is an F-module", lambda c: bool(find_offenders(c))),
        ],
    ),
    InstanceSpec(
        name="ut4_5",
        p=5,
        build=lambda: unitriangular_context(4, 5),
        facts=[
            ("order 5^6", lambda c: c.G.order == 5**6),
            ("class 3", lambda c: nilpotence_class(c.G) == 3),
        ],
    ),
    InstanceSpec(
        name="wreath3",
        p=3,
        build=lambda: wreath_cp_cp(3),
        facts=[
            ("order 81", lambda w: w.group.order == 81),
            ("base of order 27", lambda w: w.base.order == 27),
            ("class 3", lambda w: nilpotence_class(w.group) == 3),
            ("J_e equals the base subgroup", _wreath3_je_is_base),
        ],
    ),
    InstanceSpec(
        name="extraspecial5",
        p=5,
        build=lambda: extraspecial_exponent_p(5),
        facts=[
            ("order 125", lambda g: g.order == 125),
            ("exponent p", lambda g: bool(np.all(g.element_orders() <= 5))),
        ],
    ),
    InstanceSpec(
        name="jordan3_5",
        p=5,
        build=lambda: jordan_block_module(3, 5),
        facts=[
            ("cyclic of order 5", lambda c: c.G.order == 5),
            ("PS-module of degree 3", lambda c: ps_degree(c) == 3),
            ("no offenders", lambda c: not find_offenders(c)),
        ],
    ),
    InstanceSpec(
        name="jordan5_5",
        p=5,
        build=lambda: jordan_block_module(5, 5),
        facts=[
            ("cyclic of order 5", lambda c: c.G.order == 5),
            ("PS-module of degree 5", lambda c: ps_degree(c) == 5),
            ("no offenders", lambda c: not find_offenders(c)),
        ],
    ),
    InstanceSpec(
        name="jordan5_5_double",
        p=5,
        build=lambda: direct_sum_contexts(
            jordan_block_module(5, 5), jordan_block_module(5, 5)
        ),
        facts=[
            ("diagonal G cyclic of order 5", lambda c: c.G.order == 5),
            ("PS-module of degree 5", lambda c: ps_degree(c) == 5),
            ("no offenders", lambda c: not find_offenders(c)),
        ],
    ),
]


def instance_names():
    return [spec.name for spec in CORPUS]


def get_instance(name: str, verify: bool = True):
    for spec in CORPUS:
        if spec.name == name:
            return spec.construct(verify=verify)
    raise OliverError(f"unknown corpus instance {name!r}")


def corpus_groups():
    """(name, ExplicitGroup) for every corpus instance, deduplicated by the
    underlying group's generating data."""
    out = []
    for spec in CORPUS:
        out.append((spec.name, _group_of(spec.construct(verify=False))))
    return out


def export_input_text(obj) -> str:
    """Render an instance in the CLI text input format."""
    if isinstance(obj, SemidirectContext):
        g = obj.G
        header = [f"p {g.p}", f"module-dim {obj.n}"]
    else:
        g = _group_of(obj)
        header = [f"p {g.p}"]
    lines = ["oliver-input v1"] + header
    for i in g._gen_idx:
        lines.append("gen")
        for row in g.arr()[i]:
            lines.append(" ".join(str(int(x)) for x in row))
    return "\n".join(lines) + "\n"
