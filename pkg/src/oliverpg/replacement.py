"""Replacement engines and offender pipelines.

Contains the Thompson-style replacement step A* = N.C_A(N), the selection of
a 2-subnormal quadratic offender from a maximal product subgroup, the B_A
normalization checks, a matrix-logarithm Lie-ring engine for class <= 3
groups with the delta-replacement A* = A_1 + delta^2(A), the descent to a
normal elementary abelian W with the centralize-or-double-bracket dichotomy,
and the 2^k-factor expansion of iterated commutators over an abelian normal
subgroup.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CapExceeded,
    ClassTooHigh,
    ClosureFailure,
    HypothesisFailed,
    LogDomain,
    NonAbelianBracket,
    NonCommutingConjugates,
    NoQuadraticInOmega1ZN,
    PreconditionFailed,
    TheoremViolation,
    UnsupportedInstance,
)
from .linalg import (
    FpMatrix,
    Subspace,
    matrix_exp,
    matrix_log,
    nullspace,
    rref,
    unipotent_index,
)
from .groups import (
    DEFAULT_CAP,
    ExplicitGroup,
    SubgroupHandle,
    all_subgroups,
    center,
    centralizer,
    commutator_idx,
    maximal_elementary_abelian,
    nilpotence_class,
    normal_closure,
    omega1,
    upper_central_series,
)
from .action import (
    Offender,
    ProductSubgroup,
    SemidirectContext,
    default_series,
    enumerate_A_times,
    fixed_space,
    is_quadratic,
    module_bracket,
    product_closure,
    select_max,
    validate_product,
)


# ---------------------------------------------------------------------------
# Thompson replacement step: A* = N . C_A(N)
# ---------------------------------------------------------------------------


def thompson_step(
    s: ExplicitGroup,
    a: SubgroupHandle,
    v_idx: int,
    normal_terms=None,
    central_series=None,
) -> SubgroupHandle:
    """Replace the abelian subgroup A using N = [v, A]: A* = N.C_A(N).

    Requires N abelian (NonAbelianBracket otherwise).  Asserts A* abelian,
    |A| <= |A*|, and |A ∩ M| <= |A* ∩ M| for every supplied normal term M;
    when a whole central series is supplied and every intersection is equal,
    additionally asserts A* = A.
    """
    if not a.is_abelian():
        raise NonAbelianBracket("A must be abelian")
    n = _bracket_subgroup(s, v_idx, a)
    if not n.is_abelian():
        raise NonAbelianBracket("[v, A] is not abelian")
    can = _centralizer_within(s, a, n)
    a_star = n.join(can)
    if not a_star.is_abelian():
        raise TheoremViolation(
            "replacement output not abelian",
            certificate=_cert_pair(s, a, a_star),
        )
    if a_star.order < a.order:
        raise TheoremViolation(
            "replacement lost order", certificate=_cert_pair(s, a, a_star)
        )
    terms = list(normal_terms or [])
    if central_series is not None:
        terms += list(central_series.terms)
    all_equal = True
    for m in terms:
        am = a.intersect(m).order
        asm = a_star.intersect(m).order
        if am > asm:
            raise TheoremViolation(
                "intersection inequality violated",
                certificate=_cert_pair(s, a, a_star),
            )
        if am != asm:
            all_equal = False
    if (
        central_series is not None
        and all_equal
        and a.order == a_star.order
        and a_star != a
    ):
        raise TheoremViolation(
            "equal series profile must force A* = A",
            certificate=_cert_pair(s, a, a_star),
        )
    return a_star


def _bracket_subgroup(s: ExplicitGroup, v_idx: int, a: SubgroupHandle):
    """[v, A] = <[v, a] : a in A>, computed with one batched pass."""
    arr = s.arr()
    inv = s.inv_idx()
    vm = arr[v_idx]
    vinv = arr[inv[v_idx]]
    mats = arr[a.idx]
    mats_inv = arr[inv[a.idx]]
    comm = np.matmul(
        np.matmul(np.matmul(vinv[None], mats_inv) % s.p, vm[None]) % s.p,
        mats,
    ) % s.p
    idx = np.unique(s.lookup_rows(comm))
    gens = [int(i) for i in idx if int(i) != s.identity_idx]
    if not gens:
        return s.trivial_handle()
    return s.subgroup_from_gens(gens)


def _centralizer_within(s, a: SubgroupHandle, n: SubgroupHandle):
    """C_A(N) via the packed commuting bitsets."""
    if n.order == 1:
        return a
    bits = s.cent_bits()
    mask = np.unpackbits(
        np.bitwise_and.reduce(bits[list(n.gens_idx)], axis=0), count=s.order
    ).astype(bool)
    return SubgroupHandle(s, a.idx[mask[a.idx]])


def _cert_pair(s, a, a_star):
    return {
        "A_gens": [s.arr()[i].tolist() for i in a.gens_idx],
        "Astar_gens": [s.arr()[i].tolist() for i in a_star.gens_idx],
    }


# ---------------------------------------------------------------------------
# The 2-subnormal quadratic offender
# ---------------------------------------------------------------------------


def two_subnormal_offender(ctx: SemidirectContext) -> Offender:
    """E = A ∩ G for a <=_S-maximal A in A_x(S).

    Asserts the three defining facts: E offends, E is quadratic on V, and
    E is normal in its normal closure.  For p = 3 the run proceeds with a
    warning and no 2-subnormality guarantee.
    """
    if ctx.p == 3:
        warnings.warn(
            "p = 3: the 2-subnormality guarantee does not apply",
            stacklevel=2,
        )
    a = select_max(ctx)
    e = a.E
    fixed = fixed_space(ctx, e)
    if e.order == 1:
        raise TheoremViolation(
            "maximal product subgroup meets G trivially",
            certificate={"order": a.order},
        )
    if e.order * fixed.size < ctx.module_order:
        raise TheoremViolation(
            "counterexample candidate: selected E does not offend",
            certificate=_offender_cert(ctx, e, fixed),
        )
    if not is_quadratic(ctx, e):
        raise TheoremViolation(
            "counterexample candidate: selected E is not quadratic",
            certificate=_offender_cert(ctx, e, fixed),
        )
    closure, two_sub = normal_closure(ctx.G, e)
    if not two_sub and ctx.p >= 5:
        raise TheoremViolation(
            "counterexample candidate: selected E is not 2-subnormal",
            certificate=_offender_cert(ctx, e, fixed),
        )
    from .action import _logp

    return Offender(
        E=e,
        fixed=fixed,
        defect=_logp(e.order * fixed.size, ctx.p) - ctx.n,
        quadratic=True,
        two_subnormal=two_sub,
    )


def _offender_cert(ctx, e, fixed):
    return {
        "p": ctx.p,
        "n": ctx.n,
        "E_generators": [ctx.G.arr()[i].tolist() for i in e.gens_idx],
        "E_order": e.order,
        "fixed_dim": fixed.dim,
    }


# ---------------------------------------------------------------------------
# B_A membership and the normalization theorem check
# ---------------------------------------------------------------------------


def _stabilizer_mask(ctx: SemidirectContext, a: ProductSubgroup) -> np.ndarray:
    """{g in G : A^g = A} as a boolean mask over G (valid once V normalizes
    A, so that conjugation by any (v, g) agrees with conjugation by g)."""
    g = ctx.G
    arr = g.arr()
    inv = g.inv_idx()
    ok = np.ones(g.order, dtype=bool)
    # D.g = D for all candidates, batched over G
    imgs = np.matmul(a.D.basis[None], arr) % ctx.p if a.D.dim else None
    if imgs is not None:
        for i in range(g.order):
            if ok[i] and Subspace(imgs[i], ctx.p, ctx.n) != a.D:
                ok[i] = False
    # E^g = E
    emask = a.E.mask()
    for t in a.E.gens_idx:
        conj = np.matmul(
            np.matmul(arr[inv], arr[t][None]) % g.p, arr
        ) % g.p
        ok &= emask[g.lookup_rows(conj)]
    return ok


def in_BA(ctx_or_s, b, a, cap: int = DEFAULT_CAP) -> bool:
    """Is B a member of B_A: B = B_x, A normal in <A^B>, [A, u; 3] = 1 for
    every u in B?

    Symbolic mode takes ProductSubgroup arguments with V normalizing A;
    explicit mode takes SubgroupHandles inside an enumerated S.
    """
    if isinstance(ctx_or_s, SemidirectContext):
        return _in_BA_symbolic(ctx_or_s, b, a, cap)
    return _in_BA_explicit(ctx_or_s, b, a)


def _in_BA_symbolic(ctx, b: ProductSubgroup, a: ProductSubgroup, cap):
    validate_product(ctx, b)
    validate_product(ctx, a)
    if not a.D.contains(module_bracket(ctx, a.E, 1)):
        raise UnsupportedInstance(
            "symbolic B_A membership needs V to normalize A; use explicit "
            "small-S mode"
        )
    # A normal in <A^B>: every S-conjugate A^x with x in B equals A^{pi(x)},
    # and <A^B> normalizes A iff each generator set A^e lands in N_S(A),
    # i.e. E^e is inside the G-stabilizer of A.
    stab = _stabilizer_mask(ctx, a)
    g = ctx.G
    arr, inv = g.arr(), g.inv_idx()
    e_elems = a.E.idx
    for x in b.E.idx.tolist():
        conj = np.matmul(
            np.matmul(arr[int(inv[x])][None], arr[e_elems]) % g.p,
            arr[x][None],
        ) % g.p
        if not stab[g.lookup_rows(conj)].all():
            return False
    # [A, u; 3] = 1 for all u in B, on affine matrices without enumerating S
    a_mats = _affine_elements(ctx, a)
    for u in _affine_element_iter(ctx, b):
        if not _triple_bracket_trivial(ctx, a_mats, u, cap):
            return False
    return True


def _in_BA_explicit(s: ExplicitGroup, b: SubgroupHandle, a: SubgroupHandle):
    from .groups import is_normal_in, iterated_bracket_is_trivial

    # B = B_x is a statement about the top-left block structure; on an
    # explicit S we test it through the generated product subgroup.
    ctx = getattr(s, "_semidirect_ctx", None)
    if ctx is not None:
        bx = product_closure(ctx, b)
        if bx.handle_in(ctx, s) != b:
            return False
    closure = a
    for x in b.idx.tolist():
        closure = closure.join(a.conjugate(x))
    if not is_normal_in(a, closure):
        return False
    for x in b.idx.tolist():
        h = s.subgroup_from_gens([x]) if x != s.identity_idx else s.trivial_handle()
        if not iterated_bracket_is_trivial(a, h, 3):
            return False
    return True


def _affine_elements(ctx, a: ProductSubgroup) -> np.ndarray:
    """All |D|.|E| affine matrices of the product subgroup A."""
    g = ctx.G
    n = ctx.n
    vs = a.D.vectors()
    gs = g.arr()[a.E.idx]
    out = np.zeros(
        (vs.shape[0] * gs.shape[0], n + 1, n + 1), dtype=np.int64
    )
    out[:, n, n] = 1
    k = 0
    for gm in gs:
        for v in vs:
            out[k, :n, :n] = gm
            out[k, n, :n] = v
            k += 1
    return out


def _affine_element_iter(ctx, b: ProductSubgroup):
    for m in _affine_elements(ctx, b):
        yield m


def _affine_inv(m: np.ndarray, p: int) -> np.ndarray:
    from .linalg import inv_mod

    return inv_mod(m, p)


def _triple_bracket_trivial(ctx, a_mats: np.ndarray, u: np.ndarray, cap) -> bool:
    """[A, u; 3] = 1 computed on raw affine matrices (closing each level as
    a matrix group, without any ambient enumeration)."""
    from .linalg import batched_unipotent_inverse

    p = ctx.p
    d = ctx.affine_dim
    uinv = _affine_inv(u, p)
    cur = a_mats
    ident = np.eye(d, dtype=np.int64)
    for _ in range(3):
        inv_cur = batched_unipotent_inverse(cur, p, d)
        comm = np.matmul(
            np.matmul(np.matmul(inv_cur, uinv[None]) % p, cur) % p,
            u[None],
        ) % p
        gens = _dedupe_mats(comm)
        gens = [m for m in gens if (m != ident).any()]
        if not gens:
            return True
        grp = _matrix_closure(gens, p, d, cap)
        cur = grp
    return False


def _dedupe_mats(stack):
    seen = {}
    for m in stack:
        seen.setdefault(m.tobytes(), m)
    return list(seen.values())


def _matrix_closure(gen_mats, p, d, cap):
    from .linalg import FieldSpec

    g = None
    from .groups import close

    g = close(FieldSpec(p), [FpMatrix(m, p) for m in gen_mats], cap=cap)
    return g.arr().copy()


@dataclass
class GlaubcorReport:
    scope: str
    candidates: int
    members: int
    all_normalize: bool
    mutual_normalization: bool


def verify_glaubcor(
    ctx: SemidirectContext,
    a: ProductSubgroup,
    scope: str = "conjugates",
    cap: int = DEFAULT_CAP,
) -> GlaubcorReport:
    """Check that every member of B_A found in the given scope normalizes A,
    and that A and each conjugate A^s normalize each other.

    scope "conjugates" sweeps G-conjugates of A_x(S) members (equal to all
    S-conjugates for the V-normalized members); "all-small-S" sweeps every
    subgroup of an explicitly enumerated S.
    """
    stab = _stabilizer_mask(ctx, a)
    g = ctx.G
    if scope == "conjugates":
        cands = {}
        for m in enumerate_A_times(ctx):
            for gi in range(g.order):
                c = m.conjugate(ctx, gi)
                cands.setdefault(c.key, c)
        cands = [cands[k] for k in sorted(cands)]
        members = 0
        for b in cands:
            if not in_BA(ctx, b, a, cap=cap):
                continue
            members += 1
            if not stab[b.E.idx].all():
                raise TheoremViolation(
                    "counterexample candidate: a B_A member fails to "
                    "normalize A",
                    certificate={"B_E": list(b.E.gens_idx)},
                )
        mutual = _mutual_normalization(ctx, a, stab)
        return GlaubcorReport(
            scope=scope,
            candidates=len(cands),
            members=members,
            all_normalize=True,
            mutual_normalization=mutual,
        )
    if scope == "all-small-S":
        s = ctx.explicit_group(cap)
        s._semidirect_ctx = ctx
        ah = a.handle_in(ctx, s)
        count = 0
        members = 0
        from .groups import normalizer

        ns = normalizer(s.full_handle(), ah)
        for b in all_subgroups(s, max_count=cap):
            count += 1
            if not _in_BA_explicit(s, b, ah):
                continue
            members += 1
            if not b <= ns:
                raise TheoremViolation(
                    "counterexample candidate: a B_A member fails to "
                    "normalize A",
                    certificate={"B_gens": list(b.gens_idx)},
                )
        mutual = _mutual_normalization(ctx, a, stab)
        return GlaubcorReport(
            scope=scope,
            candidates=count,
            members=members,
            all_normalize=True,
            mutual_normalization=mutual,
        )
    raise ValueError(f"unknown scope {scope!r}")


def _mutual_normalization(ctx, a: ProductSubgroup, stab) -> bool:
    """For every g: A^g normalizes A and A normalizes A^g."""
    g = ctx.G
    arr, inv = g.arr(), g.inv_idx()
    for gi in range(g.order):
        ag = a.conjugate(ctx, gi)
        # pi(A^g) inside Stab(A) and pi(A) inside Stab(A^g) = Stab(A)^g
        conj_back = np.matmul(
            np.matmul(arr[gi][None], arr[a.E.idx]) % g.p,
            arr[int(inv[gi])][None],
        ) % g.p
        if not stab[ag.E.idx].all():
            return False
        if not stab[g.lookup_rows(conj_back)].all():
            return False
    return True


# ---------------------------------------------------------------------------
# Lie ring via matrix logarithm (class <= 3, p >= 5)
# ---------------------------------------------------------------------------


@dataclass
class LieRing:
    """Lazard Lie ring of a class <= 3 unipotent group, realized by the
    matrix logarithm.  logs[i] is the log of element i; the log image is an
    F_p-subspace closed under the matrix bracket (verified at build)."""

    group: ExplicitGroup
    logs: np.ndarray          # (N, d, d)
    span: Subspace            # log image flattened to row vectors
    center_idx: np.ndarray    # element indices of Z(group)
    bch_checked_pairs: int = 0

    @property
    def p(self):
        return self.group.p

    def log_of(self, i: int) -> np.ndarray:
        return self.logs[int(i)]

    def idx_of_log(self, x: np.ndarray) -> int:
        return int(
            self.group.lookup_rows(
                matrix_exp(FpMatrix(x, self.p)).a[None]
            )[0]
        )

    def bracket(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return ((x @ y) % self.p - (y @ x) % self.p) % self.p

    def center_logs(self) -> Subspace:
        d = self.group.dim
        return Subspace(
            self.logs[self.center_idx].reshape(-1, d * d),
            self.p,
            d * d,
        )


def build_lie_ring(
    group: ExplicitGroup, bch_pairs: int | None = 100_000, rng_seed: int = 0
) -> LieRing:
    """Construct and certify the Lie ring of a class <= 3 group.

    Verifies: log/exp bijection on every element, additive closure of the
    log image (span-dimension count), bracket closure on span-basis pairs,
    and the class-3 BCH identity
    log(xy) = X + Y + (1/2)[X,Y] + (1/12)[X,[X,Y]] - (1/12)[Y,[X,Y]]
    on all pairs (or a uniform sample of bch_pairs pairs).
    """
    p = group.p
    if p < 5:
        raise UnsupportedInstance("the Lie-ring engine needs p >= 5")
    cls = nilpotence_class(group)
    if cls > 3:
        raise ClassTooHigh(f"group has class {cls} > 3")
    d = group.dim
    arr = group.arr()
    n_el = group.order
    ident = np.eye(d, dtype=np.int64)

    # batched logarithm: sum_{k>=1} (-1)^(k+1) N^k / k, N nilpotent
    nil = (arr - ident) % p
    logs = np.zeros_like(arr)
    power = np.broadcast_to(ident, arr.shape).copy()
    inv_cache = _inverses_mod(p)
    for k in range(1, d + 1):
        power = np.matmul(power, nil) % p
        if k > p:
            if power.any():
                raise LogDomain(
                    "an element has unipotent index above p; matrix log "
                    "is out of domain"
                )
            break
        if k == p:
            if power.any():
                raise LogDomain(
                    "an element has unipotent index above p; matrix log "
                    "is out of domain"
                )
            break
        sign = 1 if k % 2 == 1 else p - 1
        logs = (logs + sign * inv_cache[k] * power) % p

    # exp(log) must give back every element
    expd = _batched_exp(logs, p, d)
    if (expd != arr).any():
        bad = int(np.nonzero((expd != arr).any(axis=(1, 2)))[0][0])
        raise LogDomain(f"exp(log) failed on element index {bad}")

    flat = logs.reshape(n_el, d * d)
    span = Subspace(flat, p, d * d)
    if span.size != n_el:
        raise ClosureFailure(
            f"log image spans {span.size} vectors but the group has "
            f"{n_el} elements; not additively closed"
        )
    basis = span.basis.reshape(-1, d, d)
    for i in range(basis.shape[0]):
        for j in range(i + 1, basis.shape[0]):
            br = ((basis[i] @ basis[j]) % p - (basis[j] @ basis[i]) % p) % p
            if not span.contains_vector(br.reshape(-1)):
                raise ClosureFailure(
                    f"bracket of basis elements {i}, {j} leaves the log image"
                )

    checked = _verify_bch(group, logs, bch_pairs, rng_seed)
    z = center(group.full_handle())
    return LieRing(
        group=group,
        logs=logs,
        span=span,
        center_idx=z.idx.copy(),
        bch_checked_pairs=checked,
    )


def _inverses_mod(p: int) -> dict:
    return {k: pow(k, -1, p) for k in range(1, p)}


def _batched_exp(xs: np.ndarray, p: int, d: int) -> np.ndarray:
    ident = np.eye(d, dtype=np.int64)
    out = np.broadcast_to(ident, xs.shape).copy()
    power = np.broadcast_to(ident, xs.shape).copy()
    inv_fact = 1
    inv_cache = _inverses_mod(p)
    for k in range(1, min(d, p)):
        power = np.matmul(power, xs) % p
        inv_fact = (inv_fact * inv_cache[k]) % p
        out = (out + inv_fact * power) % p
    return out


def bch3(x: np.ndarray, y: np.ndarray, p: int) -> np.ndarray:
    """Baker-Campbell-Hausdorff to class 3."""
    half = pow(2, -1, p)
    twelfth = pow(12, -1, p)
    br = ((x @ y) % p - (y @ x) % p) % p
    xbr = ((x @ br) % p - (br @ x) % p) % p
    ybr = ((y @ br) % p - (br @ y) % p) % p
    return (x + y + half * br + twelfth * xbr - twelfth * ybr) % p


def _verify_bch(group, logs, bch_pairs, rng_seed) -> int:
    p = group.p
    n = group.order
    if bch_pairs is None or bch_pairs >= n * n:
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
    else:
        rng = np.random.default_rng(rng_seed)
        ii = rng.integers(0, n, size=bch_pairs)
        jj = rng.integers(0, n, size=bch_pairs)
    arr = group.arr()
    step = 200_000
    total = 0
    for lo in range(0, ii.shape[0], step):
        i, j = ii[lo:lo + step], jj[lo:lo + step]
        x, y = logs[i], logs[j]
        half = pow(2, -1, p)
        twelfth = pow(12, -1, p)
        br = (np.matmul(x, y) - np.matmul(y, x)) % p
        xbr = (np.matmul(x, br) - np.matmul(br, x)) % p
        ybr = (np.matmul(y, br) - np.matmul(br, y)) % p
        rhs = (x + y + half * br + twelfth * xbr - twelfth * ybr) % p
        prod = np.matmul(arr[i], arr[j]) % p
        lhs = logs[group.lookup_rows(prod)]
        if (lhs != rhs).any():
            bad = int(np.nonzero((lhs != rhs).any(axis=(1, 2)))[0][0])
            raise ClosureFailure(
                f"BCH identity fails for pair ({int(i[bad])}, {int(j[bad])})"
            )
        total += i.shape[0]
    return total


@dataclass
class DerivationData:
    """alpha = conjugation by b on logs; delta = (alpha-1) - (1/2)(alpha-1)^2.

    b may be an element index of the carrier group or any invertible
    FpMatrix of the same dimension (an outer conjugation)."""

    ring: LieRing
    b: object

    def __post_init__(self):
        g = self.ring.group
        p = self.ring.p
        if isinstance(self.b, (int, np.integer)):
            b = g.arr()[int(self.b)]
            binv = g.arr()[int(g.inv_idx()[int(self.b)])]
        else:
            bm = self.b if isinstance(self.b, FpMatrix) else FpMatrix(self.b, p)
            b = bm.a
            binv = bm.inverse().a
        self._b, self._binv, self._p = b, binv, p

    def alpha(self, x: np.ndarray) -> np.ndarray:
        return (self._binv @ x % self._p) @ self._b % self._p

    def am1(self, x: np.ndarray) -> np.ndarray:
        return (self.alpha(x) - x) % self._p

    def delta(self, x: np.ndarray) -> np.ndarray:
        half = pow(2, -1, self._p)
        once = self.am1(x)
        twice = self.am1(once)
        return (once - half * twice) % self._p

    def am1_cubed_is_zero(self) -> bool:
        for row in self.ring.span.basis:
            x = row.reshape(self.ring.group.dim, -1)
            if self.am1(self.am1(self.am1(x))).any():
                return False
        return True

    def delta_cubed_is_zero(self) -> bool:
        for row in self.ring.span.basis:
            x = row.reshape(self.ring.group.dim, -1)
            if self.delta(self.delta(self.delta(x))).any():
                return False
        return True

    def is_derivation(self) -> bool:
        """delta[x,y] = [delta x, y] + [x, delta y] on span-basis pairs
        (additivity is automatic: delta is linear by construction)."""
        d = self.ring.group.dim
        basis = self.ring.span.basis.reshape(-1, d, d)
        br = self.ring.bracket
        for i in range(basis.shape[0]):
            for j in range(basis.shape[0]):
                x, y = basis[i], basis[j]
                lhs = self.delta(br(x, y))
                rhs = (br(self.delta(x), y) + br(x, self.delta(y))) % self._p
                if (lhs != rhs).any():
                    return False
        return True


def glauberman_replace(
    ring: LieRing,
    a: SubgroupHandle,
    b,
    series_list=None,
    g_handle: SubgroupHandle | None = None,
) -> SubgroupHandle:
    """A* = A_1 + delta^2(A) with
    A_1 = {a_1 - 2 delta(a_2) : delta(a_1) - delta^2(a_2) in Z(carrier)}.

    Preconditions (each a distinct PreconditionFailed): the carrier equals
    <A, A^b, A^(b^2)>; (alpha-1)^3 = 0; Z(carrier) <= A; and
    carrier = A + delta(A) + delta^2(A).  Postconditions (TheoremViolation on
    failure): A* is an abelian subgroup with |A*| = |A|; for every series in
    series_list, A's profile is componentwise <= A*'s with strict increase
    somewhere whenever A* != A; and A* meets g_handle nontrivially when one
    is supplied.
    """
    grp = ring.group
    p = ring.p
    d = grp.dim
    if not a.is_abelian():
        raise PreconditionFailed("abelian", "A must be abelian")

    der = DerivationData(ring, b)

    # carrier = <A, A^b, A^{b^2}>; conjugates computed on raw matrices so b
    # may lie outside the carrier
    bm, bm_inv = der._b, der._binv
    a_mats = grp.arr()[a.idx]
    conj1 = np.matmul(np.matmul(bm_inv[None], a_mats) % p, bm[None]) % p
    conj2 = np.matmul(np.matmul(bm_inv[None], conj1) % p, bm[None]) % p
    try:
        gens = list(a.gens_idx)
        gens += [int(i) for i in np.unique(grp.lookup_rows(conj1))]
        gens += [int(i) for i in np.unique(grp.lookup_rows(conj2))]
    except KeyError:
        raise PreconditionFailed(
            "carrier", "a conjugate A^b or A^(b^2) leaves the carrier group"
        )
    gens = [i for i in gens if i != grp.identity_idx]
    hull = grp.subgroup_from_gens(gens) if gens else grp.trivial_handle()
    if hull.order != grp.order:
        raise PreconditionFailed(
            "carrier", "<A, A^b, A^(b^2)> does not equal the carrier group"
        )
    if not der.am1_cubed_is_zero():
        raise PreconditionFailed("alpha", "(alpha - 1)^3 != 0")
    zc = SubgroupHandle(grp, ring.center_idx)
    if not zc <= a:
        raise PreconditionFailed("center", "Z(carrier) is not inside A")

    a_logs = ring.logs[a.idx]                      # (m, d, d)
    d1 = np.stack([der.delta(x) for x in a_logs]) % p
    d2 = np.stack([der.delta(x) for x in d1]) % p
    flat = np.concatenate(
        [a_logs.reshape(-1, d * d), d1.reshape(-1, d * d), d2.reshape(-1, d * d)]
    )
    if Subspace(flat, p, d * d).size != grp.order:
        raise PreconditionFailed(
            "sum", "carrier != A + delta(A) + delta^2(A)"
        )

    # A_1 over all |A|^2 pairs, vectorized through the center-membership test
    zlogs = ring.center_logs()
    checks = (
        nullspace(zlogs.basis.T, p)
        if zlogs.dim
        else np.eye(d * d, dtype=np.int64)
    )
    lhs = (
        d1.reshape(-1, 1, d * d) - d2.reshape(1, -1, d * d)
    ) % p                                            # (m, m, d^2)
    resid = np.tensordot(lhs, checks.T, axes=([2], [0])) % p
    mask = ~resid.any(axis=2)                        # pairs with value in Z
    i_idx, j_idx = np.nonzero(mask)
    a1_logs = (a_logs[i_idx] - 2 * d1[j_idx]) % p

    # A* = A_1 + delta^2(A) as a sumset in the Lie ring
    a1_flat = _dedupe_rows(a1_logs.reshape(-1, d * d))
    d2_flat = _dedupe_rows(d2.reshape(-1, d * d))
    star_flat = _dedupe_rows(
        (a1_flat[:, None, :] + d2_flat[None, :, :]).reshape(-1, d * d) % p
    )
    star_logs = star_flat.reshape(-1, d, d)
    star_elems = grp.lookup_rows(_batched_exp(star_logs, p, d))
    a_star = SubgroupHandle(grp, np.unique(star_elems))

    if not a_star.is_abelian():
        raise TheoremViolation(
            "replacement output not abelian",
            certificate=_cert_pair(grp, a, a_star),
        )
    if a_star.order != a.order:
        raise TheoremViolation(
            "replacement changed the order",
            certificate=_cert_pair(grp, a, a_star),
        )
    for series in series_list or []:
        # the series may live in a larger ambient group (e.g. the full S
        # containing the carrier); transfer A and A* there by matrix lookup
        amb = series.terms[0].ambient
        if amb is grp:
            a_amb, a_star_amb = a, a_star
        else:
            a_amb = SubgroupHandle(amb, np.unique(amb.lookup_rows(grp.arr()[a.idx])))
            a_star_amb = SubgroupHandle(
                amb, np.unique(amb.lookup_rows(grp.arr()[a_star.idx]))
            )
        profs_a = [a_amb.intersect(t).order for t in series.terms]
        profs_s = [a_star_amb.intersect(t).order for t in series.terms]
        if any(x > y for x, y in zip(profs_a, profs_s)):
            raise TheoremViolation(
                "profile decreased under replacement",
                certificate=_cert_pair(grp, a, a_star),
            )
        if a_star != a and profs_a == profs_s:
            raise TheoremViolation(
                "replacement must strictly increase the profile",
                certificate=_cert_pair(grp, a, a_star),
            )
    if g_handle is not None and a_star.intersect(g_handle).order == 1:
        raise TheoremViolation(
            "A* meets G trivially",
            certificate=_cert_pair(grp, a, a_star),
        )
    return a_star


def _dedupe_rows(rows: np.ndarray) -> np.ndarray:
    return np.unique(rows, axis=0)


# ---------------------------------------------------------------------------
# Quadratic descent and the normal W
# ---------------------------------------------------------------------------


def descent_step(ctx: SemidirectContext, a_idx: int, x_idx: int):
    """c = [a, x]: when a is quadratic on V and c != 1 centralizes both a
    and x, c is again quadratic on V.  Returns c (as an index) or None when
    c = 1."""
    g = ctx.G
    if not _elem_quadratic(ctx, a_idx):
        raise HypothesisFailed("a is not quadratic on V")
    c = commutator_idx(g, a_idx, x_idx)
    if c == g.identity_idx:
        return None
    if not g.commute_idx(c, a_idx):
        raise HypothesisFailed("c = [a, x] does not centralize a")
    if not g.commute_idx(c, x_idx):
        raise HypothesisFailed("c = [a, x] does not centralize x")
    if not _elem_quadratic(ctx, c):
        raise TheoremViolation(
            "counterexample candidate: [a, x] fails to act quadratically",
            certificate={
                "a": g.arr()[a_idx].tolist(),
                "x": g.arr()[x_idx].tolist(),
                "c": g.arr()[c].tolist(),
            },
        )
    return c


def _elem_quadratic(ctx, i: int) -> bool:
    m = FpMatrix(ctx.G.arr()[int(i)], ctx.p)
    return not m.is_identity() and unipotent_index(m) <= 2


@dataclass
class DescentWitness:
    """Lemma-style descent output: a normal elementary abelian W = <a^G>
    generated by a quadratic element, with the centralize-or-double-bracket
    dichotomy for every x in G."""

    E: SubgroupHandle
    N: SubgroupHandle
    chain: list                    # [W_0 = Omega_1 Z(N), W_1, ...]
    j: int
    a_idx: int
    W: SubgroupHandle


def normalW(ctx: SemidirectContext, offender: Offender | None = None) -> DescentWitness:
    """Descend W_i = [Omega_1 Z(N), G; i] to the deepest level holding a
    quadratic element a, and return W = <a^G>.

    Asserts W elementary abelian and normal, and the dichotomy: for every
    x in G, [W, x] = 1 or [W, x, x] != 1.
    """
    if offender is None:
        if ctx.p == 3:
            raise UnsupportedInstance(
                "p = 3 needs an externally supplied 2-subnormal quadratic "
                "offender"
            )
        offender = two_subnormal_offender(ctx)
    e = offender.E
    g = ctx.G
    full = g.full_handle()
    n, _ = normal_closure(g, e)
    w0 = omega1(center(n))
    chain = [w0]
    from .groups import commutator_subgroup

    cur = w0
    while cur.order > 1:
        nxt = commutator_subgroup(cur, full)
        if nxt.order == cur.order:
            break
        chain.append(nxt)
        cur = nxt

    j = None
    a_idx = None
    for i in range(len(chain) - 1, -1, -1):
        q = _least_quadratic(ctx, chain[i])
        if q is not None:
            j, a_idx = i, q
            break
    if j is None:
        raise NoQuadraticInOmega1ZN(
            "counterexample candidate: no quadratic element in Omega_1 Z(N)",
            certificate={
                "E_generators": [g.arr()[i].tolist() for i in e.gens_idx],
                "N_order": n.order,
            },
        )
    w, _ = normal_closure(g, g.subgroup_from_gens([a_idx]))
    if not w.is_elementary_abelian():
        raise TheoremViolation(
            "W = <a^G> is not elementary abelian",
            certificate={"a": g.arr()[a_idx].tolist()},
        )
    _assert_dichotomy(g, w)
    return DescentWitness(E=e, N=n, chain=chain, j=j, a_idx=a_idx, W=w)


def _least_quadratic(ctx, h: SubgroupHandle):
    for i in h.idx.tolist():
        if _elem_quadratic(ctx, i):
            return int(i)
    return None


def _assert_dichotomy(g: ExplicitGroup, w: SubgroupHandle) -> None:
    """For every x in G: [W, x] = 1 or [W, x, x] != 1.

    W is abelian and normal, so [W, x] <= W and [W, x, x] != 1 exactly when
    some [[w, x], x] != 1."""
    arr = g.arr()
    inv = g.inv_idx()
    wm = arr[w.idx]
    wm_inv = arr[inv[w.idx]]
    for x in range(g.order):
        xm, xinv = arr[x], arr[int(inv[x])]
        comm = np.matmul(
            np.matmul(np.matmul(wm_inv, xinv[None]) % g.p, wm) % g.p,
            xm[None],
        ) % g.p
        first = g.lookup_rows(comm)
        nontrivial = first[first != g.identity_idx]
        if nontrivial.shape[0] == 0:
            continue
        cm = arr[nontrivial]
        cm_inv = arr[inv[nontrivial]]
        comm2 = np.matmul(
            np.matmul(np.matmul(cm_inv, xinv[None]) % g.p, cm) % g.p,
            xm[None],
        ) % g.p
        second = g.lookup_rows(comm2)
        if (second == g.identity_idx).all():
            raise TheoremViolation(
                "counterexample candidate: dichotomy fails",
                certificate={
                    "x": arr[x].tolist(),
                    "W_generators": [arr[i].tolist() for i in w.gens_idx],
                },
            )


def elementary_replacement_dichotomy(g: ExplicitGroup, w: SubgroupHandle):
    """Either some maximum-order elementary abelian A acts quadratically on
    the normal elementary abelian W, or all of them centralize W.

    Returns ("quadratic_witness", A) or ("all_centralize", None)."""
    from .groups import is_normal_in, iterated_bracket_is_trivial

    if not w.is_elementary_abelian() or not is_normal_in(w, g.full_handle()):
        raise HypothesisFailed("W must be a normal elementary abelian subgroup")
    from .groups import commutator_subgroup

    sweep = maximal_elementary_abelian(g)
    centralize_all = True
    for a in sweep:
        first = commutator_subgroup(w, a)
        if first.order == 1:
            continue
        centralize_all = False
        if iterated_bracket_is_trivial(w, a, 2):
            return ("quadratic_witness", a)
    if centralize_all:
        return ("all_centralize", None)
    raise TheoremViolation(
        "counterexample candidate: neither dichotomy branch holds",
        certificate={"W_generators": [g.arr()[i].tolist() for i in w.gens_idx]},
    )


# ---------------------------------------------------------------------------
# The 2^k-factor expansion of iterated commutators
# ---------------------------------------------------------------------------


@dataclass
class ExpansionReport:
    z_idx: int
    factor_count: int
    equal: bool
    z_index: int | None = None     # unipotent index of z when computed
    index_bound: int | None = None


def expansion_identity(g: ExplicitGroup, b_idx: int, xs) -> ExpansionReport:
    """z = [b, x_1, ..., x_k] equals the product over j and strictly
    increasing index sequences (i_1 < ... < i_j) of
    (b^((-1)^(k-j)))^(x_{i_1} ... x_{i_j}), a product of 2^k commuting
    conjugates of b or its inverse.

    Requires all appearing conjugates of b to commute pairwise (guaranteed
    when b lies in an abelian normal subgroup).  When b is quadratic the
    report also carries unipotent_index(z) <= 2^k + 1.
    """
    xs = [int(x) for x in xs]
    k = len(xs)
    if k < 1:
        raise ValueError("need at least one x")
    inv = g.inv_idx()
    binv = int(inv[b_idx])

    # direct iterated commutator
    z = b_idx
    for x in xs:
        z = commutator_idx(g, z, x)

    # all conjugates b^{x_{i_1}...x_{i_j}} over increasing sequences
    import itertools

    conj_of = {}
    for j in range(0, k + 1):
        for seq in itertools.combinations(range(k), j):
            t = b_idx
            tinv = binv
            for i in seq:
                xi, xii = xs[i], int(inv[xs[i]])
                t = g.mult_idx(g.mult_idx(xii, t), xi)
                tinv = g.mult_idx(g.mult_idx(xii, tinv), xi)
            conj_of[seq] = (t, tinv)

    plain = [t for (t, _) in conj_of.values()]
    for i in range(len(plain)):
        for j in range(i + 1, len(plain)):
            if not g.commute_idx(plain[i], plain[j]):
                raise NonCommutingConjugates(
                    "conjugates of b do not commute pairwise"
                )

    prod = g.identity_idx
    factors = 0
    for seq, (t, tinv) in conj_of.items():
        j = len(seq)
        use = t if (k - j) % 2 == 0 else tinv
        prod = g.mult_idx(prod, use)
        factors += 1

    rep = ExpansionReport(
        z_idx=z, factor_count=factors, equal=(prod == z)
    )
    if not rep.equal:
        raise TheoremViolation(
            "expansion identity failed",
            certificate={
                "b": g.arr()[b_idx].tolist(),
                "xs": [g.arr()[x].tolist() for x in xs],
            },
        )
    if factors != 2 ** k:
        raise TheoremViolation(
            "factor count is not 2^k", certificate={"factors": factors}
        )
    bm = FpMatrix(g.arr()[b_idx], g.p)
    if not bm.is_identity() and unipotent_index(bm) <= 2:
        zi = unipotent_index(FpMatrix(g.arr()[z], g.p)) if z != g.identity_idx else 1
        rep.z_index = zi
        rep.index_bound = 2 ** k + 1
        if zi > rep.index_bound:
            raise TheoremViolation(
                "index bound violated",
                certificate={"z_index": zi, "bound": rep.index_bound},
            )
    return rep
