"""Explicit finite matrix p-groups.

Groups are fully enumerated (breadth-first closure over the generators) and
their elements kept sorted by the canonical matrix byte key, so element
indices are a canonical coordinate system: index order = key order.  All
"choose one" steps downstream break ties by smallest index.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CapExceeded, DimensionMismatch, NotPGroup, NotUnipotent
from .linalg import (
    FieldSpec,
    FpMatrix,
    batched_mod_matmul,
    batched_unipotent_inverse,
    is_unipotent,
    unipotent_index,
)

DEFAULT_CAP = 2_000_000
_CENTBITS_LIMIT = 40_000  # N above which the packed centralizer table is refused

_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(1)


def popcount(packed: np.ndarray) -> int:
    return int(_POPCOUNT[packed].sum())


class ExplicitGroup:
    """A fully enumerated p-subgroup of GL(dim, p)."""

    def __init__(self, field: FieldSpec, dim: int, generators, elements, cap: int):
        self.field = field
        self.p = field.p
        self.dim = dim
        self.generators = tuple(generators)
        self.elements = tuple(elements)  # sorted by canonical key
        self.order = len(elements)
        self.cap = cap
        self._index = {m.key: i for i, m in enumerate(self.elements)}
        self._arr = np.stack([m.a for m in self.elements])
        self._arr.flags.writeable = False
        self._inv_idx = None
        self._keys = None
        self._max_elab = None
        self._je = None
        self._cent_bits = None
        self._orders = None
        self._gen_idx = tuple(self._index[g.key] for g in self.generators)
        self._full_handle = None
        self._cclass = None

        o = self.order
        p = self.p
        while o % p == 0:
            o //= p
        if o != 1:
            raise NotPGroup(f"closure has order {self.order}, not a power of {p}")

    # -- basic element plumbing ------------------------------------------------

    @property
    def identity_idx(self) -> int:
        return self._index[FpMatrix.identity(self.dim, self.p).key]

    def index_of(self, m: FpMatrix) -> int:
        try:
            return self._index[m.key]
        except KeyError:
            raise KeyError("element not in group") from None

    def contains_matrix(self, m: FpMatrix) -> bool:
        return m.key in self._index

    def arr(self) -> np.ndarray:
        return self._arr

    def mult_idx(self, i: int, j: int) -> int:
        prod = (self._arr[i] @ self._arr[j]) % self.p
        return self._index[prod.astype("<u2").tobytes()]

    def _lookup_tables(self):
        """(encoder, sorted encodings, permutation to canonical indices).

        Matrices are encoded injectively: as a single base-p integer when
        p**(dim*dim) fits in int64, otherwise as the canonical byte key.
        """
        if self._keys is None:
            d2 = self.dim * self.dim
            if self.p ** d2 < 2 ** 63:
                powers = self.p ** np.arange(d2 - 1, -1, -1, dtype=np.int64)

                def encode(stack):
                    return stack.reshape(stack.shape[0], d2) @ powers
            else:
                width = f"S{2 * d2}"

                def encode(stack):
                    flat = stack.reshape(stack.shape[0], d2).astype("<u2")
                    return np.ascontiguousarray(flat).view(width).reshape(-1)

            enc = encode(self._arr)
            perm = np.argsort(enc, kind="stable")
            self._keys = (encode, enc[perm], perm)
        return self._keys

    def lookup_rows(self, stack: np.ndarray) -> np.ndarray:
        """Indices of a stack of (d, d) matrices, which must all be members."""
        encode, enc_sorted, perm = self._lookup_tables()
        enc = encode(stack)
        pos = np.searchsorted(enc_sorted, enc)
        pos = np.minimum(pos, self.order - 1)
        if (enc_sorted[pos] != enc).any():
            raise KeyError("matrix stack contains a non-member")
        return perm[pos]

    def inv_idx(self) -> np.ndarray:
        if self._inv_idx is None:
            inv = batched_unipotent_inverse(self._arr, self.p, self.dim)
            # fall back for any non-unipotent member (does not happen for
            # p-subgroups of GL(n, p), but keep the engine honest)
            check = np.matmul(inv, self._arr) % self.p
            eye = np.eye(self.dim, dtype=np.int64)
            bad = np.nonzero((check != eye).any(axis=(1, 2)))[0]
            for i in bad:
                inv[i] = self.elements[i].pow(self.element_orders()[i] - 1).a
            self._inv_idx = self.lookup_rows(inv)
        return self._inv_idx

    def element_orders(self) -> np.ndarray:
        if self._orders is None:
            p = self.p
            orders = np.empty(self.order, dtype=np.int64)
            for i, m in enumerate(self.elements):
                try:
                    d = unipotent_index(m)
                    q = 1
                    while q < d:
                        q *= p
                    orders[i] = q
                except NotUnipotent:
                    q, g = 1, m
                    while not g.is_identity():
                        g = g @ m
                        q += 1
                    orders[i] = q
            self._orders = orders
        return self._orders

    def orderp_mask(self) -> np.ndarray:
        """Elements of order dividing p (identity included)."""
        return self.element_orders() <= self.p

    # -- commuting structure ---------------------------------------------------

    def cent_bits(self) -> np.ndarray:
        """Packed (N, ceil(N/8)) boolean table; row i marks the centralizer of
        element i.  Built once, via composition of the conjugation
        permutations along a spanning tree of the Cayley graph."""
        if self._cent_bits is None:
            if self.order > _CENTBITS_LIMIT:
                raise CapExceeded(
                    f"centralizer table refused for order {self.order}"
                )
            self._cent_bits = self._build_cent_bits()
        return self._cent_bits

    def _conj_perm(self, g_idx: int) -> np.ndarray:
        """Permutation i -> index of g^-1 . x_i . g."""
        g = self._arr[g_idx]
        ginv = self._arr[self.inv_idx()[g_idx]]
        conj = np.matmul(np.matmul(ginv, self._arr) % self.p, g) % self.p
        return self.lookup_rows(conj)

    def _right_mult_perm(self, g_idx: int) -> np.ndarray:
        prod = batched_mod_matmul(self._arr, self._arr[g_idx], self.p)
        return self.lookup_rows(prod)

    def _spanning_tree(self):
        """(parent, gen_slot) arrays for a BFS tree over right multiplication
        by the generators."""
        n = self.order
        parent = np.full(n, -1, dtype=np.int64)
        gen_slot = np.full(n, -1, dtype=np.int64)
        rperms = [self._right_mult_perm(g) for g in self._gen_idx]
        root = self.identity_idx
        seen = np.zeros(n, dtype=bool)
        seen[root] = True
        frontier = [root]
        while frontier:
            nxt = []
            for v in frontier:
                for s, rp in enumerate(rperms):
                    w = int(rp[v])
                    if not seen[w]:
                        seen[w] = True
                        parent[w] = v
                        gen_slot[w] = s
                        nxt.append(w)
            frontier = nxt
        if not seen.all():
            raise ClosureError("generators do not reach every element")
        return parent, gen_slot

    def _build_cent_bits(self):
        n = self.order
        parent, gen_slot = self._spanning_tree()
        conj_gen = [self._conj_perm(g) for g in self._gen_idx]
        children = [[] for _ in range(n)]
        for v in range(n):
            if parent[v] >= 0:
                children[parent[v]].append(v)
        ident = np.arange(n, dtype=np.int64)
        bits = np.zeros((n, (n + 7) // 8), dtype=np.uint8)
        # iterative DFS carrying the conjugation permutation of each node
        root = self.identity_idx
        stack = [(root, ident)]
        while stack:
            v, sigma = stack.pop()
            bits[v] = np.packbits(sigma == ident)
            for w in children[v]:
                stack.append((w, conj_gen[gen_slot[w]][sigma]))
        return bits

    def commute_idx(self, i: int, j: int) -> bool:
        a, b = self._arr[i], self._arr[j]
        return bool(np.array_equal((a @ b) % self.p, (b @ a) % self.p))

    def centralizer_mask(self, i: int) -> np.ndarray:
        """Unpacked boolean centralizer of element i."""
        return np.unpackbits(self.cent_bits()[i], count=self.order).astype(bool)

    def conjugacy_classes(self) -> list:
        """Orbits of conjugation, as sorted index arrays (deterministic)."""
        if self._cclass is None:
            n = self.order
            perms = [self._conj_perm(g) for g in self._gen_idx]
            seen = np.zeros(n, dtype=bool)
            classes = []
            for i in range(n):
                if seen[i]:
                    continue
                orbit = [i]
                seen[i] = True
                q = [i]
                while q:
                    v = q.pop()
                    for pm in perms:
                        w = int(pm[v])
                        if not seen[w]:
                            seen[w] = True
                            orbit.append(w)
                            q.append(w)
                classes.append(np.array(sorted(orbit), dtype=np.int64))
            self._cclass = classes
        return self._cclass

    # -- handles ---------------------------------------------------------------

    def full_handle(self) -> "SubgroupHandle":
        if self._full_handle is None:
            self._full_handle = SubgroupHandle(
                self,
                np.arange(self.order, dtype=np.int64),
                gens_idx=list(self._gen_idx),
                _trusted=True,
            )
        return self._full_handle

    def trivial_handle(self) -> "SubgroupHandle":
        return SubgroupHandle(
            self,
            np.array([self.identity_idx], dtype=np.int64),
            gens_idx=[],
            _trusted=True,
        )

    def subgroup_from_gens(self, gens_idx) -> "SubgroupHandle":
        members = self.closure_indices(list(gens_idx))
        return SubgroupHandle(self, members, gens_idx=list(gens_idx), _trusted=True)

    def closure_indices(self, gens_idx) -> np.ndarray:
        """Member indices of the subgroup generated by the given elements."""
        arr = self._arr
        mask = np.zeros(self.order, dtype=bool)
        mask[self.identity_idx] = True
        essential = []
        for g in gens_idx:
            g = int(g)
            if mask[g]:
                continue
            essential.append(g)
            # close the current member set under right mult by all essential
            # gens, one batched frontier level at a time
            frontier = np.flatnonzero(mask)
            while frontier.size:
                prods = [
                    self.lookup_rows(np.matmul(arr[frontier], arr[h]) % self.p)
                    for h in essential
                ]
                cand = np.unique(np.concatenate(prods))
                frontier = cand[~mask[cand]]
                mask[frontier] = True
        return np.flatnonzero(mask).astype(np.int64)


class ClosureError(CapExceeded):
    pass


def close(field: FieldSpec, generators, cap: int = DEFAULT_CAP) -> ExplicitGroup:
    """Enumerate the group generated by the given matrices.

    Generators must be invertible square matrices of one dimension over F_p;
    the closure must be a p-group and stay within the cap.
    """
    gens = list(generators)
    if gens:
        dim = gens[0].dim
        for g in gens:
            if g.p != field.p or g.dim != dim:
                raise DimensionMismatch("mixed dimensions or moduli in generators")
            if not g.is_invertible():
                raise NotPGroup(f"generator is not invertible:\n{g.a}")
    else:
        dim = 1
    ident = FpMatrix.identity(dim, field.p)
    seen = {ident.key: ident}
    frontier = [ident]
    while frontier:
        nxt = []
        if gens:
            stack = np.stack([m.a for m in frontier])
        for g in gens:
            prods = batched_mod_matmul(stack, g.a, field.p)
            for row in prods:
                m = FpMatrix(row, field.p)
                if m.key not in seen:
                    seen[m.key] = m
                    nxt.append(m)
                    if len(seen) > cap:
                        raise CapExceeded(
                            f"closure exceeded cap {cap}", partial_count=len(seen)
                        )
        frontier = nxt
    elements = [seen[k] for k in sorted(seen)]
    return ExplicitGroup(field, dim, gens, elements, cap)


class SubgroupHandle:
    """Canonical subset of an ExplicitGroup, closed under multiplication.

    Closure is verified on construction unless the subgroup was produced by a
    closure algorithm (_trusted=True).
    """

    __slots__ = ("ambient", "idx", "gens_idx", "_key", "_mask", "_abelian")

    def __init__(self, ambient: ExplicitGroup, idx, gens_idx=None, _trusted=False):
        self.ambient = ambient
        self.idx = np.array(sorted(int(i) for i in set(np.asarray(idx).tolist())),
                            dtype=np.int64)
        self.idx.flags.writeable = False
        self.gens_idx = list(gens_idx) if gens_idx is not None else None
        self._key = None
        self._mask = None
        self._abelian = None
        if ambient.identity_idx not in set(self.idx.tolist()):
            raise ValueError("subgroup must contain the identity")
        if not _trusted:
            self._verify_closure()
        if self.gens_idx is None:
            self.gens_idx = self._find_generators()

    def _verify_closure(self):
        g = self.ambient
        members = set(self.idx.tolist())
        if len(members) ** 2 <= 400_000:
            arr = g.arr()[self.idx]
            for i in self.idx:
                prods = batched_mod_matmul(arr, g.arr()[i], g.p)
                for row in prods:
                    if row.astype("<u2").tobytes() not in g._index:
                        raise ValueError("product leaves the ambient group")
                if not set(g.lookup_rows(prods).tolist()) <= members:
                    raise ValueError("member set is not closed under multiplication")
        else:
            # too large for the exhaustive check: regenerate from scratch
            regen = g.closure_indices(self.idx.tolist())
            if regen.shape != self.idx.shape or not np.array_equal(regen, self.idx):
                raise ValueError("member set is not closed under multiplication")

    def _find_generators(self):
        g = self.ambient
        gens = []
        members = {g.identity_idx}
        for i in self.idx.tolist():
            if i in members:
                continue
            gens.append(i)
            members = set(g.closure_indices(gens).tolist())
            if len(members) == self.order:
                break
        return gens

    @property
    def order(self) -> int:
        return int(self.idx.shape[0])

    @property
    def key(self) -> bytes:
        if self._key is None:
            h = hashlib.sha256()
            for i in self.idx.tolist():
                h.update(self.ambient.elements[i].key)
            self._key = h.digest()
        return self._key

    def mask(self) -> np.ndarray:
        if self._mask is None:
            m = np.zeros(self.ambient.order, dtype=bool)
            m[self.idx] = True
            m.flags.writeable = False
            self._mask = m
        return self._mask

    def __eq__(self, other):
        return (
            isinstance(other, SubgroupHandle)
            and self.ambient is other.ambient
            and np.array_equal(self.idx, other.idx)
        )

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"SubgroupHandle(order={self.order} of group order {self.ambient.order})"

    def __le__(self, other: "SubgroupHandle") -> bool:
        if self.ambient is not other.ambient:
            raise ValueError("handles live in different ambient groups")
        return bool(other.mask()[self.idx].all())

    def __lt__(self, other: "SubgroupHandle") -> bool:
        return self <= other and self.order < other.order

    def contains_idx(self, i: int) -> bool:
        return bool(self.mask()[i])

    def elements(self):
        return [self.ambient.elements[i] for i in self.idx.tolist()]

    def is_abelian(self) -> bool:
        if self._abelian is None:
            g = self.ambient
            self._abelian = all(
                g.commute_idx(a, b)
                for ai, a in enumerate(self.gens_idx)
                for b in self.gens_idx[ai + 1:]
            )
        return self._abelian

    def is_elementary_abelian(self) -> bool:
        if not self.is_abelian():
            return False
        orders = self.ambient.element_orders()[self.idx]
        return bool((orders <= self.ambient.p).all())

    def exponent_divides_p(self) -> bool:
        return bool((self.ambient.element_orders()[self.idx] <= self.ambient.p).all())

    def join(self, other: "SubgroupHandle") -> "SubgroupHandle":
        if self.ambient is not other.ambient:
            raise ValueError("handles live in different ambient groups")
        return self.ambient.subgroup_from_gens(self.gens_idx + other.gens_idx)

    def intersect(self, other: "SubgroupHandle") -> "SubgroupHandle":
        both = np.intersect1d(self.idx, other.idx)
        return SubgroupHandle(self.ambient, both, _trusted=True)

    def conjugate(self, g_idx: int) -> "SubgroupHandle":
        g = self.ambient
        ginv = g.inv_idx()[g_idx]
        conj = np.matmul(
            np.matmul(g.arr()[ginv], g.arr()[self.idx]) % g.p, g.arr()[g_idx]
        ) % g.p
        new_idx = g.lookup_rows(conj)
        gens = None
        if self.gens_idx is not None:
            gens = [
                int(g.lookup_rows(
                    (((g.arr()[ginv] @ g.arr()[h]) % g.p @ g.arr()[g_idx]) % g.p)[None]
                )[0])
                for h in self.gens_idx
            ]
        return SubgroupHandle(g, new_idx, gens_idx=gens, _trusted=True)


# ---------------------------------------------------------------------------
# Subgroup operations
# ---------------------------------------------------------------------------

def _check_same_ambient(a: SubgroupHandle, b: SubgroupHandle):
    if a.ambient is not b.ambient:
        raise ValueError("handles live in different ambient groups")


def centralizer(amb: SubgroupHandle, xs) -> SubgroupHandle:
    """C_amb(xs) where xs is an element index or a SubgroupHandle."""
    g = amb.ambient
    if isinstance(xs, SubgroupHandle):
        _check_same_ambient(amb, xs)
        targets = xs.gens_idx if xs.gens_idx else []
    else:
        targets = [int(xs)]
    if not targets:
        return amb
    if g.order <= _CENTBITS_LIMIT:
        bits = g.cent_bits()
        acc = bits[targets[0]].copy()
        for t in targets[1:]:
            acc &= bits[t]
        mask = np.unpackbits(acc, count=g.order).astype(bool)
    else:
        arr = g.arr()[amb.idx]
        mask_local = np.ones(amb.order, dtype=bool)
        for t in targets:
            tm = g.arr()[t]
            mask_local &= (np.matmul(arr, tm) % g.p == np.matmul(tm, arr) % g.p).all(
                axis=(1, 2)
            )
        keep = amb.idx[mask_local]
        return SubgroupHandle(g, keep, _trusted=True)
    keep = amb.idx[mask[amb.idx]]
    return SubgroupHandle(g, keep, _trusted=True)


def center(h: SubgroupHandle) -> SubgroupHandle:
    return centralizer(h, h)


def normalizer(amb: SubgroupHandle, h: SubgroupHandle) -> SubgroupHandle:
    """N_amb(h) = {g in amb : h^g = h}."""
    _check_same_ambient(amb, h)
    g = amb.ambient
    arr = g.arr()[amb.idx]
    arr_inv = g.arr()[g.inv_idx()[amb.idx]]
    hmask = h.mask()
    ok = np.ones(amb.order, dtype=bool)
    for t in h.gens_idx:
        tm = g.arr()[t]
        conj = np.matmul(np.matmul(arr_inv, tm) % g.p, arr) % g.p
        ok &= hmask[g.lookup_rows(conj)]
    return SubgroupHandle(g, amb.idx[ok], _trusted=True)


def normal_closure(g, h: SubgroupHandle):
    """Smallest normal subgroup of g containing h, plus the 2-subnormality
    flag (h normal in the closure)."""
    amb = g.full_handle() if isinstance(g, ExplicitGroup) else g
    _check_same_ambient(amb, h)
    grp = amb.ambient
    conj_gens = amb.gens_idx
    arr = grp.arr()
    # orbit of h's generators under conjugation by the ambient generators
    orbit = np.zeros(grp.order, dtype=bool)
    start = np.array(sorted({int(i) for i in h.gens_idx}), dtype=np.int64)
    orbit[start] = True
    frontier = start
    while frontier.size:
        conjs = []
        for c in conj_gens:
            cinv = arr[int(grp.inv_idx()[c])]
            w = np.matmul(np.matmul(cinv, arr[frontier]) % grp.p, arr[int(c)]) % grp.p
            conjs.append(grp.lookup_rows(w))
        cand = np.unique(np.concatenate(conjs))
        frontier = cand[~orbit[cand]]
        orbit[frontier] = True
    # greedy generator reduction: each extension strictly grows the closure
    gens = list(h.gens_idx)
    member_idx = grp.closure_indices(gens)
    mask = np.zeros(grp.order, dtype=bool)
    mask[member_idx] = True
    for w in np.flatnonzero(orbit):
        if not mask[w]:
            gens.append(int(w))
            member_idx = grp.closure_indices(gens)
            mask[:] = False
            mask[member_idx] = True
    closure = SubgroupHandle(grp, member_idx, gens_idx=gens, _trusted=True)
    two_subnormal = is_normal_in(h, closure)
    return closure, two_subnormal


def is_normal_in(h: SubgroupHandle, k: SubgroupHandle) -> bool:
    """h normal in k (h must be contained in k)."""
    _check_same_ambient(h, k)
    if not h <= k:
        return False
    g = h.ambient
    hmask = h.mask()
    arr = g.arr()[k.idx]
    arr_inv = g.arr()[g.inv_idx()[k.idx]]
    for t in h.gens_idx:
        conj = np.matmul(np.matmul(arr_inv, g.arr()[t]) % g.p, arr) % g.p
        if not hmask[g.lookup_rows(conj)].all():
            return False
    return True


def commutator_idx(g: ExplicitGroup, i: int, j: int) -> int:
    """[x, y] = x^-1 y^-1 x y."""
    inv = g.inv_idx()
    return g.mult_idx(g.mult_idx(g.mult_idx(int(inv[i]), int(inv[j])), i), j)


def commutator_subgroup(a: SubgroupHandle, b: SubgroupHandle) -> SubgroupHandle:
    """[a, b]: generated by elementwise commutators; computed from generator
    commutators closed under conjugation by <a, b>."""
    _check_same_ambient(a, b)
    g = a.ambient
    ident = g.identity_idx
    comm_gens = []
    seen = set()
    for i in a.gens_idx:
        for j in b.gens_idx:
            c = commutator_idx(g, i, j)
            if c != ident and c not in seen:
                seen.add(c)
                comm_gens.append(c)
    if not comm_gens:
        return g.trivial_handle()
    conj_gens = list(dict.fromkeys(a.gens_idx + b.gens_idx))
    gens = list(comm_gens)
    members = set(g.closure_indices(gens).tolist())
    frontier = list(gens)
    inv = g.inv_idx()
    while frontier:
        nxt = []
        for t in frontier:
            for c in conj_gens:
                w = g.mult_idx(g.mult_idx(int(inv[c]), t), c)
                if w not in members:
                    gens.append(w)
                    members = set(g.closure_indices(gens).tolist())
                    nxt.append(w)
        frontier = nxt
    return SubgroupHandle(
        g, np.array(sorted(members), dtype=np.int64), gens_idx=gens, _trusted=True
    )


def iterated_commutator(a: SubgroupHandle, b: SubgroupHandle, k: int) -> SubgroupHandle:
    """[a, b; k], folding left: [a, b; k] = [[a, b; k-1], b]."""
    if k < 1:
        raise ValueError("k must be >= 1")
    cur = a
    for _ in range(k):
        cur = commutator_subgroup(cur, b)
        if cur.order == 1:
            break
    return cur


def iterated_bracket_is_trivial(a: SubgroupHandle, b: SubgroupHandle, k: int) -> bool:
    """[a, b; k] = 1, with a cheap generator-tuple witness search first."""
    g = a.ambient
    ident = g.identity_idx
    # witness search over generator tuples (sound for failure)
    chains = list(a.gens_idx)
    for _ in range(k):
        nxt = []
        for cur in chains:
            for y in b.gens_idx:
                c = commutator_idx(g, cur, y)
                if c != ident:
                    nxt.append(c)
        if not nxt:
            break
        # the witness frontier only needs distinct elements; cap its width
        chains = list(dict.fromkeys(nxt))[:20_000]
    else:
        if chains:
            return False
    return iterated_commutator(a, b, k).order == 1


def omega1(h: SubgroupHandle) -> SubgroupHandle:
    """Subgroup generated by the elements of h of order p."""
    g = h.ambient
    orders = g.element_orders()[h.idx]
    small = h.idx[orders <= g.p]
    if small.shape[0] == h.order:
        return h
    return g.subgroup_from_gens(
        [int(i) for i in small if i != g.identity_idx]
    )


# ---------------------------------------------------------------------------
# Central series and class
# ---------------------------------------------------------------------------

@dataclass
class CentralSeries:
    """Ascending central series 1 = Z_0 <= ... <= Z_n = ambient."""

    terms: list  # list[SubgroupHandle]
    v_index: int | None = None

    def __len__(self):
        return len(self.terms)

    def verify(self, g: ExplicitGroup) -> bool:
        full = g.full_handle()
        prev = None
        for i, t in enumerate(self.terms):
            if prev is not None:
                if not prev <= t:
                    return False
                if not commutator_subgroup(t, full) <= prev:
                    return False
            else:
                if t.order != 1:
                    return False
            if not is_normal_in(t, full):
                return False
            prev = t
        return prev.order == g.order


def upper_central_series(g: ExplicitGroup) -> CentralSeries:
    full = g.full_handle()
    terms = [g.trivial_handle()]
    cur = terms[0]
    inv = g.inv_idx()
    while cur.order < g.order:
        curmask = cur.mask()
        cand = np.arange(g.order, dtype=np.int64)
        ok = np.ones(g.order, dtype=bool)
        for c in g._gen_idx:
            cm = g.arr()[c]
            cminv = g.arr()[inv[c]]
            # [x, c] = x^-1 c^-1 x c for all x at once
            xinv = g.arr()[inv]
            comm = np.matmul(np.matmul(np.matmul(xinv, cminv) % g.p, g.arr()) % g.p, cm) % g.p
            ok &= curmask[g.lookup_rows(comm)]
        nxt = SubgroupHandle(g, cand[ok], _trusted=True)
        if nxt.order == cur.order:
            raise NotPGroup("upper central series stalled; group is not nilpotent")
        terms.append(nxt)
        cur = nxt
    return CentralSeries(terms=terms)


def lower_central_series(g: ExplicitGroup) -> list:
    full = g.full_handle()
    terms = [full]
    cur = full
    while cur.order > 1:
        nxt = commutator_subgroup(cur, full)
        terms.append(nxt)
        if nxt.order == cur.order:
            raise NotPGroup("lower central series stalled; group is not nilpotent")
        cur = nxt
    return terms


def nilpotence_class(g: ExplicitGroup) -> int:
    return len(lower_central_series(g)) - 1


# ---------------------------------------------------------------------------
# Abelian subgroup enumeration (canonical-generation DFS, branch and bound)
# ---------------------------------------------------------------------------

@dataclass
class SearchNode:
    """State exposed to prune callbacks during the abelian subgroup DFS."""

    gens: tuple           # canonical generating sequence (ascending indices)
    member_idx: np.ndarray
    comm_count: int       # |{eligible elements commuting with all of E}|

    @property
    def order(self):
        return int(self.member_idx.shape[0])


def enumerate_abelian_subgroups(
    g: ExplicitGroup,
    elementary_only: bool = True,
    prune=None,
    within: SubgroupHandle | None = None,
    max_count: int | None = None,
):
    """Yield every (elementary) abelian subgroup of g exactly once, in a
    deterministic DFS order (canonical generating sequences, ascending).

    prune(node: SearchNode) -> bool decides whether a subtree is explored;
    node.comm_count is a sound upper bound for the order of any abelian
    extension within the subtree (all eligible elements commuting with E).
    The trivial subgroup is yielded first.
    """
    n = g.order
    ident = g.identity_idx
    eligible = np.ones(n, dtype=bool)
    if elementary_only:
        eligible &= g.orderp_mask()
    if within is not None:
        eligible &= within.mask()
    eligible[ident] = True
    bits = g.cent_bits()
    elig_packed = np.packbits(eligible)
    nbytes = elig_packed.shape[0]

    count = 0
    trivial = g.trivial_handle()
    yield trivial
    count += 1

    arr = g.arr()
    orders = g.element_orders()

    d = g.dim

    def cosets_and_min(member_set, member_sorted, gidx):
        """New elements of <E, g> \\ E as a set (all cosets E*g^j, 0 < j < j0)."""
        p_ord = int(orders[gidx])
        # find j0 = min j > 0 with g^j in E
        powers = []
        cur = gidx
        j0 = None
        for j in range(1, p_ord + 1):
            if cur in member_set:
                j0 = j
                break
            powers.append(cur)
            cur = g.mult_idx(cur, gidx)
        if j0 is None:
            j0 = p_ord  # g^ord = identity in E
        new = set()
        base = arr[member_sorted]
        for j in range(j0 - 1):
            prods = np.matmul(base, arr[powers[j]]) % g.p
            new.update(g.lookup_rows(prods).tolist())
        return new

    def first_coset_survivors(member_sorted, cand):
        """Candidates g whose coset E*g has minimum index exactly g.

        A canonical candidate must be the smallest new element of <E, g>;
        since g lies in E*g, min(E*g) < g rejects it outright.  This filter
        is batched: one matmul per node instead of one per candidate.
        """
        base = arr[member_sorted]                       # (m, d, d)
        m = member_sorted.shape[0]
        keep = []
        step = max(1, 500_000 // max(m, 1))
        for lo in range(0, cand.shape[0], step):
            chunk = cand[lo:lo + step]
            prods = np.matmul(base[None], arr[chunk][:, None]) % g.p
            idxs = g.lookup_rows(prods.reshape(-1, d, d))
            mins = idxs.reshape(chunk.shape[0], m).min(axis=1)
            keep.append(chunk[mins == chunk])
        return np.concatenate(keep) if keep else cand

    def visit(gens, member_sorted, member_set, pool_packed, comm_packed):
        nonlocal count
        pool = np.unpackbits(pool_packed, count=n).astype(bool)
        cand = np.nonzero(pool)[0]
        if elementary_only:
            cand = cand[orders[cand] == g.p]
        if cand.size == 0:
            return
        cand = first_coset_survivors(member_sorted, cand)
        for gidx in cand.tolist():
            new = cosets_and_min(member_set, member_sorted, gidx)
            if not new or min(new) != gidx:
                continue
            child_set = member_set | new
            child_sorted = np.array(sorted(child_set), dtype=np.int64)
            child_comm = comm_packed & bits[gidx]
            comm_count = popcount(child_comm)
            node = SearchNode(
                gens=gens + (gidx,), member_idx=child_sorted, comm_count=comm_count
            )
            if prune is not None and not prune(node):
                continue
            if max_count is not None and count >= max_count:
                raise CapExceeded("abelian subgroup enumeration cap hit",
                                  partial_count=count)
            yield SubgroupHandle(
                g, child_sorted, gens_idx=list(node.gens), _trusted=True
            )
            count += 1
            # children must pick strictly larger indices outside the subgroup
            child_pool = pool_packed & bits[gidx] & _mask_above(gidx, n, nbytes)
            child_pool = child_pool & ~_pack_indices(child_sorted, n)
            yield from visit(node.gens, child_sorted, child_set,
                             child_pool, child_comm)

    root_pool = elig_packed & ~_pack_indices(np.array([ident]), n)
    yield from visit((), np.array([ident], dtype=np.int64), {ident},
                     root_pool, elig_packed)


def _mask_above(i: int, n: int, nbytes: int) -> np.ndarray:
    m = np.zeros(n, dtype=bool)
    m[i + 1:] = True
    return np.packbits(m)


def _pack_indices(idx: np.ndarray, n: int) -> np.ndarray:
    m = np.zeros(n, dtype=bool)
    m[idx] = True
    return np.packbits(m)


def maximal_elementary_abelian(g: ExplicitGroup, within=None):
    """All elementary abelian subgroups of maximum order (A_e), deterministic."""
    if within is None and g._max_elab is not None:
        return list(g._max_elab)
    best = [1]
    found = []

    def prune(node: SearchNode) -> bool:
        return node.comm_count >= best[0]

    for h in enumerate_abelian_subgroups(
        g, elementary_only=True, prune=prune, within=within
    ):
        if h.order > best[0]:
            best[0] = h.order
            found.clear()
        if h.order == best[0]:
            found.append(h)
    found.sort(key=lambda h: h.key)
    if within is None:
        g._max_elab = list(found)
    return found


def all_subgroups(g: ExplicitGroup, max_count: int | None = None):
    """Every subgroup of g, by layered cyclic extension.

    In a p-group each subgroup of order p^(k+1) has a normal subgroup of
    index p, so it arises as <H, x> with H of order p^k, x in N_g(H) \\ H
    and x^p in H.  Yields subgroups in ascending order of size, dedup by key.
    """
    full = g.full_handle()
    trivial = g.trivial_handle()
    count = 1
    yield trivial
    current = [trivial]
    orders = g.element_orders()
    while current:
        nxt = {}
        for h in current:
            nh = h if h.order == g.order else normalizer(full, h)
            hmask = h.mask()
            for x in nh.idx.tolist():
                if hmask[x]:
                    continue
                # x^p must land in h for <h, x> to have order p.|h|
                xp = x
                for _ in range(g.p - 1):
                    xp = g.mult_idx(xp, x)
                if not hmask[xp]:
                    continue
                k = g.subgroup_from_gens(list(h.gens_idx) + [x])
                if k.key not in nxt:
                    nxt[k.key] = k
        current = [nxt[k] for k in sorted(nxt)]
        for k in current:
            if max_count is not None and count >= max_count:
                raise CapExceeded(
                    "subgroup enumeration cap hit", partial_count=count
                )
            yield k
            count += 1


def thompson_subgroup(g: ExplicitGroup) -> SubgroupHandle:
    """J_e(g): join of the elementary abelian subgroups of maximum order."""
    if g._je is not None:
        return g._je
    gens = []
    for h in maximal_elementary_abelian(g):
        gens.extend(h.gens_idx)
    je = g.subgroup_from_gens(gens) if gens else g.trivial_handle()
    g._je = je
    return je


def baumann_subgroup(g: ExplicitGroup) -> SubgroupHandle:
    """Baum(g) = C_g(Omega_1 Z(J_e(g)))."""
    je = thompson_subgroup(g)
    target = omega1(center(je))
    return centralizer(g.full_handle(), target)
