"""Exact linear algebra over the prime field F_p.

Conventions used throughout the library:

* vectors are rows and act on the right: v -> v.g;
* the module commutator is additive: [v, g] = v.(g - 1);
* matrix entries are stored as residues in [0, p) in int64 numpy arrays;
* the canonical byte key of a matrix is its row-major little-endian
  uint16 encoding.  This key is the universal tie-breaker and hash key.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, LogDomain, NotUnipotent


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    d = 2
    while d * d <= n:
        if n % d == 0:
            return False
        d += 1
    return True


@dataclass(frozen=True)
class FieldSpec:
    """The prime field F_p.  Only odd primes are accepted; computations with
    p = 3 are allowed but several replacement engines require p >= 5 and
    check that themselves."""

    p: int

    def __post_init__(self):
        if not _is_prime(self.p):
            raise ValueError(f"p = {self.p} is not prime")
        if self.p == 2:
            raise ValueError("p = 2 is rejected; odd primes only")
        if self.p >= 2 ** 16:
            raise ValueError("p too large for the canonical byte encoding")


def _as_residues(entries, p: int) -> np.ndarray:
    a = np.asarray(entries, dtype=np.int64) % p
    a.flags.writeable = False
    return a


class FpMatrix:
    """Dense square matrix over F_p.  Immutable; hashable by canonical key."""

    __slots__ = ("p", "dim", "a", "_key")

    def __init__(self, entries, p: int):
        a = _as_residues(entries, p)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "dim", a.shape[0])
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "_key", None)

    def __setattr__(self, *args):
        raise AttributeError("FpMatrix is immutable")

    @property
    def key(self) -> bytes:
        k = self._key
        if k is None:
            k = self.a.astype("<u2").tobytes()
            object.__setattr__(self, "_key", k)
        return k

    @staticmethod
    def identity(dim: int, p: int) -> "FpMatrix":
        return FpMatrix(np.eye(dim, dtype=np.int64), p)

    @staticmethod
    def zero(dim: int, p: int) -> "FpMatrix":
        return FpMatrix(np.zeros((dim, dim), dtype=np.int64), p)

    def _check_compat(self, other: "FpMatrix"):
        if self.p != other.p or self.dim != other.dim:
            raise DimensionMismatch(
                f"incompatible matrices: ({self.dim}, p={self.p}) vs "
                f"({other.dim}, p={other.p})"
            )

    def __matmul__(self, other: "FpMatrix") -> "FpMatrix":
        self._check_compat(other)
        return FpMatrix((self.a @ other.a) % self.p, self.p)

    def __add__(self, other: "FpMatrix") -> "FpMatrix":
        self._check_compat(other)
        return FpMatrix((self.a + other.a) % self.p, self.p)

    def __sub__(self, other: "FpMatrix") -> "FpMatrix":
        self._check_compat(other)
        return FpMatrix((self.a - other.a) % self.p, self.p)

    def scale(self, c: int) -> "FpMatrix":
        return FpMatrix((self.a * (c % self.p)) % self.p, self.p)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FpMatrix)
            and self.p == other.p
            and self.dim == other.dim
            and self.key == other.key
        )

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"FpMatrix(p={self.p},\n{self.a})"

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.a, np.eye(self.dim, dtype=np.int64)))

    def is_zero(self) -> bool:
        return not self.a.any()

    def is_invertible(self) -> bool:
        return det_mod(self.a, self.p) != 0

    def inverse(self) -> "FpMatrix":
        return FpMatrix(inv_mod(self.a, self.p), self.p)

    def pow(self, e: int) -> "FpMatrix":
        if e < 0:
            return self.inverse().pow(-e)
        result = np.eye(self.dim, dtype=np.int64)
        base = self.a
        while e:
            if e & 1:
                result = (result @ base) % self.p
            base = (base @ base) % self.p
            e >>= 1
        return FpMatrix(result, self.p)


def mat_mul(a: FpMatrix, b: FpMatrix) -> FpMatrix:
    return a @ b


# ---------------------------------------------------------------------------
# Row reduction and subspaces
# ---------------------------------------------------------------------------

def rref(mat: np.ndarray, p: int) -> np.ndarray:
    """Reduced row echelon form over F_p; zero rows removed."""
    m = np.array(mat, dtype=np.int64) % p
    if m.ndim != 2:
        raise DimensionMismatch("rref expects a 2-d array")
    n_rows, n_cols = m.shape
    r = 0
    for c in range(n_cols):
        pivot = None
        for i in range(r, n_rows):
            if m[i, c]:
                pivot = i
                break
        if pivot is None:
            continue
        if pivot != r:
            m[[r, pivot]] = m[[pivot, r]]
        m[r] = (m[r] * pow(int(m[r, c]), -1, p)) % p
        for i in range(n_rows):
            if i != r and m[i, c]:
                m[i] = (m[i] - m[i, c] * m[r]) % p
        r += 1
        if r == n_rows:
            break
    return m[:r]


def nullspace(mat: np.ndarray, p: int) -> np.ndarray:
    """Basis (RREF rows) of {v : v @ mat = 0} for a rows x cols matrix."""
    m = np.asarray(mat, dtype=np.int64) % p
    n_rows = m.shape[0]
    # v @ m = 0  <=>  m.T @ v.T = 0; reduce m.T and read off free variables.
    red = rref(m.T, p)
    pivots = []
    col = 0
    for row in red:
        while col < n_rows and row[col] == 0:
            col += 1
        pivots.append(col)
    free = [j for j in range(n_rows) if j not in pivots]
    basis = np.zeros((len(free), n_rows), dtype=np.int64)
    for bi, j in enumerate(free):
        basis[bi, j] = 1
        for ri, pc in enumerate(pivots):
            basis[bi, pc] = (-red[ri, j]) % p
    return rref(basis, p)


def det_mod(mat: np.ndarray, p: int) -> int:
    m = np.array(mat, dtype=np.int64) % p
    n = m.shape[0]
    det = 1
    for i in range(n):
        pivot = None
        for r in range(i, n):
            if m[r, i]:
                pivot = r
                break
        if pivot is None:
            return 0
        if pivot != i:
            m[[i, pivot]] = m[[pivot, i]]
            det = (-det) % p
        det = (det * int(m[i, i])) % p
        inv = pow(int(m[i, i]), -1, p)
        for r in range(i + 1, n):
            if m[r, i]:
                m[r] = (m[r] - (m[r, i] * inv) % p * m[i]) % p
    return det


def inv_mod(mat: np.ndarray, p: int) -> np.ndarray:
    m = np.asarray(mat, dtype=np.int64) % p
    n = m.shape[0]
    aug = np.hstack([m, np.eye(n, dtype=np.int64)])
    red = rref(aug, p)
    if red.shape[0] < n or not np.array_equal(red[:, :n], np.eye(n, dtype=np.int64)):
        raise DimensionMismatch("matrix is singular")
    return red[:, n:]


class Subspace:
    """Subspace of the row-vector space F_p^n, canonically represented by its
    RREF basis.  Two subspaces are equal iff their bases are bit-identical."""

    __slots__ = ("p", "ambient_dim", "basis", "_key")

    def __init__(self, basis, p: int, ambient_dim: int):
        b = rref(np.asarray(basis, dtype=np.int64).reshape(-1, ambient_dim), p)
        b.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "ambient_dim", ambient_dim)
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "_key", b.astype("<u2").tobytes())

    def __setattr__(self, *args):
        raise AttributeError("Subspace is immutable")

    @staticmethod
    def full(n: int, p: int) -> "Subspace":
        return Subspace(np.eye(n, dtype=np.int64), p, n)

    @staticmethod
    def zero(n: int, p: int) -> "Subspace":
        return Subspace(np.zeros((0, n), dtype=np.int64), p, n)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def size(self) -> int:
        return self.p ** self.dim

    @property
    def key(self) -> bytes:
        return self._key

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Subspace)
            and self.p == other.p
            and self.ambient_dim == other.ambient_dim
            and self._key == other._key
        )

    def __hash__(self):
        return hash((self.ambient_dim, self._key))

    def __repr__(self):
        return f"Subspace(dim={self.dim}, ambient={self.ambient_dim}, p={self.p})"

    def _check(self, other: "Subspace"):
        if self.p != other.p or self.ambient_dim != other.ambient_dim:
            raise DimensionMismatch("mismatched ambient spaces")

    def contains_vector(self, v) -> bool:
        v = np.asarray(v, dtype=np.int64) % self.p
        stacked = rref(np.vstack([self.basis, v.reshape(1, -1)]), self.p)
        return stacked.shape[0] == self.dim

    def contains(self, other: "Subspace") -> bool:
        self._check(other)
        if other.dim == 0:
            return True
        stacked = rref(np.vstack([self.basis, other.basis]), self.p)
        return stacked.shape[0] == self.dim

    def sum(self, other: "Subspace") -> "Subspace":
        self._check(other)
        return Subspace(
            np.vstack([self.basis, other.basis]), self.p, self.ambient_dim
        )

    def intersect(self, other: "Subspace") -> "Subspace":
        self._check(other)
        if self.dim == 0 or other.dim == 0:
            return Subspace.zero(self.ambient_dim, self.p)
        stacked = np.vstack([self.basis, (-other.basis) % self.p])
        combos = nullspace(stacked, self.p)  # rows (x | y) with x.U = y.W
        vecs = (combos[:, : self.dim] @ self.basis) % self.p
        return Subspace(vecs, self.p, self.ambient_dim)

    def apply(self, m: np.ndarray) -> "Subspace":
        """Image of the subspace under v -> v.m."""
        return Subspace((self.basis @ (m % self.p)) % self.p, self.p, self.ambient_dim)

    def vectors(self) -> np.ndarray:
        """All p^dim member vectors, in lexicographic coefficient order."""
        k = self.dim
        if k == 0:
            return np.zeros((1, self.ambient_dim), dtype=np.int64)
        coeffs = np.indices((self.p,) * k).reshape(k, -1).T
        return (coeffs @ self.basis) % self.p


def kernel(m: FpMatrix) -> Subspace:
    """{v : v.m = 0} under the row-vector action."""
    return Subspace(nullspace(m.a, m.p), m.p, m.dim)


def row_space(m: FpMatrix) -> Subspace:
    return Subspace(m.a, m.p, m.dim)


def intersect(u: Subspace, v: Subspace) -> Subspace:
    return u.intersect(v)


def subspace_sum(u: Subspace, v: Subspace) -> Subspace:
    return u.sum(v)


# ---------------------------------------------------------------------------
# Unipotent structure, logarithm and exponential
# ---------------------------------------------------------------------------

def unipotent_index(g: FpMatrix) -> int:
    """Smallest d >= 1 with (g - 1)^d = 0, i.e. the degree of the minimum
    polynomial (x - 1)^d of a unipotent matrix."""
    n = (g - FpMatrix.identity(g.dim, g.p)).a
    if not n.any():
        return 1
    power = n
    for d in range(2, g.dim + 1):
        power = (power @ n) % g.p
        if not power.any():
            return d
    raise NotUnipotent("matrix is not unipotent: (g - 1) is not nilpotent")


def is_unipotent(g: FpMatrix) -> bool:
    try:
        unipotent_index(g)
        return True
    except NotUnipotent:
        return False


def nilpotence_index(x: FpMatrix) -> int:
    """Smallest d >= 0 with x^d = 0 (d = 0 only for the empty case d=... x=0 -> 1)."""
    if x.is_zero():
        return 1
    power = x.a
    for d in range(2, x.dim + 1):
        power = (power @ x.a) % x.p
        if not power.any():
            return d
    raise NotUnipotent("matrix is not nilpotent")


def matrix_log(g: FpMatrix) -> FpMatrix:
    """log g = sum_{k=1}^{p-1} (-1)^(k+1) (g-1)^k / k, defined when the
    nilpotence index of g-1 is at most p."""
    p = g.p
    n = (g - FpMatrix.identity(g.dim, g.p)).a
    acc = np.zeros_like(n)
    power = np.eye(g.dim, dtype=np.int64)
    for k in range(1, p):
        power = (power @ n) % p
        if not power.any():
            return FpMatrix(acc, p)
        sign = 1 if k % 2 == 1 else -1
        acc = (acc + sign * pow(k, -1, p) * power) % p
    if not ((power @ n) % p).any():  # index exactly p is still fine
        return FpMatrix(acc, p)
    # (g-1)^(p+1) != 0: denominators beyond p-1 are not invertible.
    raise LogDomain(
        f"matrix log undefined: (g - 1) has nilpotence index > {p}"
    )


def matrix_exp(x: FpMatrix) -> FpMatrix:
    """exp x = sum_{k=0}^{p-1} x^k / k!, defined when x^p = 0."""
    p = x.p
    acc = np.eye(x.dim, dtype=np.int64)
    power = np.eye(x.dim, dtype=np.int64)
    fact = 1
    for k in range(1, p):
        power = (power @ x.a) % p
        if not power.any():
            return FpMatrix(acc, p)
        fact = (fact * k) % p
        acc = (acc + pow(fact, -1, p) * power) % p
    if not ((power @ x.a) % p).any():
        return FpMatrix(acc, p)
    raise LogDomain(f"matrix exp undefined: x has nilpotence index > {p}")


def batched_mod_matmul(stack: np.ndarray, m: np.ndarray, p: int) -> np.ndarray:
    """(N, d, d) @ (d, d) mod p, exact.  Entries < p and d <= 32 keep the
    int64 products far from overflow."""
    return np.matmul(stack, m) % p


def batched_unipotent_inverse(stack: np.ndarray, p: int, dim: int) -> np.ndarray:
    """Inverses of a stack of unipotent matrices via the finite Neumann series
    (I + N)^-1 = I - N + N^2 - ..."""
    eye = np.eye(dim, dtype=np.int64)
    n = (stack - eye) % p
    acc = np.broadcast_to(eye, stack.shape).copy()
    power = np.broadcast_to(eye, stack.shape).copy()
    for k in range(1, dim):
        power = np.matmul(power, n) % p
        if not power.any():
            break
        sign = -1 if k % 2 else 1
        acc = (acc + sign * power) % p
    return acc % p
