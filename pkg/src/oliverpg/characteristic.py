"""Characteristic-subgroup machinery: the subgroups X_k(S) with certificate
chains, the Thompson subgroup J_e, the Baumann subgroup, conjecture checks,
and the theorem monitors.

X_k(S) (3 <= k <= p) is the largest subgroup admitting a chain
1 = Q_0 < Q_1 < ... < Q_n = X_k(S) of subgroups normal in S with
[Omega_1(C_S(Q_{i-1})), Q_i; k-1] = 1 for every i.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import OliverError, TheoremViolation, UnsupportedInstance
from .groups import (
    DEFAULT_CAP,
    ExplicitGroup,
    SubgroupHandle,
    baumann_subgroup,
    center,
    centralizer,
    is_normal_in,
    iterated_bracket_is_trivial,
    nilpotence_class,
    normal_closure,
    omega1,
    thompson_subgroup,
)
from .action import (
    SemidirectContext,
    find_offenders,
    is_ps_module,
    ps_degree,
)


# ---------------------------------------------------------------------------
# X_k with certificates
# ---------------------------------------------------------------------------


@dataclass
class OliverChain:
    """Certificate for X_k: the chain 1 = Q_0 < Q_1 < ... < Q_n found by the
    greedy search.  Each term is normal in the ambient group and satisfies
    the iterated-bracket condition against Omega_1(C_S(Q_{i-1}))."""

    k: int
    terms: list  # list[SubgroupHandle], starting at the trivial subgroup

    @property
    def top(self) -> SubgroupHandle:
        return self.terms[-1]


@dataclass
class ChainVerification:
    ok: bool
    failing_index: int | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def compute_Xk(s: ExplicitGroup, k: int, scan_reverse: bool = False):
    """(X_k(S), certificate chain) by greedy normal-closure extension.

    From the current term Q, scan candidate extensions R = Q.<g^S> over
    conjugacy-class representatives g in canonical element order (one R per
    class; conjugate g give the same closure); extend on the first R with
    [Omega_1(C_S(Q)), R; k-1] = 1 and restart.  Any subgroup of a valid
    extension containing Q would extend too (the bracket condition passes to
    subgroups), and the largest-subgroup property makes the limit
    independent of scan order; scan_reverse exists to assert that in tests.
    """
    if not 3 <= k <= s.p:
        raise OliverError(f"k must satisfy 3 <= k <= p, got k={k}, p={s.p}")
    full = s.full_handle()
    q = s.trivial_handle()
    chain = [q]
    reps = [cls[0] for cls in s.conjugacy_classes()]
    reps = [r for r in reps if r != s.identity_idx]
    if scan_reverse:
        reps = reps[::-1]
    while True:
        c = omega1(centralizer(full, q))
        qmask = q.mask()
        tried = set()
        extended = False
        for g in reps:
            if qmask[g]:
                continue
            n, _ = normal_closure(s, s.subgroup_from_gens([g]))
            r = q.join(n)
            if r.key in tried or r.order == q.order:
                continue
            if iterated_bracket_is_trivial(c, r, k - 1):
                q = r
                chain.append(r)
                extended = True
                break
            tried.add(r.key)
        if not extended:
            break
    return q, OliverChain(k=k, terms=chain)


def verify_chain(s: ExplicitGroup, chain: OliverChain) -> ChainVerification:
    """Independent re-check of a certificate: strict ascent, normality in S,
    and every iterated-bracket condition."""
    full = s.full_handle()
    terms = chain.terms
    if not terms or terms[0].order != 1:
        return ChainVerification(False, 0, "chain must start at the trivial subgroup")
    for i in range(1, len(terms)):
        prev, cur = terms[i - 1], terms[i]
        if not (prev <= cur and prev.order < cur.order):
            return ChainVerification(False, i, "chain not strictly ascending")
        if not is_normal_in(cur, full):
            return ChainVerification(False, i, "term not normal in S")
        c = omega1(centralizer(full, prev))
        if not iterated_bracket_is_trivial(c, cur, chain.k - 1):
            return ChainVerification(False, i, "bracket condition fails")
    return ChainVerification(True)


# ---------------------------------------------------------------------------
# J_e and Baum
# ---------------------------------------------------------------------------


@dataclass
class JeReduction:
    """Semidirect-mode answer to 'is J_e(S) <= V?'.

    J_e(S) <= V holds exactly when no nontrivial elementary abelian E <= G
    has |E| |C_V(E)| >= |V| (no offender).
    """

    le_V: bool
    offenders: list


def compute_Je(target):
    """J_e of an explicit group, or the J_e(S) <= V reduction for a context."""
    if isinstance(target, SemidirectContext):
        offs = find_offenders(target)
        return JeReduction(le_V=not offs, offenders=offs)
    return thompson_subgroup(target)


def compute_Baum(g: ExplicitGroup) -> SubgroupHandle:
    return baumann_subgroup(g)


# ---------------------------------------------------------------------------
# Conjecture checks
# ---------------------------------------------------------------------------


@dataclass
class ConjectureReport:
    p: int
    k: int
    mode: str                    # "explicit" | "semidirect"
    verdict: bool                # J_e(S) <= X_k(S)
    xk_order: int | None = None
    je_order: int | None = None
    counterexample: bool = False
    details: dict = field(default_factory=dict)
    monitors: list = field(default_factory=list)


def check_conjecture(
    target, k: int, mode: str = "auto", cap: int = DEFAULT_CAP
) -> ConjectureReport:
    """Verdict on J_e(S) <= X_k(S).

    Explicit mode computes both subgroups inside an enumerated S.  Semidirect
    mode requires V to be a PS-module of degree k, where X_k(V x| G) = V and
    the verdict reduces to emptiness of the offender list.  A false verdict
    at k = p is flagged as a counterexample candidate and, when feasible,
    re-verified in explicit mode.
    """
    if isinstance(target, ExplicitGroup):
        return _check_explicit(target, k)
    ctx = target
    if mode not in ("auto", "explicit", "semidirect"):
        raise OliverError(f"unknown mode {mode!r}")
    reducible = is_ps_module(ctx, k)
    s_order = ctx.module_order * ctx.G.order
    if mode == "semidirect" or (mode == "auto" and reducible):
        if not reducible:
            raise UnsupportedInstance(
                "semidirect reduction needs a PS-module of degree k"
            )
        offs = find_offenders(ctx)
        verdict = not offs
        rep = ConjectureReport(
            p=ctx.p,
            k=k,
            mode="semidirect",
            verdict=verdict,
            details={
                "ps_degree": ps_degree(ctx),
                "offender_count": len(offs),
                "X_k": "V (PS-module reduction)",
            },
        )
        if not verdict and k == ctx.p:
            rep.counterexample = True
            if s_order <= cap:
                explicit = _check_explicit(ctx.explicit_group(cap), k)
                rep.details["explicit_reverify_verdict"] = explicit.verdict
        return rep
    if s_order > cap:
        raise UnsupportedInstance(
            f"explicit mode needs |S| = {s_order} <= cap = {cap}"
        )
    rep = _check_explicit(ctx.explicit_group(cap), k)
    return rep


def _check_explicit(s: ExplicitGroup, k: int) -> ConjectureReport:
    xk, chain = compute_Xk(s, k)
    je = thompson_subgroup(s)
    verdict = je <= xk
    rep = ConjectureReport(
        p=s.p,
        k=k,
        mode="explicit",
        verdict=verdict,
        xk_order=xk.order,
        je_order=je.order,
        details={"chain_lengths": [t.order for t in chain.terms]},
    )
    if not verdict and k == s.p:
        rep.counterexample = True
    return rep


def x3_le_centralizer_of_W(g: ExplicitGroup, w: SubgroupHandle) -> bool:
    """Does X_3(G) lie inside C_G(W)?  (The predicted containment for W
    produced by the normal-W descent when W is not central.)"""
    x3, _ = compute_Xk(g, 3)
    return x3 <= centralizer(g.full_handle(), w)


# ---------------------------------------------------------------------------
# Theorem monitors
# ---------------------------------------------------------------------------


@dataclass
class MonitorOutcome:
    name: str
    applicable: bool
    passed: bool
    detail: dict = field(default_factory=dict)
    certificate: dict | None = None


def class_bound(p: int) -> int:
    """floor(log2(p - 2) + 1): the class bound in the small-class theorem."""
    return int(math.floor(math.log2(p - 2) + 1))


def run_monitors(
    ctx: SemidirectContext, k: int | None = None, corrupt: bool = False
) -> list:
    """The three theorem monitors on a module context.

    1. class(G) <= floor(log2(p-2)+1) and PS of degree p => no offenders.
    2. p >= 5, Baum(G) = G, PS of degree k => no offenders.
    3. p >= 5 and V an F-module => a 2-subnormal quadratic offender exists.

    A violated monitor reports passed=False with a machine-checkable
    certificate (a counterexample candidate).  The corrupt flag deliberately
    falsifies the offender-emptiness evaluation; it exists only so the
    mutation test can prove the monitors actually fire.
    """
    out = []
    offs = find_offenders(ctx)
    degree = ps_degree(ctx) if ctx.G.order > 1 else None
    observed = offs if not corrupt else (offs or [_fabricated_offender(ctx)])

    bound = class_bound(ctx.p)
    cls = nilpotence_class(ctx.G)
    t1_applicable = cls <= bound and degree is not None and degree >= ctx.p
    t1_pass = (not observed) if t1_applicable else True
    out.append(
        MonitorOutcome(
            name="small-class PS-modules admit no offenders",
            applicable=t1_applicable,
            passed=t1_pass,
            detail={"class": cls, "class_bound": bound, "ps_degree": degree},
            certificate=None if t1_pass else _offender_certificate(ctx, observed),
        )
    )

    t2_applicable = False
    if ctx.p >= 5 and k is not None and 3 <= k <= ctx.p and ctx.G.order > 1:
        baum = compute_Baum(ctx.G)
        t2_applicable = baum.order == ctx.G.order and degree >= k
    t2_pass = (not observed) if t2_applicable else True
    out.append(
        MonitorOutcome(
            name="self-Baumann groups with PS-modules admit no offenders",
            applicable=t2_applicable,
            passed=t2_pass,
            detail={"k": k, "ps_degree": degree},
            certificate=None if t2_pass else _offender_certificate(ctx, observed),
        )
    )

    t3_applicable = ctx.p >= 5 and bool(offs)
    t3_pass = True
    t3_cert = None
    t3_detail = {"f_module": bool(offs)}
    if t3_applicable:
        from .replacement import two_subnormal_offender

        try:
            winner = two_subnormal_offender(ctx)
            t3_detail["offender_order"] = winner.E.order
        except TheoremViolation as exc:
            t3_pass = False
            t3_cert = exc.certificate
    out.append(
        MonitorOutcome(
            name="F-modules admit a 2-subnormal quadratic offender",
            applicable=t3_applicable,
            passed=t3_pass,
            detail=t3_detail,
            certificate=t3_cert,
        )
    )
    return out


def _fabricated_offender(ctx: SemidirectContext):
    from .action import Offender
    from .linalg import Subspace

    return Offender(
        E=ctx.G.trivial_handle(),
        fixed=Subspace.full(ctx.n, ctx.p),
        defect=0,
        quadratic=False,
        two_subnormal=False,
    )


def _offender_certificate(ctx: SemidirectContext, offs) -> dict:
    o = offs[0]
    return {
        "claim": "offender list should be empty but is not",
        "p": ctx.p,
        "n": ctx.n,
        "E_generators": [
            ctx.G.arr()[i].tolist() for i in o.E.gens_idx
        ],
        "E_order": o.E.order,
        "fixed_dim": o.fixed.dim,
        "defect": o.defect,
    }


def monitors_fired(outcomes) -> bool:
    return any(not m.passed for m in outcomes)
