"""X_k chains and certificates, J_e/Baum, conjecture checks, and the
theorem monitors."""

import numpy as np
import pytest

from oliverpg import (
    OliverError,
    all_subgroups,
    center,
    centralizer,
    check_conjecture,
    class_bound,
    compute_Baum,
    compute_Je,
    compute_Xk,
    corpus,
    is_normal_in,
    monitors_fired,
    run_monitors,
    thompson_subgroup,
    verify_chain,
    x3_le_centralizer_of_W,
)
from oliverpg.characteristic import OliverChain


def test_x3_ut35_whole_group(ut3):
    x3, chain = compute_Xk(ut3, 3)
    assert x3.order == 125
    assert [t.order for t in chain.terms] == [1, 25, 125]
    assert verify_chain(ut3, chain)


def test_xk_scan_order_independent(ut3, ut4):
    for g in (ut3, ut4):
        fwd, _ = compute_Xk(g, 3)
        rev, _ = compute_Xk(g, 3, scan_reverse=True)
        assert fwd.key == rev.key


def test_xk_monotone_in_k(ut4):
    x3, _ = compute_Xk(ut4, 3)
    x4, _ = compute_Xk(ut4, 4)
    x5, _ = compute_Xk(ut4, 5)
    assert x3 <= x4 and x4 <= x5


def test_xk_k_bounds(ut3):
    with pytest.raises(OliverError):
        compute_Xk(ut3, 2)
    with pytest.raises(OliverError):
        compute_Xk(ut3, 6)  # k > p


def test_xk_self_centralizing(ut3, wreath):
    for g in (ut3, wreath.group):
        xk, _ = compute_Xk(g, 3)
        c = centralizer(g.full_handle(), xk)
        assert c.key == center(xk).key


def test_every_normal_abelian_subgroup_below_x3(wreath):
    g = wreath.group
    x3, _ = compute_Xk(g, 3)
    for h in all_subgroups(g):
        if h.is_abelian() and is_normal_in(h, g.full_handle()):
            assert h <= x3


def test_verify_chain_rejects_corruption(ut3):
    x3, chain = compute_Xk(ut3, 3)
    # drop the middle term: no longer strictly ascending from 1 to X_3
    bad = OliverChain(k=3, terms=[chain.terms[0], chain.terms[-1], chain.terms[1]])
    assert not verify_chain(ut3, bad)
    # a chain whose term is not normal in S
    non_normal = ut3.subgroup_from_gens([1])
    if not is_normal_in(non_normal, ut3.full_handle()):
        bad2 = OliverChain(k=3, terms=[chain.terms[0], non_normal])
        assert not verify_chain(ut3, bad2)


def test_wreath_je_equals_x3_equals_base(wreath):
    g = wreath.group
    je = compute_Je(g)
    x3, chain = compute_Xk(g, 3)
    assert je.key == wreath.base.key
    assert x3.key == wreath.base.key
    assert verify_chain(g, chain)


def test_x3_proper_when_quadratic_center_wreath(wreath):
    # the wreath group has X_3 proper (the base), not the whole group
    x3, _ = compute_Xk(wreath.group, 3)
    assert x3.order < wreath.group.order


def test_compute_je_semidirect_reduction(ctx3, jordan5):
    red = compute_Je(ctx3)
    assert not red.le_V and len(red.offenders) == 17
    red2 = compute_Je(jordan5)
    assert red2.le_V and red2.offenders == []


def test_baum_contains_thompson(ut3, ut4, wreath):
    for g in (ut3, ut4, wreath.group):
        je = thompson_subgroup(g)
        baum = compute_Baum(g)
        assert je <= baum


def test_check_conjecture_explicit_ut35(ut3):
    rep = check_conjecture(ut3, 3)
    assert rep.mode == "explicit" and rep.verdict
    assert rep.xk_order == 125 and rep.je_order == 125


def test_check_conjecture_semidirect_jordan(jordan5):
    rep = check_conjecture(jordan5, 5, mode="semidirect")
    assert rep.verdict and rep.mode == "semidirect"
    assert not rep.counterexample


def test_check_conjecture_auto_falls_back_to_explicit(ctx3):
    # UT(3,5) natural module is not PS of degree 3: auto runs explicit mode
    rep = check_conjecture(ctx3, 3, mode="auto")
    assert rep.mode == "explicit"
    assert rep.verdict
    assert rep.je_order == 5**4  # J_e of the embedded S


def test_class_bound_values():
    assert class_bound(5) == 2
    assert class_bound(17) == 4


def test_monitors_pass_on_corpus_contexts(ctx3, jordan3, jordan5):
    for ctx, k in ((ctx3, 3), (jordan3, 3), (jordan5, 5)):
        outs = run_monitors(ctx, k=k)
        assert not monitors_fired(outs)


def test_monitor_one_applicable_on_jordan5(jordan5):
    outs = run_monitors(jordan5, k=5)
    t1 = outs[0]
    assert t1.applicable and t1.passed
    assert t1.detail["class"] <= t1.detail["class_bound"]
    assert t1.detail["ps_degree"] == 5


def test_corrupted_monitor_fires_with_certificate(jordan5):
    outs = run_monitors(jordan5, k=5, corrupt=True)
    assert monitors_fired(outs)
    fired = [m for m in outs if not m.passed]
    assert all(m.certificate is not None for m in fired)


def test_x3_le_centralizer_of_W(ut3):
    w = center(ut3.full_handle())
    assert x3_le_centralizer_of_W(ut3, w)
