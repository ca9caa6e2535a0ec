"""Corpus builders and the registered expected facts."""

import numpy as np
import pytest

from oliverpg import (
    OliverError,
    corpus,
    find_offenders,
    fixed_space,
    nilpotence_class,
    ps_degree,
    thompson_subgroup,
)


def test_every_registered_instance_verifies():
    for spec in corpus.CORPUS:
        spec.construct(verify=True)


def test_instance_names_and_lookup():
    names = corpus.instance_names()
    assert "ut3_5" in names and "wreath3" in names
    ctx = corpus.get_instance("ut3_5")
    assert ctx.G.order == 125
    with pytest.raises(OliverError):
        corpus.get_instance("nope")


def test_unitriangular_orders_and_classes():
    for n in (2, 3, 4):
        g = corpus.unitriangular(n, 5)
        assert g.order == 5 ** (n * (n - 1) // 2)
        assert nilpotence_class(g) == n - 1


def test_wreath_structure(wreath):
    g = wreath.group
    assert g.order == 81 and wreath.base.order == 27
    assert nilpotence_class(g) == 3
    assert wreath.base.is_elementary_abelian()
    # base is normal: conjugation by the top shift permutes the block cycles
    from oliverpg import is_normal_in

    assert is_normal_in(wreath.base, g.full_handle())
    assert thompson_subgroup(g).key == wreath.base.key


def test_wreath5_group_only():
    w = corpus.wreath_cp_cp(5)
    assert w.group.order == 5**6
    assert w.base.order == 5**5


def test_extraspecial_is_ut3():
    g = corpus.extraspecial_exponent_p(5)
    h = corpus.unitriangular(3, 5)
    assert g.order == h.order == 125
    assert (g.element_orders() <= 5).all()


def test_jordan_block_contexts():
    for n in (2, 3, 4, 5):
        ctx = corpus.jordan_block_module(n, 5)
        assert ctx.G.order == 5
        assert ps_degree(ctx) == n
        # |G| |C_V(G)| = 25, so G offends exactly when |V| = 25
        assert bool(find_offenders(ctx)) == (n == 2)


def test_direct_sum_diagonal():
    ctx = corpus.direct_sum_contexts(
        corpus.jordan_block_module(5, 5), corpus.jordan_block_module(5, 5)
    )
    assert ctx.n == 10 and ctx.G.order == 5
    assert ps_degree(ctx) == 5
    assert find_offenders(ctx) == []


def test_candidate_modules_for_wreath3():
    cands = corpus.candidate_modules_for_wreath3()
    names = {c.name for c in cands}
    assert {"augmentation", "quotient-by-fixed", "block-augmentation"} <= names
    dims = {c.name: c.context.n for c in cands}
    assert dims["augmentation"] == 8 and dims["quotient-by-fixed"] == 8
    assert dims["block-augmentation"] == 6
    # faithfulness was enforced by construction
    for c in cands:
        assert c.context.G.order == 81
    # the search recovers an F-module with the base offending
    blk = next(c for c in cands if c.name == "block-augmentation")
    assert blk.is_f_module
    base = blk.context.G.subgroup_from_gens([int(i) for i in blk.context.G._gen_idx[:3]])
    assert base.order * fixed_space(blk.context, base).size >= blk.context.module_order
    assert base.key in {o.E.key for o in find_offenders(blk.context)}


def test_eight_dim_candidates_have_no_offenders():
    # exact computation: neither 8-dimensional permutation-module candidate
    # is an F-module (their base fixed spaces are too small)
    for c in corpus.candidate_modules_for_wreath3():
        if c.context.n == 8:
            assert not c.is_f_module and c.offender_count == 0


def test_export_input_text_roundtrip():
    from oliverpg.cli import parse_input

    for name in corpus.instance_names():
        obj = corpus.get_instance(name, verify=False)
        text = corpus.export_input_text(obj)
        doc = parse_input(text)
        assert corpus.export_input_text(obj) == text
        assert doc.p == corpus._group_of(obj).p


def test_corrupted_fact_raises():
    bad = corpus.InstanceSpec(
        name="bad",
        p=5,
        build=lambda: corpus.unitriangular(2, 5),
        facts=[("wrong order", lambda g: g.order == 6)],
    )
    with pytest.raises(OliverError):
        bad.construct()
