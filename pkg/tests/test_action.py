"""Module-action layer: fixed spaces, brackets, offenders, product
subgroups, and series profiles, checked against vector-enumeration oracles."""

import itertools

import numpy as np
import pytest

from oliverpg import (
    FpMatrix,
    NoProductMaximal,
    SemidirectContext,
    all_subgroups,
    corpus,
    default_series,
    enumerate_A_times,
    find_offenders,
    fixed_space,
    is_normal_in,
    is_ps_module,
    is_quadratic,
    module_bracket,
    normal_closure,
    ps_degree,
    select_max,
)
from oliverpg.action import (
    ProductSubgroup,
    cmp_series,
    max_abelian_order,
    product_closure,
    profile,
    validate_product,
)
from oliverpg.linalg import Subspace


def all_vectors(n, p):
    return [np.array(v, dtype=np.int64) for v in itertools.product(range(p), repeat=n)]


def brute_fixed(ctx, e):
    mats = [ctx.G.arr()[int(i)] for i in e.idx]
    return [
        v
        for v in all_vectors(ctx.n, ctx.p)
        if all((v @ m % ctx.p == v).all() for m in mats)
    ]


def test_fixed_space_examples(ctx3, ut3):
    def idx_of(entries):
        m = np.eye(3, dtype=np.int64)
        for (i, j), v in entries.items():
            m[i, j] = v
        return ut3.index_of(FpMatrix(m, 5))

    e13 = ut3.subgroup_from_gens([idx_of({(0, 2): 1})])
    f = fixed_space(ctx3, e13)
    assert f.dim == 2
    for v in brute_fixed(ctx3, e13):
        assert f.contains_vector(v)
    e = ut3.subgroup_from_gens([idx_of({(0, 1): 1}), idx_of({(0, 2): 1})])
    f2 = fixed_space(ctx3, e)
    assert f2.dim == 2  # still {v1 = 0}: v @ (I+E12) = v forces v[0] = 0 only
    assert len(brute_fixed(ctx3, e)) == 25


def test_fixed_space_matches_enumeration_on_wreath_module():
    cand = corpus.candidate_modules_for_wreath3()
    blk = next(c for c in cand if c.name == "block-augmentation")
    ctx = blk.context
    # the base image inside the 6-dim module
    base_gens = [int(i) for i in ctx.G._gen_idx[:3]]
    e = ctx.G.subgroup_from_gens(base_gens)
    f = fixed_space(ctx, e)
    brute = brute_fixed(ctx, e)
    assert f.size == len(brute)
    assert f.dim == 3
    assert e.order * f.size == ctx.module_order  # base offends with equality


def test_module_bracket_single_element(ctx3, ut3):
    for i in (1, 5, 17):
        g = ut3.arr()[i]
        b = module_bracket(ctx3, int(i), 1)
        # oracle: span of v(g - 1) over all v
        vecs = [v @ (g - np.eye(3, dtype=np.int64)) % 5 for v in all_vectors(3, 5)]
        sp = Subspace(np.array(vecs), 5, 3)
        assert b.key == sp.key


def test_module_bracket_subgroup_oracle(ctx3, ut3):
    h = ut3.full_handle()
    b1 = module_bracket(ctx3, h, 1)
    # brute: close {v(g-1) : v in V, g in G} under the same map
    cur = {tuple(np.zeros(3, dtype=np.int64))}
    vecs = set()
    for v in all_vectors(3, 5):
        for i in range(ut3.order):
            g = ut3.arr()[i]
            vecs.add(tuple(v @ (g - np.eye(3, dtype=np.int64)) % 5))
    sp = Subspace(np.array(sorted(vecs)), 5, 3)
    assert b1.key == sp.key
    b2 = module_bracket(ctx3, h, 2)
    assert b2.dim == 1  # [V, UT(3,5); 2] is the bottom line


def test_module_bracket_jordan():
    ctx = corpus.jordan_block_module(3, 5)
    j = ctx.G.arr()[ctx.G._gen_idx[0]]
    i = int(ctx.G.lookup_rows(j[None])[0])
    assert module_bracket(ctx, i, 2).dim == 1
    assert module_bracket(ctx, i, 3).dim == 0


def test_ps_degree_examples(ctx3, jordan3, jordan5):
    assert ps_degree(jordan5) == 5
    assert ps_degree(jordan3) == 3
    assert ps_degree(ctx3) == 2
    assert is_ps_module(jordan5, 5) and not is_ps_module(ctx3, 3)


def test_is_quadratic_matches_brute(ctx3, ut3):
    for i in (1, 3, 9, 20):
        e = ut3.subgroup_from_gens([i])
        b1 = module_bracket(ctx3, e, 1)
        b2 = module_bracket(ctx3, e, 2)
        assert is_quadratic(ctx3, e) == (b1.dim > 0 and b2.dim == 0)


def test_find_offenders_ut35_frozen_count(ctx3):
    offs = find_offenders(ctx3)
    assert len(offs) == 17
    for o in offs:
        brute = brute_fixed(ctx3, o.E)
        assert o.fixed.size == len(brute)
        assert o.E.order * len(brute) >= ctx3.module_order


def test_find_offenders_complete_against_subgroup_sweep(ctx3, ut3):
    # oracle: sweep every subgroup, keep nontrivial elementary abelian
    # offenders; must match the search exactly
    expected = set()
    for h in all_subgroups(ut3):
        if h.order == 1 or not h.is_elementary_abelian():
            continue
        if h.order * len(brute_fixed(ctx3, h)) >= ctx3.module_order:
            expected.add(h.key)
    assert expected == {o.E.key for o in find_offenders(ctx3)}


def test_offender_annotations(ctx3, ut3):
    for o in find_offenders(ctx3):
        n, two = normal_closure(ut3, o.E)
        assert o.two_subnormal == two
        assert o.quadratic == is_quadratic(ctx3, o.E)


def test_jordan_modules_have_no_offenders(jordan3, jordan5):
    assert find_offenders(jordan3) == []
    assert find_offenders(jordan5) == []


def test_product_closure_of_embedded_s(ctx3):
    s = ctx3.explicit_group()
    a = product_closure(ctx3, s.full_handle())
    assert a.D.size == ctx3.module_order
    assert a.E.order == ctx3.G.order
    validate_product(ctx3, a)


def test_embedding_is_homomorphism(ctx3):
    rng = np.random.default_rng(0)
    arr = ctx3.G.arr()
    for _ in range(10):
        g, h = arr[rng.integers(0, ctx3.G.order)], arr[rng.integers(0, ctx3.G.order)]
        v = rng.integers(0, 5, ctx3.n)
        w = rng.integers(0, 5, ctx3.n)
        left = ctx3.embed(v, g) @ ctx3.embed(w, h)
        right = ctx3.embed((v @ h + w) % 5, g @ h % 5)
        assert (left.a == right.a).all()


def test_max_abelian_order_formula(ctx3):
    m, _ = max_abelian_order(ctx3)
    best = ctx3.module_order
    for h in all_subgroups(ctx3.G):
        if h.order > 1 and h.is_abelian():
            best = max(best, h.order * fixed_space(ctx3, h).size)
    assert m == best


def test_enumerate_A_times_members_are_maximal_products(ctx3):
    members = enumerate_A_times(ctx3)
    assert members
    m, _ = max_abelian_order(ctx3)
    for a in members:
        assert a.order == m
        validate_product(ctx3, a)
        assert a.E.is_abelian()
        assert fixed_space(ctx3, a.E).contains(a.D)


def test_enumerate_A_times_raises_when_V_is_the_only_maximum(jordan5):
    with pytest.raises(NoProductMaximal):
        enumerate_A_times(jordan5)


def test_select_max_profile_vs_explicit_intersections(ctx3):
    # two-way agreement: the profile computed symbolically equals the orders
    # of A's intersections with the series terms inside the enumerated S
    a = select_max(ctx3)
    series = default_series(ctx3)
    prof = profile(ctx3, a, series)
    s = ctx3.explicit_group()
    handle = a.handle_in(ctx3, s)
    assert handle.order == a.order
    ident = np.eye(ctx3.n, dtype=np.int64)
    explicit = []
    for i, u in enumerate(series.module_terms[1:], 1):
        mats = np.stack([ctx3.embed(v, ident).a for v in u.vectors()])
        term = s.subgroup_from_gens([int(t) for t in np.unique(s.lookup_rows(mats))])
        explicit.append(handle.intersect(term).order)
    for h in series.group_terms:
        mats = []
        for gi in h.idx:
            gmat = ctx3.G.arr()[int(gi)]
            for v in np.eye(ctx3.n, dtype=np.int64):
                mats.append(ctx3.embed(v, gmat).a)
            mats.append(ctx3.embed(np.zeros(ctx3.n, dtype=np.int64), gmat).a)
        term = s.subgroup_from_gens(
            [int(t) for t in np.unique(s.lookup_rows(np.stack(mats)))]
        )
        explicit.append(handle.intersect(term).order)
    assert list(prof.intersections) == explicit


def test_cmp_series_orderings(ctx3):
    a = select_max(ctx3)
    series = default_series(ctx3)
    pa = profile(ctx3, a, series)
    assert cmp_series(pa, pa) == "equal"


def test_offender_prune_never_loses_an_offender(ctx4):
    # UT(4,5): the branch-and-bound search must agree with an unpruned sweep
    # restricted to the unique maximal elementary abelian subgroup's subgroups
    offs = {o.E.key: o for o in find_offenders(ctx4)}
    assert offs  # natural UT(4,5) module is an F-module
    for o in offs.values():
        assert o.E.order * o.fixed.size >= ctx4.module_order
