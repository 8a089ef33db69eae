"""
Subdomains, partition of unity and batch scaling factors
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from discretization.decomposition import (
    SplitMode,
    build_decomposition,
    build_partition_of_unity,
    build_subdomains,
    evaluate_weights,
    expected_cell_weight,
    subdomain_summary,
    tau_from_pmf,
)
from discretization.grid import build_grid
from integrator.sampler import StrategySpec, enumerate_batches, strategy_weights


def test_reference_rectangles_three_by_three():
    subdomains = build_subdomains(3, 3, 0.2, SplitMode.PAPER_COMPAT)
    rects = {d.index: tuple(round(v, 3) for v in d.rect) for d in subdomains}
    assert rects[0] == (-1.0, -0.267, -1.0, -0.267)
    assert rects[1] == (-0.467, 0.467, -1.0, -0.267)
    assert rects[4] == (-0.467, 0.467, -0.467, 0.467)


def test_single_subdomain_is_the_domain(grid21):
    for mode in SplitMode:
        subdomains = build_subdomains(1, 1, 0.3, mode)
        assert len(subdomains) == 1
        assert subdomains[0].rect == (-1.0, 1.0, -1.0, 1.0)
    chi = build_partition_of_unity(build_subdomains(1, 1, 0.0), grid21)
    assert np.all(chi[0].values == 1.0)


def test_symmetric_two_strips():
    d1, d2 = build_subdomains(2, 1, 0.2, SplitMode.SYMMETRIC)
    assert d1.rect == pytest.approx((-1.0, 0.1, -1.0, 1.0))
    assert d2.rect == pytest.approx((-0.1, 1.0, -1.0, 1.0))

    weights = evaluate_weights([d1, d2], np.array([0.0, 0.05, -0.08]), np.zeros(3))
    assert weights[:, 0] == pytest.approx([0.5, 0.5])
    assert np.all((weights[:, 1:] > 0.0) & (weights[:, 1:] < 1.0))
    assert np.allclose(weights.sum(axis=0), 1.0)


def test_overlap_must_fit_in_base_cell():
    with pytest.raises(ValueError):
        build_subdomains(4, 1, 0.5)
    with pytest.raises(ValueError):
        build_subdomains(0, 1, 0.1)
    with pytest.raises(ValueError):
        build_subdomains(2, 2, -0.1)


def test_subdomain_indexing_is_x_fastest():
    subdomains = build_subdomains(3, 2, 0.2)
    assert subdomains[1].x0 > subdomains[0].x0 and subdomains[1].y0 == subdomains[0].y0
    assert subdomains[3].y0 > subdomains[0].y0 and subdomains[3].x0 == subdomains[0].x0


@settings(max_examples=25, deadline=None)
@given(
    Mx=st.integers(1, 4),
    My=st.integers(1, 4),
    overlap=st.floats(0.0, 0.45),
    mode=st.sampled_from(list(SplitMode)),
)
def test_partition_of_unity_properties(Mx, My, overlap, mode):
    grid = build_grid(25, 25)
    decomposition = build_decomposition(grid, Mx, My, overlap, mode)
    chi = decomposition.chi_stack()
    assert np.max(np.abs(chi.sum(axis=0) - 1.0)) <= 1e-12

    X, Y = grid.cell_coordinates()
    for d in decomposition.subdomains:
        assert np.all(chi[d.index][~d.contains(X, Y)] == 0.0)
        strictly_inside = (X > d.x0) & (X < d.x1) & (Y > d.y0) & (Y < d.y1)
        assert np.all(chi[d.index][strictly_inside] > 0.0)


def test_chi_nodes_sum_to_one(box_decomposition):
    nodes = box_decomposition.chi_nodes()
    assert nodes.shape == (9, 21, 21)
    assert np.allclose(nodes.sum(axis=0), 1.0, atol=1e-12)
    coarse = box_decomposition.chi_nodes(build_grid(11, 11))
    assert coarse.shape == (9, 11, 11)


def test_tau_values():
    assert tau_from_pmf("uniform_single", 9).tau == pytest.approx(np.full(9, 1 / 9))
    assert tau_from_pmf("uniform_k", 3, k=2).tau == pytest.approx(np.full(3, 5 / 9))
    assert tau_from_pmf("uniform_single", 1).tau[0] == 1.0
    assert tau_from_pmf("uniform_k", 1, k=4).tau[0] == 1.0
    predictor = tau_from_pmf("predictor", 4, rho=0.1, active=frozenset({1, 2}))
    assert predictor.tau == pytest.approx([0.1, 0.9, 0.9, 0.1])


def test_tau_rejects_bad_laws():
    with pytest.raises(ValueError):
        tau_from_pmf("predictor", 3, rho=0.0, active=frozenset())
    with pytest.raises(ValueError):
        tau_from_pmf("predictor", 3, rho=0.5)
    with pytest.raises(ValueError):
        tau_from_pmf("importance", 3)
    with pytest.raises(ValueError):
        tau_from_pmf("uniform_k", 3, k=0)


@pytest.mark.parametrize("Mx,My", [(1, 1), (3, 1), (3, 3)])
@pytest.mark.parametrize("strategy", [
    StrategySpec(kind="uniform_single"),
    StrategySpec(kind="uniform_k", k=2),
    StrategySpec(kind="uniform_k", k=3),
    StrategySpec(kind="predictor", rho=0.01),
    StrategySpec(kind="predictor", rho=0.3),
])
def test_unbiasedness_certificate(grid21, Mx, My, strategy):
    decomposition = build_decomposition(grid21, Mx, My, 0.2, SplitMode.PAPER_COMPAT)
    s = decomposition.s
    actives = [None] if strategy.kind != "predictor" else [frozenset(), frozenset({0}), frozenset(range(s))]
    for active in actives:
        law = enumerate_batches(strategy, s, active)
        assert sum(p for p, _ in law) == pytest.approx(1.0, abs=1e-14)
        total = expected_cell_weight(decomposition, law, strategy_weights(strategy, s, active))
        assert np.max(np.abs(total - 1.0)) <= 1e-12


def test_subdomain_summary_rounds(box_decomposition):
    summary = subdomain_summary(box_decomposition)
    assert summary[0] == (-1.0, -0.267, -1.0, -0.267)
    assert len(summary) == 9
