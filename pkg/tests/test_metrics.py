import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from wscswap.backends import PoseExpParams
from wscswap.errors import ConfigError, ShapeError
from wscswap.metrics import (MetricReport, SwapGrid, id_consis, id_csim, id_retrieval, pose_exp_error, psnr,
                             relative_performance, summarize)


def random_grid(n, d=6, seed=0):
    g = torch.Generator().manual_seed(seed)
    return SwapGrid(torch.randn(n, n - 1, d, generator=g, dtype=torch.float64),
                    torch.randn(n, d, generator=g, dtype=torch.float64))


def as_lists(grid):
    return grid.id_vectors.tolist(), grid.source_ids.tolist()


@pytest.mark.parametrize("n", [3, 4, 5])
@pytest.mark.parametrize("seed", range(5))
def test_metrics_match_brute_force(n, seed):
    grid = random_grid(n, seed=seed)
    swaps, sources = as_lists(grid)
    assert abs(id_csim(grid) - oracles.grid_csim(swaps, sources)) <= 1e-12
    assert abs(id_consis(grid) - oracles.grid_consis(swaps)) <= 1e-12
    assert abs(id_retrieval(grid) - oracles.grid_retrieval(swaps, sources)) <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_pose_exp_error_matches_loop(seed):
    g = torch.Generator().manual_seed(seed)
    t = PoseExpParams(torch.randn(7, 3, generator=g, dtype=torch.float64),
                      torch.randn(7, 64, generator=g, dtype=torch.float64))
    s = PoseExpParams(torch.randn(7, 3, generator=g, dtype=torch.float64),
                      torch.randn(7, 64, generator=g, dtype=torch.float64))
    p, e = pose_exp_error(t, s)
    op, oe = oracles.pose_exp(t.pose.tolist(), t.expression.tolist(), s.pose.tolist(), s.expression.tolist())
    assert abs(p - op) <= 1e-12 and abs(e - oe) <= 1e-12


def test_consis_denominator_three_sources():
    # one pair per source: the metric is the plain mean of three similarities
    grid = random_grid(3, seed=4)
    swaps, _ = as_lists(grid)
    pairs = [oracles.csim(swaps[i][0], swaps[i][1]) for i in range(3)]
    assert abs(id_consis(grid) - sum(pairs) / 3) <= 1e-12


def test_trivial_values():
    src = torch.randn(4, 5, dtype=torch.float64)
    same = SwapGrid(src[:, None, :].expand(4, 3, 5).clone(), src)
    assert id_csim(same) == pytest.approx(1.0, abs=1e-12)
    assert id_consis(same) == pytest.approx(1.0, abs=1e-12)
    assert id_retrieval(same) == 1.0
    e = torch.eye(4, dtype=torch.float64)
    ortho = SwapGrid(torch.stack([e[(i + 1) % 4].expand(3, 4) for i in range(4)]), e)
    assert id_csim(ortho) == pytest.approx(0.0, abs=1e-12)


def test_retrieval_of_target_embeddings_is_zero():
    src = torch.randn(5, 8, dtype=torch.float64)
    swaps = torch.stack([torch.stack([src[SwapGrid.target_index(i, k)] for k in range(4)]) for i in range(5)])
    assert id_retrieval(SwapGrid(swaps, src)) == 0.0


def test_retrieval_ties_go_to_lowest_index():
    src = torch.tensor([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    swaps = torch.tensor([[1.0, 0.0]], dtype=torch.float64).expand(3, 2, 2).clone()
    # every swap ties between sources 0 and 1; only source 0 is credited
    assert id_retrieval(SwapGrid(swaps, src)) == pytest.approx(2 / 6)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 6), st.floats(0.01, 50.0), st.integers(0, 10_000))
def test_scale_invariance(n, scale, seed):
    grid = random_grid(n, seed=seed)
    scaled = SwapGrid(grid.id_vectors * scale, grid.source_ids * (scale + 1))
    assert math.isclose(id_csim(grid), id_csim(scaled), abs_tol=1e-12)
    assert math.isclose(id_consis(grid), id_consis(scaled), abs_tol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 6), st.integers(0, 10_000))
def test_consis_is_one_for_constant_rows(n, seed):
    g = torch.Generator().manual_seed(seed)
    rows = torch.randn(n, 1, 4, generator=g, dtype=torch.float64).expand(n, n - 1, 4).clone()
    grid = SwapGrid(rows, torch.randn(n, 4, generator=g, dtype=torch.float64))
    assert id_consis(grid) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 6), st.integers(0, 10_000))
def test_retrieval_permutation_equivariant(n, seed):
    grid = random_grid(n, d=3, seed=seed)
    perm = torch.randperm(n, generator=torch.Generator().manual_seed(seed))
    full = torch.zeros(n, n, grid.id_vectors.shape[2], dtype=torch.float64)
    for i in range(n):
        for k in range(n - 1):
            full[i, SwapGrid.target_index(i, k)] = grid.id_vectors[i, k]
    permuted = SwapGrid.from_full(full[perm][:, perm], grid.source_ids[perm])
    assert id_retrieval(permuted) == pytest.approx(id_retrieval(grid), abs=1e-12)
    assert id_csim(permuted) == pytest.approx(id_csim(grid), abs=1e-12)


def test_pose_error_unit_shift():
    t = PoseExpParams(torch.zeros(3, 3, dtype=torch.float64), torch.zeros(3, 64, dtype=torch.float64))
    s = PoseExpParams(torch.tensor([[1.0, 0, 0]] * 3, dtype=torch.float64), torch.zeros(3, 64, dtype=torch.float64))
    assert pose_exp_error(t, t) == (0.0, 0.0)
    assert pose_exp_error(t, s) == (1.0, 0.0)
    with pytest.raises(ShapeError):
        pose_exp_error(t, PoseExpParams(torch.zeros(2, 3), torch.zeros(2, 64)))


def test_relative_performance_sign_convention():
    base = MetricReport(0.80, 0.5, 0.5, 0.20, 5.0)
    same = relative_performance(base, base)
    assert all(v == 0 for v in same.values() if v is not None)
    better = MetricReport(0.84, 0.5, 0.5, 0.214, 5.0)
    rel = relative_performance(base, better)
    assert rel["id_retrieval"] == pytest.approx(0.05)
    assert rel["pose_err"] == pytest.approx(-0.07)
    zero = relative_performance(MetricReport(0.0, 0.5, 0.5, 0.2, 5.0), better)
    assert zero["id_retrieval"] is None


def test_grid_validation():
    with pytest.raises(ConfigError):
        SwapGrid(torch.zeros(2, 1, 3), torch.zeros(2, 3))
    with pytest.raises(ShapeError):
        SwapGrid(torch.zeros(3, 3, 3), torch.zeros(3, 3))


def test_report_ranges_and_roundtrip(tmp_path):
    with pytest.raises(ValueError):
        MetricReport(1.5, 0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        MetricReport(0.5, 0.0, 0.0, -1.0, 0.0)
    r = MetricReport(0.5, 0.25, 0.125, 0.1, 2.0, psnr=20.0, num_sources=5)
    r.save(tmp_path / "m.json")
    assert MetricReport.load(tmp_path / "m.json") == r
    with pytest.raises(ConfigError):
        MetricReport.from_dict({"id_csim": 0.1})


def test_psnr_and_summary():
    x = torch.zeros(2, 3, 4, 4)
    y = x + 0.02
    assert psnr(x, y) == pytest.approx(10 * math.log10(4 / 0.0004))
    reps = [MetricReport(0.1 * i, 0.0, 0.0, psnr=float(i)) for i in (3, 1, 2)]
    med = summarize(reps)
    assert med.psnr == 2.0 and med.id_retrieval == pytest.approx(0.2)


def test_grid_matches_pairwise_swaps(tiny_config):
    from wscswap.backends import OracleIDEncoder
    from wscswap.metrics import build_grid, evaluate
    from wscswap.synthdata import ImageBatch, make_eval_split
    from wscswap.trainer import TrainState, forward_swap

    state = TrainState(tiny_config())
    sources = ImageBatch.stack(make_eval_split(4, 32, state.config.data))
    measure = OracleIDEncoder(32, dim=8, seed=1)
    grid, selfs = build_grid(state.generator, state.id_encoder, sources, measure)
    x = sources.pixels
    state.generator.eval()
    with torch.no_grad():
        for i in range(4):
            targets = [j for j in range(4) if j != i]
            y, _ = forward_swap(x[[i] * 3], x[targets], state)
            assert torch.allclose(grid.id_vectors[i], measure(y), atol=1e-5)
            y_self, _ = forward_swap(x[i:i + 1], x[i:i + 1], state)
            assert torch.allclose(selfs[i], y_self[0], atol=1e-5)
            for k, j in enumerate(targets):
                assert grid.target_index(i, k) == j
    assert torch.allclose(grid.source_ids, measure(x))
    report = evaluate(state.generator, state.id_encoder, sources, measure)
    assert report.num_sources == 4
    assert report.id_csim == pytest.approx(id_csim(grid))
