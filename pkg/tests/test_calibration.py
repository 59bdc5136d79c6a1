from fractions import Fraction

import numpy as np
import pytest

from napmon.calibration import (
    LayerCalibration,
    MonitorConfig,
    balanced_detection_accuracy,
    evaluate_cell,
    grid_search_layer,
    intra_class_variance,
    layer_accuracy,
    otsu_tau,
    pick_by_criterion,
    select_layers,
)
from napmon.dumps import ActivationDump
from napmon.extraction import BinarizationConfig, LayerSpec


def exact_objective(pool, c):
    """Exhaustive-scan oracle: weighted within-group variance, exact arithmetic."""
    lo = [Fraction(x) for x in pool if x <= c]
    hi = [Fraction(x) for x in pool if x > c]
    n = len(pool)
    total = Fraction(0)
    for group in (lo, hi):
        if group:
            mean = sum(group) / len(group)
            var = sum((x - mean) ** 2 for x in group) / len(group)
            total += Fraction(len(group), n) * var
    return total


def exhaustive_tau(d_in, d_out):
    pool = list(d_in) + list(d_out)
    candidates = sorted(set(pool))
    best = min(candidates, key=lambda c: (exact_objective(pool, c), c))
    return best, exact_objective(pool, best)


def test_otsu_analytic():
    assert otsu_tau([1, 1, 2], [10, 10, 11]) == 2


def test_otsu_degenerate_single_value():
    assert otsu_tau([5], [5]) == 5
    assert intra_class_variance([5], [5], 5) == 0.0


def test_otsu_empty_rejected():
    with pytest.raises(ValueError):
        otsu_tau([], [1])
    with pytest.raises(ValueError):
        otsu_tau([1], [])


def test_otsu_returns_observed_value():
    rng = np.random.default_rng(0)
    d_in = rng.integers(0, 30, size=80)
    d_out = rng.integers(20, 60, size=70)
    tau = otsu_tau(d_in, d_out)
    assert tau in set(np.concatenate([d_in, d_out]).tolist())


def test_otsu_label_swap_invariance():
    rng = np.random.default_rng(1)
    d_in = rng.integers(0, 50, size=40)
    d_out = rng.integers(0, 50, size=60)
    assert otsu_tau(d_in, d_out) == otsu_tau(d_out, d_in)


def test_otsu_matches_exhaustive_oracle():
    rng = np.random.default_rng(2)
    for trial in range(60):
        d_in = rng.integers(0, 40, size=rng.integers(1, 120))
        d_out = rng.integers(0, 80, size=rng.integers(1, 120))
        tau = otsu_tau(d_in, d_out)
        expected, best_obj = exhaustive_tau(d_in, d_out)
        assert tau == expected, f"trial {trial}"
        pool = np.concatenate([d_in, d_out]).tolist()
        assert exact_objective(pool, tau) == best_obj


def test_otsu_smallest_candidate_on_tie():
    # Pool {0, 5, 10}: splitting at 0 or at 5 gives the same exact
    # objective (25/6 in both cases); the smaller candidate must win.
    pool = [0, 5, 10]
    assert exact_objective(pool, 0) == exact_objective(pool, 5)
    assert otsu_tau([0, 5], [10]) == 0
    # Mirrored construction ties 5 and 10; again the smaller wins.
    assert otsu_tau([0], [5, 10]) == 0


def test_balanced_accuracy_perfect_split():
    assert balanced_detection_accuracy(5, [1, 2, 3], [8, 9]) == 1.0


def test_balanced_accuracy_identical_multisets():
    d = [1, 2, 3, 4]
    for tau in (0, 2, 4):
        assert balanced_detection_accuracy(tau, d, d) == 0.5


def test_balanced_accuracy_counting_oracle():
    rng = np.random.default_rng(3)
    d_in = rng.integers(0, 20, size=200)
    d_out = rng.integers(0, 20, size=50)
    tau = 9
    kept = sum(1 for d in d_in if d <= tau) / len(d_in)
    flagged = sum(1 for d in d_out if d > tau) / len(d_out)
    assert balanced_detection_accuracy(tau, d_in, d_out) == pytest.approx(
        (kept + flagged) / 2
    )


def _calib(name, acc, tau=5, L=10, kind="dense", p=50.0, pool="max"):
    spec = LayerSpec(name, kind, (L,) if kind == "dense" else (L, 2, 2))
    return LayerCalibration(spec, BinarizationConfig(p, pool), tau, acc, L)


def test_layer_accuracy_uses_calibration_tau():
    calib = _calib("a", 0.9, tau=5)
    assert layer_accuracy(calib, [1, 2], [9, 9]) == 1.0


def make_dumps(seed=0, n_train=60, n_valid=40, shift=4.0):
    rng = np.random.default_rng(seed)
    protos = np.maximum(rng.normal(1, 1, size=(4, 12)), 0)
    t_idx = rng.integers(0, 4, n_train)
    v_idx = rng.integers(0, 4, n_valid)
    train = np.maximum(protos[t_idx] + rng.normal(0, 0.3, (n_train, 12)), 0)
    valid = np.maximum(
        protos[v_idx] + shift + rng.normal(0, 0.3, (n_valid, 12)), 0
    )
    ds = ActivationDump.from_arrays({"d": train.astype(np.float32)}, dataset_id="ds")
    dv = ActivationDump.from_arrays({"d": valid.astype(np.float32)}, dataset_id="dv")
    return ds, dv


def test_evaluate_cell_fields_consistent():
    ds, dv = make_dumps()
    cell = evaluate_cell(ds, dv, "d", p=50)
    calib = cell.calibration
    assert calib.bit_len == 12
    assert 0 <= calib.tau <= 12
    assert calib.tau_scaled == calib.tau / 12
    assert 0 <= calib.val_accuracy <= 1
    assert len(cell.d_in) == 60
    assert len(cell.d_out) == 40


def test_grid_search_single_candidate():
    ds, dv = make_dumps()
    calib = grid_search_layer(ds, dv, "d", p_grid=(40,), criterion="accuracy")
    cell = evaluate_cell(ds, dv, "d", p=40)
    assert calib.cfg.p == 40
    assert calib.tau == cell.calibration.tau
    assert calib.val_accuracy == cell.calibration.val_accuracy


def test_grid_search_deterministic():
    ds, dv = make_dumps()
    a = grid_search_layer(ds, dv, "d", p_grid=(10, 50, 90))
    b = grid_search_layer(ds, dv, "d", p_grid=(10, 50, 90))
    assert (a.cfg.p, a.cfg.pool_type, a.tau, a.val_accuracy) == (
        b.cfg.p,
        b.cfg.pool_type,
        b.tau,
        b.val_accuracy,
    )


def test_grid_search_layer_absent():
    ds, dv = make_dumps()
    with pytest.raises(ValueError, match="absent"):
        grid_search_layer(ds, dv, "nope")


def test_grid_search_matches_exhaustive_reranking():
    # Conv layer, 3x2 grid: independently re-evaluate all six cells and
    # replay the two-stage selection.
    rng = np.random.default_rng(7)
    protos = np.maximum(rng.normal(1, 1, size=(3, 8, 3, 3)), 0)
    t_idx = rng.integers(0, 3, 50)
    v_idx = rng.integers(0, 3, 30)
    train = np.maximum(protos[t_idx] + rng.normal(0, 0.4, (50, 8, 3, 3)), 0)
    valid = np.maximum(protos[v_idx] + 2.5 + rng.normal(0, 0.4, (30, 8, 3, 3)), 0)
    ds = ActivationDump.from_arrays({"c": train.astype(np.float32)})
    dv = ActivationDump.from_arrays({"c": valid.astype(np.float32)})

    p_grid, t_options = (20, 50, 80), ("max", "avg")
    for criterion in ("accuracy", "threshold", "hybrid"):
        got = grid_search_layer(ds, dv, "c", p_grid, t_options, criterion)
        cells = {
            (p, t): evaluate_cell(ds, dv, "c", p, t)
            for p in p_grid
            for t in t_options
        }
        stage1 = [cells[(p, "max")] for p in p_grid]
        p_star = pick_by_criterion(stage1, "hybrid", t_options).p
        stage2 = [cells[(p_star, t)] for t in t_options]
        want = pick_by_criterion(stage2, criterion, t_options).calibration
        assert (got.cfg.p, got.cfg.pool_type) == (want.cfg.p, want.cfg.pool_type)
        assert got.tau == want.tau


def test_grid_search_accuracy_criterion_is_argmax_over_final_stage():
    ds, dv = make_dumps(seed=11)
    p_grid = (0, 30, 60, 90)
    got = grid_search_layer(ds, dv, "d", p_grid, criterion="accuracy")
    # For a dense layer stage 1 fixes p; the winner's accuracy must match
    # its own re-evaluation and be >= stage-2 alternatives (single t here).
    cell = evaluate_cell(ds, dv, "d", got.cfg.p)
    assert got.val_accuracy == cell.calibration.val_accuracy


def test_select_layers_all():
    calibs = [_calib("a", 0.7), _calib("b", 0.9), _calib("c", 0.8)]
    cfg = select_layers(calibs, k=3, vote_scheme=1)
    assert cfg.layer_names == ["a", "b", "c"]  # network order preserved
    assert cfg.k == 3


def test_select_layers_topk_sorting_oracle():
    rng = np.random.default_rng(4)
    names = [f"l{i}" for i in range(9)]
    accs = rng.uniform(0.4, 1.0, size=9).round(3)
    calibs = [_calib(n, a) for n, a in zip(names, accs)]
    for k in (1, 3, 5, 7, 9):
        cfg = select_layers(calibs, k=k, vote_scheme=2)
        chosen_accs = sorted((c.val_accuracy for c in cfg.layers), reverse=True)
        oracle = sorted(accs, reverse=True)[:k]
        assert chosen_accs == pytest.approx(sorted(oracle, reverse=True))
        excluded = [c.val_accuracy for c in calibs if c.layer_name not in cfg.layer_names]
        if excluded:
            assert min(c.val_accuracy for c in cfg.layers) >= max(excluded)


def test_select_layers_tie_prefers_deeper():
    calibs = [_calib("shallow", 0.8), _calib("mid", 0.8), _calib("deep", 0.8)]
    cfg = select_layers(calibs, k=1)
    assert cfg.layer_names == ["deep"]


def test_select_layers_errors():
    calibs = [_calib("a", 0.7), _calib("b", 0.9)]
    with pytest.raises(ValueError, match="odd"):
        select_layers(calibs, k=2, vote_scheme=2)
    with pytest.raises(ValueError, match="exceeds"):
        select_layers(calibs, k=3)


def test_monitor_config_invariants():
    with pytest.raises(ValueError, match="odd"):
        MonitorConfig((_calib("a", 0.5), _calib("b", 0.6)), vote_scheme=2)
    with pytest.raises(ValueError, match="duplicate"):
        MonitorConfig((_calib("a", 0.5), _calib("a", 0.6)), vote_scheme=1)
    with pytest.raises(ValueError):
        MonitorConfig((), vote_scheme=1)


def test_hybrid_prefers_low_tau_within_margin():
    # Construct cells directly: acc 0.95 tau_scaled 0.5 vs acc 0.945 tau_scaled 0.1.
    from napmon.calibration import CellResult
    from napmon.store import build_store
    from napmon.patterns import pack

    store = build_store([pack([0] * 10)], "x")

    def cell(acc, tau, p):
        calib = _calib("x", acc, tau=tau, p=p)
        return CellResult(calib, store, np.array([0]), np.array([9]))

    cells = [cell(0.95, 5, 50.0), cell(0.945, 1, 30.0)]
    picked = pick_by_criterion(cells, "hybrid", ("max", "avg"))
    assert picked.calibration.tau == 1
    # accuracy criterion picks the raw argmax instead
    picked = pick_by_criterion(cells, "accuracy", ("max", "avg"))
    assert picked.calibration.tau == 5
    # threshold criterion compares tau_scaled
    picked = pick_by_criterion(cells, "threshold", ("max", "avg"))
    assert picked.calibration.tau == 1
