import numpy as np
import pytest

from napmon.calibration import LayerCalibration, MonitorConfig
from napmon.errors import BitLengthMismatchError, ShapeMismatchError
from napmon.extraction import BinarizationConfig, LayerSpec, extract_pattern
from napmon.monitor import (
    judge,
    judge_batch,
    score_scheme1,
    vote_scheme2,
)
from napmon.store import build_store, nearest_distance
from napmon.patterns import pack


def _calib(name, tau, L, kind="dense", p=50.0):
    shape = (L,) if kind == "dense" else (L, 2, 2)
    return LayerCalibration(
        LayerSpec(name, kind, shape), BinarizationConfig(p), tau, 0.9, L
    )


def test_score_single_term():
    cfg = MonitorConfig((_calib("a", tau=2, L=10),), vote_scheme=1)
    score = score_scheme1([3], cfg)
    assert score == pytest.approx(0.1)
    assert score > 0  # OOD


def test_score_zero_at_threshold_not_ood():
    cfg = MonitorConfig(
        (_calib("a", tau=2, L=10), _calib("b", tau=7, L=20)), vote_scheme=1
    )
    assert score_scheme1([2, 7], cfg) == 0.0


def test_score_matches_elementwise_oracle():
    rng = np.random.default_rng(0)
    layers = tuple(
        _calib(f"l{i}", tau=int(rng.integers(0, 50)), L=64) for i in range(5)
    )
    cfg = MonitorConfig(layers, vote_scheme=1)
    d = [int(x) for x in rng.integers(0, 64, size=5)]
    expected = sum(
        di / c.bit_len - c.tau / c.bit_len for di, c in zip(d, cfg.layers)
    )
    assert score_scheme1(d, cfg) == pytest.approx(expected, abs=1e-15)


def test_score_layer_count_mismatch():
    cfg = MonitorConfig((_calib("a", 2, 10),), vote_scheme=1)
    with pytest.raises(ValueError):
        score_scheme1([1, 2], cfg)


def test_score_strictly_increasing_in_each_distance():
    cfg = MonitorConfig(
        tuple(_calib(f"l{i}", tau=5, L=32) for i in range(3)), vote_scheme=1
    )
    base = score_scheme1([4, 9, 2], cfg)
    for j in range(3):
        d = [4, 9, 2]
        d[j] += 1
        assert score_scheme1(d, cfg) > base


def test_vote_majority():
    assert vote_scheme2([True, True, False]) is True
    assert vote_scheme2([False, True, False]) is False


def test_vote_k1_degenerate():
    assert vote_scheme2([True]) is True
    assert vote_scheme2([False]) is False


def test_vote_even_rejected():
    with pytest.raises(ValueError, match="odd"):
        vote_scheme2([True, False])


def test_vote_counting_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        votes = rng.integers(0, 2, size=9).astype(bool).tolist()
        assert vote_scheme2(votes) == (sum(votes) > 4.5)


def _fixture_monitor(seed=0, scheme=1):
    """One dense layer monitor with a known store."""
    rng = np.random.default_rng(seed)
    spec = LayerSpec("d", "dense", (16,))
    cfg = BinarizationConfig(p=50)
    train = rng.normal(1, 1, size=(30, 16))
    patterns = [extract_pattern(train[i], spec, cfg) for i in range(30)]
    store = build_store(patterns, "d")
    calib = LayerCalibration(spec, cfg, 2, 0.9, 16)
    mon = MonitorConfig((calib,), vote_scheme=scheme)
    return mon, {"d": store}, train


def test_judge_exact_training_match_is_id():
    for scheme in (1, 2):
        mon, stores, train = _fixture_monitor(scheme=scheme)
        v = judge({"d": train[4]}, mon, stores)
        assert v.per_layer[0].d_min == 0
        assert not v.is_ood
        if scheme == 1:
            assert v.score == pytest.approx(-2 / 16)
        else:
            assert v.score is None


def test_judge_unanimous_ood():
    # Every training sample activates the first half of the layer; the
    # query activates the other half, so d_min = 16 > tau on each layer.
    spec = LayerSpec("d", "dense", (16,))
    cfg = BinarizationConfig(p=50)
    train_vec = np.concatenate([np.full(8, 10.0), np.zeros(8)])
    store = build_store([extract_pattern(train_vec, spec, cfg)] * 5, "d")
    calib = LayerCalibration(spec, cfg, 2, 0.9, 16)
    query = {"d": np.concatenate([np.zeros(8), np.full(8, 10.0)])}
    for scheme in (1, 2):
        v = judge(query, MonitorConfig((calib,), vote_scheme=scheme), {"d": store})
        assert v.per_layer[0].d_min == 16
        assert v.is_ood


def test_judge_k1_schemes_agree_with_d_gt_tau():
    mon1, stores, train = _fixture_monitor(scheme=1)
    mon2 = MonitorConfig(mon1.layers, vote_scheme=2)
    rng = np.random.default_rng(2)
    spec, cfg = mon1.layers[0].spec, mon1.layers[0].cfg
    for i in range(200):
        x = rng.normal(1, 1.5, size=16)
        v1 = judge({"d": x}, mon1, stores)
        v2 = judge({"d": x}, mon2, stores)
        d, _ = nearest_distance(stores["d"], extract_pattern(x, spec, cfg))
        assert v1.is_ood == v2.is_ood == (d > mon1.layers[0].tau)


def test_judge_pipeline_composition_oracle():
    # Two layers; verdict equals running each module by hand.
    rng = np.random.default_rng(3)
    specs = [LayerSpec("c", "conv", (8, 3, 3)), LayerSpec("d", "dense", (12,))]
    cfgs = [BinarizationConfig(p=40, pool_type="avg"), BinarizationConfig(p=60)]
    stores = {}
    train_blocks = {}
    for spec, cfg in zip(specs, cfgs):
        block = rng.normal(1, 1, size=(25, *spec.shape))
        train_blocks[spec.name] = block
        stores[spec.name] = build_store(
            [extract_pattern(block[i], spec, cfg) for i in range(25)], spec.name
        )
    calibs = tuple(
        LayerCalibration(spec, cfg, 3, 0.8, spec.width)
        for spec, cfg in zip(specs, cfgs)
    )
    mon = MonitorConfig(calibs, vote_scheme=1)
    sample = {name: rng.normal(1, 2, size=spec.shape) for name, spec in
              zip(["c", "d"], specs)}
    v = judge(sample, mon, stores)
    expected_score = 0.0
    for calib in calibs:
        pat = extract_pattern(sample[calib.layer_name], calib.spec, calib.cfg)
        d, _ = nearest_distance(stores[calib.layer_name], pat)
        lv = next(x for x in v.per_layer if x.layer_name == calib.layer_name)
        assert lv.d_min == d
        assert lv.d_scaled == d / calib.bit_len
        assert lv.is_ood == (d > calib.tau)
        expected_score += d / calib.bit_len - calib.tau / calib.bit_len
    assert v.score == pytest.approx(expected_score, abs=1e-15)
    assert v.is_ood == (v.score > 0)


def test_judge_missing_layer_named():
    mon, stores, _ = _fixture_monitor()
    with pytest.raises(ValueError, match="'d'"):
        judge({}, mon, stores)
    with pytest.raises(ValueError, match="'d'"):
        judge({"d": np.ones(16)}, mon, {})


def test_judge_shape_mismatch_named():
    mon, stores, _ = _fixture_monitor()
    with pytest.raises(ShapeMismatchError, match="'d'"):
        judge({"d": np.ones(17)}, mon, stores)


def test_judge_bit_len_mismatch_named():
    mon, stores, _ = _fixture_monitor()
    bad_store = build_store([pack([0, 1, 0])], "d")
    with pytest.raises(BitLengthMismatchError, match="'d'"):
        judge({"d": np.ones(16)}, mon, {"d": bad_store})


def test_judge_batch_matches_single():
    mon, stores, _ = _fixture_monitor()
    rng = np.random.default_rng(4)
    block = rng.normal(1, 1.5, size=(40, 16))
    batch = judge_batch({"d": block}, mon, stores)
    assert len(batch) == 40
    for i in range(40):
        single = judge({"d": block[i]}, mon, stores)
        got = batch.verdict(i)
        assert got == single


def test_judge_deterministic():
    mon, stores, _ = _fixture_monitor()
    x = np.random.default_rng(5).normal(size=16)
    assert judge({"d": x}, mon, stores) == judge({"d": x.copy()}, mon, stores)
