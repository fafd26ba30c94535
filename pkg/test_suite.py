#!/usr/bin/env python3
"""
Fast Test Suite - config, scene, autodiff, diffusion algebra, heads, metrics, reports
Run: python test_suite.py   (or: pytest test_suite.py)
"""

import contextlib
import functools
import io
import json
import math
import sys
import tempfile
import time
from datetime import datetime
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from common.config import AblationPlan, DatasetConfig, TrainConfig, Variant, load_config, parse_variant
from common.diffusion import (BehaviorToken, NoiseSchedule, PredictionSet, SampleMode, build_schedule,
                              denormalize, endpoint_source, normalize, plan_tokens, predict_x0, q_sample,
                              q_step, reverse_step, schedule_from_betas, sinusoidal_embedding)
from common.errors import (ConfigError, DatasetParseError, DatasetSchemaError, InputError, MetricError,
                           ModelStateError, NumericError, UsageError, format_cli_error, run_cli)
from common.heads import (ConfidenceDecoder, class_loss, confidence, confidence_target, confusion_matrix,
                          final_score, rank_predictions)
from common.metrics import (ScenarioMetrics, aggregate, asd, ecfl, fsd, min_ade, min_fde, miss_rate,
                            scenario_metrics)
from common.ndiff import (AdamW, Conv1dTemporal, FeedForward, GRUCell, LayerNorm, Linear, LrSchedule, MLP,
                          MultiHeadAttention, Param, Tensor, backward, concat, exp, gelu, gradcheck, log,
                          log_softmax, pad_axis, sigmoid, softmax, take, tanh, tmean, tsum, where)
from common.reports import (ABLATION_HEADER, METRICS_HEADER, export_to_excel, plot_ablation, read_ablation_csv,
                            read_metrics_csv, read_predictions, write_ablation_csv, write_metrics_csv,
                            write_predictions, write_scenario_csv)
from common.scene import (Behavior, DrivableArea, LanePolyline, dataset_summary, detect_intersection,
                          generate_dataset, label_behavior, normalize_to_focal, point_in_drivable,
                          points_in_drivable, read_dataset, rigid_transform, scenario_to_record, split_dataset,
                          transform_scenario, write_dataset)


# Test results tracking
results = {"passed": 0, "failed": 0, "errors": []}

LAYER_TOL = 1e-4


def test_passed(name):
    results["passed"] += 1
    print(f"  ✓ {name}")


def test_failed(name, reason):
    results["failed"] += 1
    results["errors"].append(f"{name}: {reason}")
    print(f"  ✗ {name}: {reason}")


test_passed.__test__ = False
test_failed.__test__ = False


def run_test(name, test_func):
    """Run a test function and catch exceptions"""
    try:
        test_func()
        test_passed(name)
    except Exception as e:
        test_failed(name, f"{type(e).__name__}: {e}")


def small_dataset(n=8, **overrides):
    cfg = DatasetConfig(n_scenarios=n, class_mix=(0.34, 0.33, 0.33), **overrides)
    return generate_dataset(cfg)


def square(x0=0.0, y0=0.0, size=10.0):
    return DrivableArea([np.array([[x0, y0], [x0 + size, y0], [x0 + size, y0 + size], [x0, y0 + size]])])


# ==================== CONFIG / ERROR TESTS ====================

def test_default_config_values():
    exp = load_config()
    assert exp.train.epochs == 140
    assert exp.train.batch_size == 64
    assert exp.train.base_lr == 5e-4
    assert exp.train.T == 20
    assert exp.model.embed_dim == 64 and exp.model.heads == 4 and exp.model.denoiser_blocks == 6
    assert exp.dataset.class_mix == (0.817, 0.095, 0.088)


def test_tiny_preset_and_file_override():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "exp.json"
        path.write_text(json.dumps({"train": {"epochs": 3}}))
        exp = load_config(str(path), preset="tiny")
    assert exp.model.embed_dim == 16
    assert exp.train.epochs == 3
    assert exp.train.T == 5


def test_config_rejects_unknown_keys_and_bad_values():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "exp.json"
        path.write_text(json.dumps({"train": {"epochz": 3}}))
        with pytest.raises(ConfigError, match="epochz"):
            load_config(str(path))
    with pytest.raises(ConfigError):
        DatasetConfig(class_mix=(0.5, 0.5, 0.5)).validate()
    with pytest.raises(ConfigError):
        TrainConfig(T=0).validate()
    with pytest.raises(ConfigError):
        load_config(preset="huge")
    with pytest.raises(ConfigError):
        parse_variant("diffusion")


def test_variant_properties():
    assert Variant.BASELINE.token_kind == "none"
    assert Variant.BEHAVIOR.token_kind == "mode"
    assert Variant.ENDPOINT.token_kind == "endpoint"
    assert Variant.NOMAP.token_kind == "mode" and not Variant.NOMAP.uses_map
    assert parse_variant("Endpoint") is Variant.ENDPOINT


def test_ablation_epoch_rule():
    plan = AblationPlan()
    assert plan.epochs_for(20) == 140
    assert plan.entries() == [(5, 35), (10, 70), (20, 140), (32, 224), (50, 350), (100, 700)]


def test_cli_error_contract():
    def ok(_):
        return None

    def known(_):
        raise ConfigError("bad   value\nhere")

    def unknown(_):
        raise RuntimeError("boom")

    err = io.StringIO()
    with contextlib.redirect_stderr(err):
        assert run_cli(ok, None) == 0
        assert run_cli(known, None) == 2
        assert run_cli(unknown, None) == 1
    lines = err.getvalue().strip().splitlines()
    assert lines == ["error: ConfigError: bad value here", "error: RuntimeError: boom"]
    assert format_cli_error(DatasetParseError("oops", 7)) == "error: DatasetParseError: line 7: oops"


# ==================== SCENE TESTS ====================

def _arc(sign, turn=math.pi / 2, radius=10.0, n=40):
    phi = np.linspace(0, turn, n)
    return np.stack([radius * np.sin(phi), sign * radius * (1 - np.cos(phi))], axis=1)


def test_label_behavior_examples():
    straight = np.stack([np.linspace(0, 50, 60), np.zeros(60)], axis=1)
    assert label_behavior(straight) is Behavior.STRAIGHT
    assert label_behavior(_arc(+1)) is Behavior.LEFT
    assert label_behavior(_arc(-1)) is Behavior.RIGHT
    assert label_behavior(np.zeros((60, 2))) is Behavior.STRAIGHT
    assert label_behavior(_arc(+1, turn=math.radians(10))) is Behavior.STRAIGHT


def test_point_in_drivable_boundary_counts_inside():
    area = square()
    assert point_in_drivable((5, 5), area)
    assert point_in_drivable((0, 5), area)
    assert point_in_drivable((10, 10), area)
    assert not point_in_drivable((10.001, 5), area)
    assert not point_in_drivable((1, 1), DrivableArea([]))
    inside = points_in_drivable(np.array([[1, 1], [11, 1]]), area)
    assert inside.tolist() == [True, False]


def test_detect_intersection():
    incoming = LanePolyline(0, [[-20, 0], [5, 0]])
    left = LanePolyline(1, [[5, 0], [5, 20]])
    straight = LanePolyline(2, [[5, 0], [30, 0]])
    assert detect_intersection([incoming, left, straight])
    assert not detect_intersection([incoming, left])
    far = [LanePolyline(i, [[40, 0], [40 + d[0], d[1]]]) for i, d in enumerate([(10, 0), (0, 10), (0, -10)])]
    assert not detect_intersection(far)


def test_generator_is_deterministic_and_worker_invariant():
    cfg = DatasetConfig(n_scenarios=6, class_mix=(0.34, 0.33, 0.33), rng_seed=3)
    a = generate_dataset(cfg)
    b = generate_dataset(cfg)
    c = generate_dataset(cfg, workers=3)
    assert a == b == c
    assert [s.scenario_id for s in a] == [f"s3-{i:06d}" for i in range(6)]


def test_generator_invariants():
    scenarios = small_dataset(12)
    for s in scenarios:
        assert s.future_gt.shape == (60, 2)
        assert all(a.positions.shape == (50, 2) for a in s.agents)
        assert s.focal.valid_mask.all()
        assert np.allclose(s.focal.positions[-1], 0.0)
        assert label_behavior(s.future_gt) is s.behavior_label
        assert points_in_drivable(s.future_gt, s.drivable).all()
        assert 3 <= len(s.agents) <= 7


def test_intersection_fraction_extremes():
    assert all(s.is_intersection for s in small_dataset(6, intersection_fraction=1.0))
    assert not any(s.is_intersection for s in small_dataset(6, intersection_fraction=0.0))


def test_slow_focal_speeds_generate_for_every_class():
    for lo in (0.5, 1.0, 2.0, 2.5, 2.9, 3.0):
        for i, behavior in enumerate(Behavior):
            mix = tuple(1.0 if j == i else 0.0 for j in range(3))
            cfg = DatasetConfig(n_scenarios=4, class_mix=mix, speed_range=(lo, lo + 0.1), rng_seed=11)
            for s in generate_dataset(cfg):
                assert label_behavior(s.future_gt) is s.behavior_label
                assert points_in_drivable(s.future_gt, s.drivable).all(), f"{lo} m/s {behavior.value}"
                if lo >= 3.0:
                    assert s.behavior_label is behavior


def test_dataset_file_roundtrip():
    scenarios = small_dataset(5)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "data.jsonl"
        assert write_dataset(path, scenarios) == 5
        loaded = read_dataset(path)
        empty = Path(tmp) / "empty.jsonl"
        empty.write_text("")
        assert read_dataset(empty) == []
    assert loaded == scenarios


def test_dataset_parse_and_schema_errors():
    scenarios = small_dataset(1)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "bad.jsonl"
        write_dataset(path, scenarios)
        with open(path, "a") as f:
            f.write("{not json\n")
        with pytest.raises(DatasetParseError) as info:
            read_dataset(path)
        assert info.value.line_number == 2

        record = json.loads(path.read_text().splitlines()[0])
        del record["future"]
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(DatasetSchemaError) as info:
            read_dataset(path)
        assert info.value.field == "future" and info.value.line_number == 1


def _set_path(record, path, value):
    target = record
    for key in path[:-1]:
        target = target[key]
    target[path[-1]] = value


MISTYPED_FIELDS = [
    (("agents", 0, "mask"), 5, "agents[0].mask"),
    (("agents", 0, "mask"), ["yes"] * 50, "agents[0].mask"),
    (("agents", 0, "mask"), [1] * 50, "agents[0].mask"),
    (("lanes", 0, "width"), "wide", "lanes[0].width"),
    (("lanes", 0, "width"), True, "lanes[0].width"),
    (("lanes", 0, "width"), -1.0, "lanes[0].width"),
    (("lanes", 0, "successors"), ["1"], "lanes[0].successors"),
    (("lanes", 0), [1, 2], "lanes[0]"),
    (("lanes",), {"points": []}, "lanes"),
    (("intersection",), "false", "intersection"),
    (("intersection",), 0, "intersection"),
    (("future",), "60 points", "future"),
    (("label",), ["left"], "label"),
]


def test_mistyped_record_fields_are_schema_errors():
    record = json.dumps(scenario_to_record(small_dataset(1)[0]))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "typed.jsonl"
        for field_path, value, name in MISTYPED_FIELDS:
            mutated = json.loads(record)
            _set_path(mutated, field_path, value)
            path.write_text(json.dumps(mutated) + "\n")
            with pytest.raises(DatasetSchemaError) as info:
                read_dataset(path)
            assert info.value.field == name, f"{field_path}={value!r}: {info.value.field}"
            assert info.value.line_number == 1


def test_split_is_deterministic_and_disjoint():
    scenarios = small_dataset(30)
    train, val = split_dataset(scenarios, 0.3)
    train2, val2 = split_dataset(scenarios, 0.3)
    assert [s.scenario_id for s in val] == [s.scenario_id for s in val2]
    ids = {s.scenario_id for s in train} | {s.scenario_id for s in val}
    assert len(ids) == 30 and not ({s.scenario_id for s in train} & {s.scenario_id for s in val})


def test_dataset_summary():
    scenarios = small_dataset(20)
    summary = dataset_summary(scenarios, (0.34, 0.33, 0.33))
    assert summary["n_scenarios"] == 20
    assert sum(summary["label_counts"].values()) == 20
    assert summary["gt_ecfl"] == 1.0
    assert 0.0 <= summary["chi2_pvalue"] <= 1.0
    assert 4.9 <= summary["mean_focal_speed"] <= 15.1


def test_normalize_to_focal_undoes_a_rigid_transform():
    s = small_dataset(1)[0]
    moved = transform_scenario(s, 0.7, (12.0, -4.0))
    back = normalize_to_focal(moved)
    assert np.allclose(back.future_gt, s.future_gt, atol=1e-9)
    assert np.allclose(back.lanes[0].points, s.lanes[0].points, atol=1e-9)


@functools.lru_cache(maxsize=1)
def _labelled_futures():
    return [(s.future_gt, s.behavior_label) for s in small_dataset(6)]


@settings(max_examples=25, deadline=None)
@given(angle=st.floats(-math.pi, math.pi), dx=st.floats(-100, 100), dy=st.floats(-100, 100))
def test_label_invariant_under_rigid_transform(angle, dx, dy):
    for future, label in _labelled_futures():
        assert label_behavior(rigid_transform(future, angle, (dx, dy))) is label


# ==================== AUTODIFF TESTS ====================

def _leaf(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def test_elementwise_gradchecks():
    rng = np.random.default_rng(0)
    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (3, 4), 0.5, 2.0)
    c = _leaf(rng, (4,))
    positive = a.data > 0
    cases = {
        "add/mul broadcast": lambda: tsum((a + c) * a),
        "div": lambda: tsum(a / b),
        "power": lambda: tsum(b ** 1.5),
        "exp/log": lambda: tsum(exp(a) + log(b)),
        "tanh/sigmoid/gelu": lambda: tsum(tanh(a) * sigmoid(a) + gelu(a)),
        "mean": lambda: tmean(a * a, axis=1).sum(),
        "where": lambda: tsum(where(positive, a * a, b)),
        "take": lambda: tsum(take(a, (np.array([0, 2, 2]), np.array([1, 3, 3]))) * 2.0),
        "concat/pad": lambda: tsum(pad_axis(concat([a, b], axis=0), 1, 2, axis=1) ** 2),
    }
    for name, fn in cases.items():
        err = gradcheck(fn, [a, b, c])
        assert err < LAYER_TOL, f"{name}: {err}"


def test_softmax_and_matmul_gradchecks():
    rng = np.random.default_rng(1)
    x = _leaf(rng, (2, 3, 5))
    w = _leaf(rng, (5, 4))
    mask = np.array([True, False, True, True, False])
    assert gradcheck(lambda: tsum(softmax(x, axis=-1, mask=mask) * x), [x]) < LAYER_TOL
    assert gradcheck(lambda: tsum(log_softmax(x, axis=-1) * x), [x]) < LAYER_TOL
    assert gradcheck(lambda: tsum((x @ w) ** 2), [x, w]) < LAYER_TOL


def test_layer_gradchecks_across_seeds():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = _leaf(rng, (2, 5, 8))
        h = _leaf(rng, (2, 8))
        mask = np.ones((2, 5), dtype=bool)
        mask[1, 3:] = False
        linear = Linear(8, 6, rng)
        mlp = MLP([8, 12, 4], rng)
        norm = LayerNorm(8)
        gru = GRUCell(8, 8, rng)
        attn = MultiHeadAttention(8, 2, rng)
        conv = Conv1dTemporal(8, 8, 3, rng)
        ffn = FeedForward(8, 2, rng)
        checks = {
            "linear": (lambda: tsum(linear(x) ** 2), [x, linear.weight]),
            "mlp": (lambda: tsum(mlp(x) ** 2), [x, mlp.layers[0].weight]),
            "layer_norm": (lambda: tsum(norm(x) * x), [x, norm.gamma]),
            "gru": (lambda: tsum(gru(x[:, 0, :], h) ** 2), [x, h, gru.w_h]),
            "attention": (lambda: tsum(attn(x, x, key_mask=mask) ** 2), [x, attn.q_proj.weight]),
            "conv": (lambda: tsum(conv(x) ** 2), [x, conv.proj.weight]),
            "feed_forward": (lambda: tsum(ffn(x) ** 2), [x, ffn.up.weight]),
        }
        for name, (fn, inputs) in checks.items():
            err = gradcheck(fn, inputs, max_entries=8, rng=rng)
            assert err < LAYER_TOL, f"seed {seed} {name}: {err}"


def test_backward_contract():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        backward(x * 2.0)
    loss = tsum(x * x)
    backward(loss)
    assert np.allclose(x.grad, 2.0)
    with pytest.raises(UsageError):
        backward(loss)
    with pytest.raises(NumericError):
        backward(tsum(x * np.nan))


def test_lr_schedule_and_optimizer():
    sched = LrSchedule(total_steps=10000, base_lr=5e-4, warmup_steps=1500)
    assert sched.lr_at(0) == pytest.approx(5e-4 / 1500)
    assert sched.lr_at(1499) == pytest.approx(5e-4)
    assert sched.lr_at(1500) == pytest.approx(5e-4)
    assert sched.lr_at(10000) == pytest.approx(0.0, abs=1e-15)
    assert sched.lr_at(5750) == pytest.approx(2.5e-4)
    with pytest.raises(ConfigError):
        LrSchedule(total_steps=100, warmup_steps=100)

    rng = np.random.default_rng(0)
    layer = Linear(3, 1, rng)
    opt = AdamW(layer.parameters())
    with pytest.raises(ConfigError):
        opt.step(0.0)
    before = layer.weight.data.copy()
    backward(tsum(layer(Tensor(np.ones((2, 3))))))
    opt.step(1e-2)
    assert not np.allclose(before, layer.weight.data)


def test_attention_over_a_single_key_is_its_value_projection():
    rng = np.random.default_rng(4)
    attn = MultiHeadAttention(8, 2, rng)
    queries = Tensor(rng.standard_normal((2, 3, 8)))
    key = Tensor(rng.standard_normal((2, 1, 8)))
    out = attn(queries, key).data
    expected = attn.out_proj(attn.v_proj(key)).data
    assert np.allclose(out, np.broadcast_to(expected, out.shape), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_attention_ignores_key_order(seed):
    rng = np.random.default_rng(seed)
    attn = MultiHeadAttention(8, 2, rng)
    queries = Tensor(rng.standard_normal((1, 4, 8)))
    keys = rng.standard_normal((1, 5, 8))
    mask = np.array([[True, True, False, True, True]])
    perm = rng.permutation(5)
    a = attn(queries, Tensor(keys), key_mask=mask).data
    b = attn(queries, Tensor(keys[:, perm]), key_mask=mask[:, perm]).data
    assert np.allclose(a, b, atol=1e-12)


def test_layer_norm_of_a_constant_vector_is_zero():
    norm = LayerNorm(6)
    out = norm(Tensor(np.full((2, 6), 3.7)))
    assert np.allclose(out.data, 0.0, atol=1e-9)
    assert np.allclose(norm.normalize(Tensor(np.full((1, 6), -12.5))).data, 0.0, atol=1e-9)


def test_adamw_examples():
    rng = np.random.default_rng(0)
    layer = Linear(3, 2, rng)
    before = layer.weight.data.copy()
    opt = AdamW(layer.parameters(), weight_decay=0.0)
    opt.zero_grad()
    opt.step(1e-2)
    assert np.array_equal(before, layer.weight.data)

    w = Param(np.ones(1))
    opt = AdamW([w])
    opt.zero_grad()
    backward(tsum(w * w) * 0.5)
    opt.step(1e-2)
    assert abs(w.data.item()) < 1.0

    target = np.array([0.5, -0.3])
    w = Param(np.zeros(2))
    opt = AdamW([w], weight_decay=0.0)
    sched = LrSchedule(total_steps=200, base_lr=0.05, warmup_steps=10)
    for step in range(200):
        opt.zero_grad()
        loss = tsum((w - target) ** 2)
        backward(loss)
        opt.step(sched.lr_at(step))
    assert tsum((w - target) ** 2).item() < 1e-6


def test_state_dict_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(ModelStateError):
        Linear(3, 2, rng).load_state_dict(Linear(3, 4, rng).state_dict())


# ==================== DIFFUSION ALGEBRA TESTS ====================

def test_schedule_single_step():
    sched = schedule_from_betas([0.5])
    assert sched.alpha_bar[1] == 0.5
    assert sched.alpha_bar[0] == 1.0


def test_linear_schedule_matches_product_oracle():
    sched = build_schedule(20)
    betas = np.minimum(np.linspace(1e-4 * 50, 0.02 * 50, 20), 0.999)
    oracle = np.cumprod(1.0 - betas)
    assert np.max(np.abs(sched.alpha_bar[1:] - oracle)) < 1e-12
    for t in range(1, 21):
        assert sched.alpha_bar[t] == sched.alpha_bar[t - 1] * sched.alpha[t]
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert sched.alpha_bar[20] < 0.02
    assert np.all((sched.beta[1:] > 0) & (sched.beta[1:] < 1))


def test_cosine_schedule_and_bad_inputs():
    sched = build_schedule(50, "cosine")
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert np.all(sched.beta[1:] <= 0.999)
    with pytest.raises(ConfigError):
        build_schedule(0)
    with pytest.raises(ConfigError):
        build_schedule(10, "sigmoid")


def test_q_sample_examples():
    sched = build_schedule(20)
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(60, 2))
    out = q_sample(x0, 7, np.zeros_like(x0), sched).values
    assert np.allclose(out, math.sqrt(sched.alpha_bar[7]) * x0)

    identity = NoiseSchedule(1, np.array([0.0, 0.0]), np.ones(2), np.ones(2), np.zeros(2))
    assert np.array_equal(q_sample(x0, 1, rng.normal(size=x0.shape), identity).values, x0)

    quarter = schedule_from_betas([0.25])
    assert np.allclose(q_sample(np.zeros((60, 2)), 1, np.ones((60, 2)), quarter).values, 0.5)

    for bad in (0, 21):
        with pytest.raises(UsageError):
            q_sample(x0, bad, np.zeros_like(x0), sched)


def test_reverse_step_inverts_forward_at_t1():
    sched = build_schedule(20)
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=(4, 60, 2))
    eps = rng.normal(size=x0.shape)
    xt = q_sample(x0, 1, eps, sched).values
    assert np.max(np.abs(reverse_step(xt, 1, eps, sched, noise=rng.normal(size=x0.shape)) - x0)) < 1e-10
    assert np.allclose(predict_x0(xt, 1, eps, sched), x0, atol=1e-10)


def test_forward_kernels_compose_to_closed_form_marginal():
    sched = build_schedule(20)
    rng = np.random.default_rng(0)
    n, t = 10000, 6
    x0 = np.array([1.5, -0.7])
    x = np.tile(x0, (n, 1))
    for step in range(1, t + 1):
        x = q_step(x, step, rng.standard_normal(x.shape), sched)
    mean = math.sqrt(sched.alpha_bar[t]) * x0
    var = 1.0 - sched.alpha_bar[t]
    se_mean = math.sqrt(var / n)
    se_var = var * math.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(x.mean(axis=0) - mean) < 3 * se_mean)
    assert np.all(np.abs(x.var(axis=0, ddof=1) - var) < 3 * se_var)


def test_normalization_roundtrip():
    traj = np.random.default_rng(2).normal(scale=40.0, size=(60, 2))
    assert np.max(np.abs(denormalize(normalize(traj, 30.0), 30.0) - traj)) < 1e-9


def test_step_embedding_is_injective():
    emb = sinusoidal_embedding(np.arange(0, 101), 64)
    assert emb.shape == (101, 64)
    dists = np.linalg.norm(emb[:, None] - emb[None], axis=-1)
    assert np.all(dists[~np.eye(101, dtype=bool)] > 1e-6)


def test_plan_tokens():
    probs = np.array([0.7, 0.2, 0.1])
    tokens = plan_tokens(SampleMode.BEHAVIOR, 6, True, probs)
    assert [t.mode for t in tokens] == [Behavior.LEFT, Behavior.LEFT, Behavior.STRAIGHT, Behavior.STRAIGHT,
                                        Behavior.RIGHT, Behavior.RIGHT]
    tokens = plan_tokens(SampleMode.BEHAVIOR, 6, False, probs)
    assert all(t.mode is Behavior.STRAIGHT for t in tokens)
    tokens = plan_tokens(SampleMode.BEHAVIOR, 6, False, np.array([0.1, 0.2, 0.7]))
    assert all(t.mode is Behavior.RIGHT for t in tokens)
    assert all(t.variant == "none" for t in plan_tokens(SampleMode.BASELINE, 6, True, probs))
    tokens = plan_tokens(SampleMode.ENDPOINT, 6, True, probs, endpoint=np.array([30.0, 1.0]))
    assert all(np.array_equal(t.endpoint, [30.0, 1.0]) for t in tokens)
    with pytest.raises(UsageError):
        plan_tokens(SampleMode.ENDPOINT, 6, True, probs)
    with pytest.raises(UsageError):
        BehaviorToken(mode=Behavior.LEFT, endpoint=np.zeros(2))


def test_endpoint_source_noise():
    s = small_dataset(1)[0]
    rng = np.random.default_rng(0)
    assert np.array_equal(endpoint_source(s, 0.0, rng), s.future_gt[-1])
    draws = np.array([endpoint_source(s, 0.5, rng) for _ in range(10000)]) - s.future_gt[-1]
    assert np.all(np.abs(draws.std(axis=0) - 0.5) < 0.025)


# ==================== HEAD TESTS ====================

def test_class_loss_examples():
    assert class_loss(Tensor(np.array([[1.0, 0.0, 0.0]])), [0]).item() == 0.0
    assert class_loss(Tensor(np.full((2, 3), 1 / 3)), [1, 2]).item() == pytest.approx(math.log(3))
    assert class_loss(Tensor(np.array([[0.0, 1.0, 0.0]])), [0]).item() == pytest.approx(-math.log(1e-12))
    losses = [class_loss(Tensor(np.array([[p, (1 - p) / 2, (1 - p) / 2]])), [0]).item() for p in (0.2, 0.5, 0.9)]
    assert losses[0] > losses[1] > losses[2] >= 0


def test_confidence_target_and_training_contract():
    gt = np.random.default_rng(0).normal(size=(60, 2))
    assert confidence_target(gt, gt) == pytest.approx(1.0)
    assert confidence_target(gt + np.array([2.0, 0.0]), gt, tau=2.0) == pytest.approx(math.exp(-1))
    decoder = ConfidenceDecoder(4, np.random.default_rng(0))
    features = Tensor(np.random.default_rng(1).normal(size=(3, 5, 4)))
    scores = confidence(decoder, features)
    assert scores.shape == (3,) and np.all((scores.data > 0) & (scores.data < 1))
    with pytest.raises(UsageError):
        confidence(decoder, features, training=True)
    _, loss = confidence(decoder, features, np.zeros((3, 5, 2)), np.zeros((3, 5, 2)), training=True)
    assert loss.item() == pytest.approx(float(np.mean(1.0 - scores.data)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.lists(st.floats(0, 1), min_size=6, max_size=6))
def test_final_score_in_unit_interval(probs, scores):
    probs = np.asarray(probs) / max(sum(probs), 1e-9)
    out = final_score(np.clip(probs, 0, 1), scores, [0, 0, 1, 1, 2, 2])
    assert np.all((out >= 0) & (out <= 1))


def test_rank_predictions_breaks_ties_by_index():
    assert rank_predictions([0.5, 0.9, 0.5, 0.1]) == [1, 0, 2, 3]


def test_confusion_matrix():
    report = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 2])
    assert report.accuracy == 0.75
    assert report.recall == {"straight": 1.0, "left": 0.5, "right": 1.0}
    assert report.precision["straight"] == 0.5
    assert np.allclose(report.normalized.sum(axis=1), 1.0)
    with pytest.raises(InputError):
        confusion_matrix([], [])


def test_mode_probs_are_distributions():
    logits = Tensor(np.random.default_rng(0).normal(scale=5, size=(10, 3)))
    probs = softmax(logits, axis=-1).data
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((probs >= 0) & (probs <= 1))


# ==================== METRIC TESTS ====================

def test_displacement_oracles():
    gt = np.zeros((3, 2))
    samples = np.zeros((2, 3, 2))
    samples[0, -1] = [5.0, 0.0]
    samples[1, -1] = [1.0, 0.0]
    assert min_fde(samples, gt) == pytest.approx(1.0, abs=1e-9)
    assert miss_rate(samples, gt) == 0
    assert min_ade(np.zeros((1, 3, 2)), gt) == 0.0

    offset = np.tile([0.0, 3.0], (1, 60, 1))
    assert min_ade(offset, np.zeros((60, 2))) == pytest.approx(3.0, abs=1e-9)
    assert min_fde(offset, np.zeros((60, 2))) == pytest.approx(3.0, abs=1e-9)

    boundary = np.zeros((1, 3, 2))
    boundary[0, -1] = [2.0, 0.0]
    assert miss_rate(boundary, gt) == 0
    assert miss_rate(boundary * 1.5, gt) == 1
    with pytest.raises(InputError):
        min_ade(np.zeros((2, 4, 2)), gt)


def test_diversity_oracles():
    same = np.tile(np.random.default_rng(0).normal(size=(1, 60, 2)), (4, 1, 1))
    assert asd(same) == 0.0 and fsd(same) == 0.0
    pair = np.zeros((2, 60, 2))
    pair[1, :, 1] = 2.0
    assert asd(pair) == pytest.approx(2.0, abs=1e-9)
    assert fsd(pair) == pytest.approx(2.0, abs=1e-9)
    triple = np.zeros((3, 5, 2))
    triple[:, -1, 0] = [0.0, 2.0, 4.0]
    assert fsd(triple) == pytest.approx(8 / 3, abs=1e-9)
    with pytest.raises(MetricError):
        asd(np.zeros((1, 60, 2)))


def test_ecfl_oracles():
    area = square()
    inside = np.full((2, 5, 2), 5.0)
    assert ecfl(inside, area) == 1.0
    inside[1, 2] = [20.0, 5.0]
    assert ecfl(inside, area) == 0.5
    with pytest.raises(MetricError):
        ecfl(inside, DrivableArea([]))
    s = small_dataset(1)[0]
    assert ecfl(s.future_gt[None], s.drivable) == 1.0


def test_aggregate():
    one = ScenarioMetrics("a", 1.0, 2.0, 0, 3.0, 4.0, 1.0)
    two = ScenarioMetrics("b", 3.0, 4.0, 1, 5.0, 6.0, 0.5)
    assert aggregate([one], 6).min_ade == 1.0
    report = aggregate([one, two], 6)
    assert report.miss_rate == 0.5 and report.min_fde == 3.0 and report.ecfl == 0.75 and report.n_scenarios == 2
    table = [ScenarioMetrics(str(i), i, 2 * i, i % 2, 0.5 * i, i + 1.0, 1.0 / (i + 1)) for i in range(5)]
    report = aggregate(table, 6)
    assert report.min_ade == pytest.approx(2.0) and report.min_fde == pytest.approx(4.0)
    assert report.miss_rate == pytest.approx(0.4) and report.asd == pytest.approx(1.0)
    assert report.ecfl == pytest.approx((1 + 1 / 2 + 1 / 3 + 1 / 4 + 1 / 5) / 5)
    with pytest.raises(MetricError):
        aggregate([], 6)


trajectories = st.integers(min_value=0, max_value=2 ** 31 - 1).map(
    lambda seed: np.random.default_rng(seed).normal(scale=10.0, size=(4, 12, 2)))


@settings(max_examples=40, deadline=None)
@given(trajectories, st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50))
def test_metrics_invariant_under_rigid_transform(samples, angle, dx, dy):
    gt = samples[0] + 0.5
    moved = rigid_transform(samples.reshape(-1, 2), angle, (dx, dy)).reshape(samples.shape)
    moved_gt = rigid_transform(gt, angle, (dx, dy))
    for fn in (min_ade, min_fde):
        assert math.isclose(fn(samples, gt), fn(moved, moved_gt), rel_tol=1e-9, abs_tol=1e-9)
    for fn in (asd, fsd):
        assert math.isclose(fn(samples), fn(moved), rel_tol=1e-9, abs_tol=1e-9)


@settings(max_examples=40, deadline=None)
@given(trajectories)
def test_adding_a_sample_never_hurts_min_error(samples):
    gt = np.zeros((12, 2))
    assert min_ade(samples, gt) <= min_ade(samples[:3], gt)
    assert min_fde(samples, gt) <= min_fde(samples[:3], gt)


# ==================== REPORT TESTS ====================

def test_metric_report_files():
    area = square(-100, -100, 200)
    rng = np.random.default_rng(0)
    rows = [scenario_metrics(rng.normal(size=(6, 60, 2)), np.zeros((60, 2)), area, f"s{i}", bool(i % 2), "left")
            for i in range(3)]
    report = aggregate(rows, 6)
    with tempfile.TemporaryDirectory() as tmp:
        csv_path = write_metrics_csv(Path(tmp) / "report.csv", report)
        header = csv_path.read_text().splitlines()[0]
        values = read_metrics_csv(csv_path)
        per = write_scenario_csv(Path(tmp) / "per.csv", rows).read_text().splitlines()
        xlsx = export_to_excel(Path(tmp) / "report.xlsx", report, rows)
        from openpyxl import load_workbook
        wb = load_workbook(xlsx)
        sheet_names = wb.sheetnames
        bold = wb["Summary"].cell(row=1, column=1).font.bold
    assert header == ",".join(METRICS_HEADER)
    assert values["min_ade"] == report.min_ade and values["ecfl"] == 1.0
    assert per[0] == "id,min_ade,min_fde,miss,asd,fsd,ecfl,is_intersection,label" and len(per) == 4
    assert sheet_names == ["Summary", "Scenarios"] and bold


def test_ablation_csv_and_plot():
    rows = [
        {"steps": 5, "epochs": 35, "min_ade6": 2.5, "min_fde6": 5.0, "status": "ok"},
        {"steps": 10, "epochs": 70, "min_ade6": None, "min_fde6": None, "status": "failed: NumericError"},
        {"steps": 20, "epochs": 140, "min_ade6": 1.25, "min_fde6": 2.5, "status": "ok"},
    ]
    with tempfile.TemporaryDirectory() as tmp:
        path = write_ablation_csv(Path(tmp) / "ablation.csv", rows)
        assert path.read_text().splitlines()[0] == ",".join(ABLATION_HEADER)
        loaded = read_ablation_csv(path)
        svg = plot_ablation(loaded, Path(tmp) / "ablation.svg").read_text()
    assert loaded == rows
    assert "<svg" in svg


def test_prediction_file_roundtrip():
    rng = np.random.default_rng(0)
    preds = [
        PredictionSet("s0", rng.integers(-400, 400, size=(6, 60, 2)) / 4.0, rng.integers(0, 8, size=6) / 8.0,
                      rng.integers(0, 8, size=6) / 8.0, np.array([0.5, 0.25, 0.25]),
                      [BehaviorToken(mode=b) for b in (Behavior.LEFT,) * 2 + (Behavior.STRAIGHT,) * 2 + (Behavior.RIGHT,) * 2]),
        PredictionSet("s1", np.zeros((2, 60, 2)), np.ones(2), np.ones(2), np.array([1.0, 0.0, 0.0]),
                      [BehaviorToken(endpoint=[30.5, -1.25])] * 2),
    ]
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "preds.jsonl"
        assert write_predictions(path, preds) == 2
        loaded = read_predictions(path)
        path.write_text('{"id": "x"}\n')
        with pytest.raises(DatasetSchemaError):
            read_predictions(path)
    assert np.array_equal(loaded[0].samples, preds[0].samples)
    assert [t.mode for t in loaded[0].tokens] == [t.mode for t in preds[0].tokens]
    assert np.array_equal(loaded[1].tokens[0].endpoint, [30.5, -1.25])
    assert loaded[1].tokens[0].mode is None


# ==================== MAIN ====================

SECTIONS = [
    ("CONFIG / ERROR TESTS", [
        test_default_config_values, test_tiny_preset_and_file_override,
        test_config_rejects_unknown_keys_and_bad_values, test_variant_properties, test_ablation_epoch_rule,
        test_cli_error_contract,
    ]),
    ("SCENE TESTS", [
        test_label_behavior_examples, test_point_in_drivable_boundary_counts_inside, test_detect_intersection,
        test_generator_is_deterministic_and_worker_invariant, test_generator_invariants,
        test_intersection_fraction_extremes, test_slow_focal_speeds_generate_for_every_class,
        test_dataset_file_roundtrip, test_dataset_parse_and_schema_errors,
        test_mistyped_record_fields_are_schema_errors,
        test_split_is_deterministic_and_disjoint, test_dataset_summary,
        test_normalize_to_focal_undoes_a_rigid_transform, test_label_invariant_under_rigid_transform,
    ]),
    ("AUTODIFF TESTS", [
        test_elementwise_gradchecks, test_softmax_and_matmul_gradchecks, test_layer_gradchecks_across_seeds,
        test_backward_contract, test_lr_schedule_and_optimizer,
        test_attention_over_a_single_key_is_its_value_projection, test_attention_ignores_key_order,
        test_layer_norm_of_a_constant_vector_is_zero, test_adamw_examples, test_state_dict_mismatch,
    ]),
    ("DIFFUSION ALGEBRA TESTS", [
        test_schedule_single_step, test_linear_schedule_matches_product_oracle,
        test_cosine_schedule_and_bad_inputs, test_q_sample_examples, test_reverse_step_inverts_forward_at_t1,
        test_forward_kernels_compose_to_closed_form_marginal, test_normalization_roundtrip,
        test_step_embedding_is_injective, test_plan_tokens, test_endpoint_source_noise,
    ]),
    ("HEAD TESTS", [
        test_class_loss_examples, test_confidence_target_and_training_contract, test_final_score_in_unit_interval,
        test_rank_predictions_breaks_ties_by_index, test_confusion_matrix, test_mode_probs_are_distributions,
    ]),
    ("METRIC TESTS", [
        test_displacement_oracles, test_diversity_oracles, test_ecfl_oracles, test_aggregate,
        test_metrics_invariant_under_rigid_transform, test_adding_a_sample_never_hurts_min_error,
    ]),
    ("REPORT TESTS", [
        test_metric_report_files, test_ablation_csv_and_plot, test_prediction_file_roundtrip,
    ]),
]


def main():
    print("\n" + "=" * 60)
    print("  CDT TEST SUITE")
    print(f"  {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print("=" * 60)

    start_time = time.time()

    for title, tests in SECTIONS:
        print("\n" + "=" * 60)
        print(title)
        print("=" * 60)
        for test in tests:
            run_test(test.__name__, test)

    # Summary
    elapsed = time.time() - start_time
    total = results["passed"] + results["failed"]

    print("\n" + "=" * 60)
    print("  TEST SUMMARY")
    print("=" * 60)
    print(f"  Passed: {results['passed']}/{total}")
    print(f"  Failed: {results['failed']}/{total}")
    print(f"  Time: {elapsed:.1f}s")

    if results["errors"]:
        print("\n  FAILURES:")
        for error in results["errors"]:
            print(f"    - {error}")

    print("=" * 60)

    return results["failed"] == 0


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
