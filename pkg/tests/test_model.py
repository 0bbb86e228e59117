import dataclasses
import json

import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import norm

from gftnn.model import (ModelConfig, ModelParams, Trajectory, build_basis,
                         decode, decode_partials, encode, gelu, gelu_grad,
                         init_params, layer_norm, load_checkpoint, mlp_block,
                         param_shapes, predict, preset_config, save_checkpoint,
                         scenario_basis, scenario_spectrum, select_channels,
                         spectral_gate, truth_trajectory)
from gftnn.scenario import Scenario, synthesize
from gftnn.spectral import gft_extended, truncate_spectrum
from helpers import tiny_config


def manual_scenario(n_v=3, t_obs=6, t_pred=10, fps=2.0, offsets=((1.0, 0.0), (0.0, -1.0))):
    """Hand-built scenario whose neighbours sit at fixed offsets from the target."""
    rng = np.random.default_rng(42)
    feats = rng.normal(size=(4, t_obs, n_v))
    t = np.arange(t_obs) / fps
    feats[0, :, 0] = 20.0 * t
    feats[1, :, 0] = 0.0
    for slot, (dx, dy) in enumerate(offsets, start=1):
        feats[0, :, slot] = feats[0, :, 0] + dx
        feats[1, :, slot] = feats[1, :, 0] + dy
    future = np.stack([20.0 * (np.arange(1, t_pred + 1) / fps),
                       np.zeros(t_pred)], axis=1)
    return Scenario("manual-0", feats, future, 20.0, fps, "keep_lane")


# --------------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ValueError, match="k must be"):
        tiny_config(k=3)
    with pytest.raises(ValueError, match="p must be"):
        tiny_config(p=7)
    with pytest.raises(ValueError, match="p must be"):
        tiny_config(p=0)
    with pytest.raises(ValueError, match="spider"):
        tiny_config(weighted=True, graph_kind="mesh")
    with pytest.raises(ValueError, match="graph_kind"):
        tiny_config(graph_kind="torus")
    with pytest.raises(ValueError, match="fps"):
        tiny_config(fps=0.0)
    with pytest.raises(ValueError):
        tiny_config(hidden=0)


def test_config_stacked_blocks_need_three_inputs():
    # reusing one weight shape across blocks only works when p * n_v == 3
    cfg = ModelConfig(k=2, t_obs=4, t_pred=5, n_v=3, p=1, hidden=4,
                      n_blocks=3, fps=1.0)
    assert cfg.zk == 3
    with pytest.raises(ValueError, match="p \\* n_v"):
        tiny_config(n_blocks=2)


def test_config_sizes():
    cfg = tiny_config()
    assert cfg.zk == 18
    assert cfg.z == 36


def test_preset_table():
    for fps, t_obs, t_pred in ((10, 30, 50), (25, 75, 125)):
        base = preset_config("gftnn", fps)
        assert (base.k, base.p, base.weighted) == (4, t_obs, False)
        assert (base.t_obs, base.t_pred) == (t_obs, t_pred)
        w = preset_config("gftnn-w", fps)
        assert (w.k, w.p, w.weighted) == (2, t_obs, True)
        assert preset_config("gftnn-rdcby5", fps).p == t_obs // 5
        assert preset_config("gftnn-rdcby15", fps).p == t_obs // 15
    assert preset_config("gftnn-rdcby5", 25).p == 15
    assert preset_config("gftnn-rdcby15", 10).p == 2


def test_preset_hidden_and_bad_inputs():
    assert preset_config("gftnn", 10, hidden=8).hidden == 8
    with pytest.raises(ValueError, match="preset"):
        preset_config("mlp", 10)
    with pytest.raises(ValueError, match="fps"):
        preset_config("gftnn", 15)


# --------------------------------------------------------------------- params

def expected_count(cfg):
    per_channel = cfg.hidden * cfg.zk + cfg.hidden + 3 * cfg.hidden + 3
    return cfg.z + cfg.k * per_channel + 3 * (3 * cfg.k) + 3


def test_param_count_formula():
    for cfg in (tiny_config(), preset_config("gftnn", 10),
                preset_config("gftnn-w", 10), preset_config("gftnn-rdcby15", 25)):
        params = init_params(cfg, 0)
        assert params.n_params == expected_count(cfg)
        shapes = param_shapes(cfg)
        assert sum(int(np.prod(s)) for s in shapes.values()) == params.n_params


def test_param_count_regression_values():
    assert init_params(preset_config("gftnn", 10), 0).n_params == 55931
    assert init_params(preset_config("gftnn-w", 10), 0).n_params == 27967


def test_init_deterministic_and_shaped():
    cfg = tiny_config()
    a = init_params(cfg, 5)
    b = init_params(cfg, 5)
    c = init_params(cfg, 6)
    for (name, arr_a), (_, arr_b) in zip(a.items(), b.items()):
        assert np.array_equal(arr_a, arr_b), name
        assert arr_a.shape == param_shapes(cfg)[name]
    assert any(not np.array_equal(x, y)
               for (_, x), (_, y) in zip(a.items(), c.items()))


def test_init_gate_ones_biases_zero_weights_bounded():
    cfg = tiny_config()
    p = init_params(cfg, 7)
    assert np.array_equal(p.w_s, np.ones(cfg.z))
    for k in range(cfg.k):
        assert np.array_equal(p.b_n[k], np.zeros(cfg.hidden))
        assert np.array_equal(p.b_l[k], np.zeros(3))
        assert np.max(np.abs(p.w_n[k])) <= 1.0 / np.sqrt(cfg.zk)
        assert np.max(np.abs(p.w_l[k])) <= 1.0 / np.sqrt(cfg.hidden)
    assert np.max(np.abs(p.w_h)) <= 1.0 / np.sqrt(3 * cfg.k)
    assert np.array_equal(p.b_h, np.zeros(3))


def test_params_copy_and_named_roundtrip():
    cfg = tiny_config()
    p = init_params(cfg, 1)
    q = p.copy()
    q.w_s[0] = 99.0
    assert p.w_s[0] == 1.0
    named = dict(p.items())
    r = ModelParams.from_named(named, cfg.k)
    for (name, a), (_, b) in zip(p.items(), r.items()):
        assert np.array_equal(a, b), name


# --------------------------------------------------------------- layer pieces

def test_spectral_gate_example():
    out = spectral_gate(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    assert np.array_equal(out, [3.0, 8.0])
    with pytest.raises(ValueError, match="shape"):
        spectral_gate(np.zeros(3), np.zeros(4))


def test_layer_norm_constant_input():
    assert np.array_equal(layer_norm(np.full(7, 3.25)), np.zeros(7))


def test_layer_norm_two_points():
    got = layer_norm(np.array([1.0, -1.0]))
    want = 1.0 / np.sqrt(1.0 + 1e-5)
    assert np.allclose(got, [want, -want], rtol=0, atol=1e-15)


def test_layer_norm_statistics():
    rng = np.random.default_rng(0)
    v = rng.normal(3.0, 10.0, size=101)
    out = layer_norm(v)
    assert abs(out.mean()) < 1e-12
    # variance is slightly below 1 because of the epsilon in the denominator
    assert abs(out.var() - 1.0) < 1e-4


def test_layer_norm_rejects_short_or_2d():
    with pytest.raises(ValueError):
        layer_norm(np.array([1.0]))
    with pytest.raises(ValueError):
        layer_norm(np.zeros((3, 3)))


def test_gelu_matches_gaussian_cdf():
    x = np.linspace(-6, 6, 201)
    assert np.allclose(gelu(x), x * norm.cdf(x), rtol=1e-12, atol=1e-14)


def test_gelu_saturation():
    assert abs(gelu(-20.0)) < 1e-80
    assert abs(gelu(20.0) - 20.0) < 1e-12
    assert abs(gelu_grad(-20.0)) < 1e-80
    assert abs(gelu_grad(20.0) - 1.0) < 1e-12
    assert gelu(0.0) == 0.0
    assert abs(gelu_grad(0.0) - 0.5) < 1e-15


def test_gelu_grad_matches_finite_difference():
    x = np.linspace(-4, 4, 81)
    h = 1e-6
    fd = (gelu(x + h) - gelu(x - h)) / (2 * h)
    assert np.max(np.abs(fd - gelu_grad(x))) < 1e-8


def test_mlp_block_zero_weights_returns_bias():
    rng = np.random.default_rng(1)
    h = rng.normal(size=10)
    b_l = np.array([1.5, -2.0, 0.25])
    out = mlp_block(h, np.zeros((4, 10)), rng.normal(size=4),
                    np.zeros((3, 4)), b_l)
    assert np.array_equal(out, b_l)


def test_mlp_block_matches_straight_line_math():
    rng = np.random.default_rng(2)
    h = rng.normal(size=12)
    w_n = rng.normal(size=(5, 12))
    b_n = rng.normal(size=5)
    w_l = rng.normal(size=(3, 5))
    b_l = rng.normal(size=3)
    normed = (h - h.mean()) / np.sqrt(h.var() + 1e-5)
    want = w_l @ gelu(w_n @ normed + b_n) + b_l
    assert np.allclose(mlp_block(h, w_n, b_n, w_l, b_l), want,
                       rtol=0, atol=1e-12)


def test_mlp_block_stacking_is_repeated_application():
    rng = np.random.default_rng(3)
    h = rng.normal(size=3)
    w_n = rng.normal(size=(6, 3))
    b_n = rng.normal(size=6)
    w_l = rng.normal(size=(3, 6))
    b_l = rng.normal(size=3)
    once = mlp_block(h, w_n, b_n, w_l, b_l, n_blocks=1)
    twice = mlp_block(once, w_n, b_n, w_l, b_l, n_blocks=1)
    assert np.array_equal(mlp_block(h, w_n, b_n, w_l, b_l, n_blocks=2), twice)


# --------------------------------------------------------------------- encode

def test_encode_zero_head_returns_head_bias():
    cfg = tiny_config()
    params = init_params(cfg, 4)
    params.w_h[:] = 0.0
    params.b_h[:] = [1.0, 2.0, 3.0]
    rng = np.random.default_rng(5)
    out = encode(rng.normal(size=cfg.z), params, cfg)
    assert np.array_equal(out, [1.0, 2.0, 3.0])


def test_encode_rejects_wrong_length():
    cfg = tiny_config()
    with pytest.raises(ValueError, match="shape"):
        encode(np.zeros(cfg.z + 1), init_params(cfg, 0), cfg)


def test_encode_channel_permutation_symmetry():
    # swapping whole channels together with their weights leaves the output
    # unchanged, i.e. channels interact only through the head
    cfg = ModelConfig(k=4, t_obs=5, t_pred=4, n_v=2, p=5, hidden=6, fps=1.0)
    params = init_params(cfg, 8)
    rng = np.random.default_rng(9)
    params.w_s[:] = rng.normal(size=cfg.z)
    s = rng.normal(size=cfg.z)
    perm = [2, 0, 3, 1]
    zk = cfg.zk
    s_p = np.concatenate([s[k * zk:(k + 1) * zk] for k in perm])
    w_s_p = np.concatenate([params.w_s[k * zk:(k + 1) * zk] for k in perm])
    w_h_p = np.concatenate([params.w_h[:, 3 * k:3 * k + 3] for k in perm], axis=1)
    params_p = ModelParams(
        w_s_p,
        [params.w_n[k] for k in perm], [params.b_n[k] for k in perm],
        [params.w_l[k] for k in perm], [params.b_l[k] for k in perm],
        w_h_p, params.b_h)
    assert np.allclose(encode(s_p, params_p, cfg), encode(s, params, cfg),
                       rtol=0, atol=1e-12)


def test_encode_head_sees_sigmoid_of_blocks():
    cfg = tiny_config()
    params = init_params(cfg, 10)
    rng = np.random.default_rng(11)
    s = rng.normal(size=cfg.z)
    parts = [mlp_block(s[k * cfg.zk:(k + 1) * cfg.zk] * params.w_s[k * cfg.zk:(k + 1) * cfg.zk],
                       params.w_n[k], params.b_n[k], params.w_l[k], params.b_l[k])
             for k in range(cfg.k)]
    want = params.w_h @ expit(np.concatenate(parts)) + params.b_h
    assert np.allclose(encode(s, params, cfg), want, rtol=0, atol=1e-12)


# --------------------------------------------------------------------- decode

def test_decode_starts_at_origin():
    rng = np.random.default_rng(12)
    for _ in range(20):
        tr = decode(rng.normal(size=3), rng.uniform(10, 40), 50, 10.0)
        assert tr.x[0] == 0.0
        assert tr.y[0] == 0.0
        assert len(tr) == 51


def test_decode_zero_latents_give_constant_velocity():
    t = np.arange(51) / 10.0
    tr = decode(np.array([0.0, 0.0, 1.3]), 30.0, 50, 10.0)
    assert np.array_equal(tr.x, 30.0 * t)
    assert np.array_equal(tr.y, np.zeros(51))


def test_decode_zero_amplitude_means_straight():
    tr = decode(np.array([0.7, 0.0, 2.0]), 25.0, 50, 10.0)
    assert np.array_equal(tr.y, np.zeros(51))


def test_decode_known_point():
    # x(2 s) = 30 * 2 + 0.5 * 1 * 4 = 62 exactly (t = 2.0 is representable)
    tr = decode(np.array([1.0, 5.0, 2.0]), 30.0, 50, 10.0)
    assert tr.x[20] == 62.0


def test_decode_lateral_bounded_by_amplitude():
    rng = np.random.default_rng(13)
    for _ in range(20):
        h = rng.normal(size=3) * [1.0, 3.0, 2.0]
        tr = decode(h, 30.0, 50, 10.0)
        assert np.max(np.abs(tr.y)) <= abs(h[1])


def test_decode_lateral_monotone():
    tr = decode(np.array([0.0, 2.0, 1.5]), 30.0, 50, 10.0)
    steps = np.diff(tr.y)
    assert np.all(steps <= 0) or np.all(steps >= 0)


def test_decode_rate_sign_flip_mirrors_lateral():
    # the anchored lateral profile is antisymmetric in the rate
    rng = np.random.default_rng(14)
    for _ in range(10):
        h1, h2, h3 = rng.normal(size=3)
        plus = decode(np.array([h1, h2, h3]), 20.0, 50, 10.0)
        minus = decode(np.array([h1, h2, -h3]), 20.0, 50, 10.0)
        assert np.allclose(plus.y + minus.y, 0.0, rtol=0, atol=1e-12)
        assert np.array_equal(plus.x, minus.x)


def test_decode_longitudinal_curvature():
    h1 = 1.7
    tr = decode(np.array([h1, 0.0, 1.0]), 28.0, 50, 10.0)
    second = np.diff(tr.x, 2)
    assert np.max(np.abs(second - h1 / 100.0)) < 1e-9


def test_decode_validation():
    with pytest.raises(ValueError):
        decode(np.zeros(4), 30.0, 50, 10.0)
    with pytest.raises(ValueError):
        decode_partials(np.zeros((2, 4)), 50, 10.0)


def test_decode_partials_exact_x_term():
    t = np.arange(51) / 10.0
    dx, _, _ = decode_partials(np.array([0.3, 1.0, 2.0]), 50, 10.0)
    assert np.array_equal(dx, 0.5 * t * t)


def test_decode_partials_match_finite_differences():
    h = np.array([0.4, 2.1, 1.2])
    eps = 1e-6
    _, dy2, dy3 = decode_partials(h, 50, 10.0)

    def y_of(h_z):
        return decode(h_z, 0.0, 50, 10.0).y

    fd2 = (y_of(h + [0, eps, 0]) - y_of(h - [0, eps, 0])) / (2 * eps)
    fd3 = (y_of(h + [0, 0, eps]) - y_of(h - [0, 0, eps])) / (2 * eps)
    assert np.max(np.abs(fd2 - dy2)) < 1e-7
    assert np.max(np.abs(fd3 - dy3)) < 1e-7


def test_decode_partials_batched_matches_single():
    rng = np.random.default_rng(15)
    batch = rng.normal(size=(5, 3))
    dx_b, dy2_b, dy3_b = decode_partials(batch, 50, 10.0)
    assert dx_b.shape == (5, 51)
    for i in range(5):
        dx, dy2, dy3 = decode_partials(batch[i], 50, 10.0)
        assert np.array_equal(dx_b[i], dx)
        assert np.array_equal(dy2_b[i], dy2)
        assert np.array_equal(dy3_b[i], dy3)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros(5), np.zeros(4))
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, np.inf]), np.zeros(2))
    tr = Trajectory(np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        tr.x[0] = 1.0


def test_truth_trajectory_prepends_origin():
    scen = synthesize(1, 10, seed=16)[0]
    tr = truth_trajectory(scen)
    assert tr.x[0] == 0.0 and tr.y[0] == 0.0
    assert np.array_equal(tr.x[1:], scen.future[:, 0])
    assert np.array_equal(tr.y[1:], scen.future[:, 1])


# ------------------------------------------------------------ end-to-end path

def test_select_channels():
    feats = np.arange(4 * 5 * 2, dtype=np.float64).reshape(4, 5, 2)
    assert select_channels(feats, 4) is feats
    assert np.array_equal(select_channels(feats, 2), feats[2:4])
    with pytest.raises(ValueError):
        select_channels(feats, 3)


def test_build_basis_dimensions(basis_30x9):
    assert basis_30x9.temporal.eigenvalues.shape == (30,)
    assert basis_30x9.spatial.eigenvalues.shape == (9,)
    # hub-and-spokes spectrum: 0, then 1 with multiplicity 7, then n
    w = basis_30x9.spatial.eigenvalues
    assert abs(w[0]) < 1e-9
    assert np.max(np.abs(w[1:8] - 1.0)) < 1e-9
    assert abs(w[8] - 9.0) < 1e-9


def test_scenario_spectrum_k2_uses_velocity_channels(basis_30x9):
    scen = synthesize(1, 10, seed=17, noise_std=0.05)[0]
    cfg = preset_config("gftnn", 10)
    cfg2 = dataclasses.replace(cfg, k=2)
    full = gft_extended(scen.features[2:4], basis_30x9)
    assert np.array_equal(scenario_spectrum(scen, basis_30x9, cfg2),
                          truncate_spectrum(full, cfg2.p))
    assert scenario_spectrum(scen, basis_30x9, cfg).shape == (cfg.z,)


def test_scenario_spectrum_rejects_wrong_grid(basis_30x9):
    scen = synthesize(1, 25, seed=18)[0]
    cfg = preset_config("gftnn", 10)
    with pytest.raises(ValueError, match="grid"):
        scenario_spectrum(scen, basis_30x9, cfg)


def test_scenario_basis_unweighted_is_reference():
    cfg = tiny_config()
    basis = build_basis(cfg)
    scen = manual_scenario()
    assert scenario_basis(scen, basis, cfg) is basis


def test_weighted_basis_matches_unweighted_at_unit_distance():
    # neighbours exactly 1 m from the target give unit weights, so the
    # distance-weighted spatial basis must coincide with the reference one
    scen = manual_scenario(offsets=((1.0, 0.0), (0.0, -1.0)))
    cfg_w = tiny_config(k=2, weighted=True)
    cfg_u = tiny_config(k=2, weighted=False)
    basis = build_basis(cfg_u)
    assert np.array_equal(scenario_spectrum(scen, basis, cfg_w),
                          scenario_spectrum(scen, basis, cfg_u))


def test_weighted_basis_differs_off_unit_distance():
    # distances must be *unequal*: equal distances only rescale the star
    # Laplacian, which leaves its eigenvectors (and the spectrum) unchanged
    scen = manual_scenario(offsets=((4.0, 0.0), (0.0, -1.0)))
    cfg_w = tiny_config(k=2, weighted=True)
    cfg_u = tiny_config(k=2, weighted=False)
    basis = build_basis(cfg_u)
    assert not np.array_equal(scenario_spectrum(scen, basis, cfg_w),
                              scenario_spectrum(scen, basis, cfg_u))


def test_predict_deterministic(basis_30x9):
    scen = synthesize(1, 10, seed=19, noise_std=0.05)[0]
    cfg = preset_config("gftnn", 10)
    params = init_params(cfg, 1)
    a = predict(scen, basis_30x9, params, cfg)
    b = predict(scen, basis_30x9, params, cfg)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.y, b.y)
    assert len(a) == cfg.t_pred + 1


def test_predict_rejects_rate_mismatch(basis_75x9):
    scen = synthesize(1, 10, seed=20)[0]
    cfg = preset_config("gftnn", 25)
    with pytest.raises(ValueError, match="fps"):
        predict(scen, basis_75x9, init_params(cfg, 0), cfg)


def test_predict_rejects_horizon_mismatch(basis_30x9):
    scen = synthesize(1, 10, seed=21, t_pred=4.0)[0]
    cfg = preset_config("gftnn", 10)
    with pytest.raises(ValueError, match="horizon"):
        predict(scen, basis_30x9, init_params(cfg, 0), cfg)


# ----------------------------------------------------------------- checkpoint

def test_checkpoint_roundtrip_bitwise(tmp_path):
    cfg = tiny_config()
    params = init_params(cfg, 3)
    basis = build_basis(cfg)
    opt = {
        "step": 17,
        "m": {name: np.full_like(arr, 0.125) for name, arr in params.items()},
        "v": {name: np.full_like(arr, 0.5) for name, arr in params.items()},
    }
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, cfg, basis, params, epochs_trained=5, optimizer=opt)
    ckpt = load_checkpoint(path)
    assert ckpt.config == cfg
    assert ckpt.epochs_trained == 5
    for (name, a), (_, b) in zip(params.items(), ckpt.params.items()):
        assert np.array_equal(a, b), name
    assert np.array_equal(ckpt.basis.temporal.eigenvalues,
                          basis.temporal.eigenvalues)
    assert np.array_equal(ckpt.basis.spatial.eigenvectors,
                          basis.spatial.eigenvectors)
    assert ckpt.optimizer["step"] == 17
    assert np.array_equal(ckpt.optimizer["m"]["w_h"], opt["m"]["w_h"])
    assert np.array_equal(ckpt.optimizer["v"]["w_s"], opt["v"]["w_s"])


def test_checkpoint_roundtrip_awkward_floats(tmp_path):
    cfg = tiny_config()
    params = init_params(cfg, 4)
    params.w_s[:3] = [1.0 / 3.0, np.nextafter(1.0, 2.0), 1e-308]
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, cfg, build_basis(cfg), params)
    back = load_checkpoint(path)
    assert np.array_equal(back.params.w_s, params.w_s)
    assert back.epochs_trained == 0
    assert back.optimizer is None


def test_checkpoint_rejects_wrong_version(tmp_path):
    cfg = tiny_config()
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, cfg, build_basis(cfg), init_params(cfg, 0))
    doc = json.loads(path.read_text())
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)


def test_checkpoint_rejects_missing_or_short_params(tmp_path):
    cfg = tiny_config()
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, cfg, build_basis(cfg), init_params(cfg, 0))
    doc = json.loads(path.read_text())
    del doc["params"]["w_h"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="missing parameter w_h"):
        load_checkpoint(path)
    doc = json.loads(path.read_text())
    doc["params"]["w_h"] = doc["params"]["b_h"][:2]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="wrong size"):
        load_checkpoint(path)
