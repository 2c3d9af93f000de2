import numpy as np
import pytest

from lfs.errors import ShapeError, StateError
from lfs.tsnet import (TSNetConfig, gelu, gelu_grad, load_checkpoint,
                       normalize_logits, save_checkpoint, tsnet_backward,
                       tsnet_forward, tsnet_init)

from conftest import random_sequence

SMALL = dict(dim=8, hidden=6, k1=5, k2=3, mlp_hidden=3)


def small_instance(seed=1, n=12, perturb=0.05):
    cfg = TSNetConfig(**SMALL)
    params = tsnet_init(cfg, seed)
    if perturb:
        rng = np.random.default_rng(seed + 100)
        for _, arr in params.items():
            arr += perturb * rng.standard_normal(arr.shape)
    x = random_sequence(n, cfg.dim, seed=seed + 1)
    return cfg, params, x


def test_gelu_values():
    assert gelu(0.0) == 0.0
    assert abs(gelu(1.0) - 0.8413447) < 1e-6
    assert abs(gelu(10.0) / 10.0 - 1.0) < 1e-6


def test_gelu_grad_matches_fd():
    xs = np.linspace(-3, 3, 25)
    h = 1e-6
    fd = (gelu(xs + h) - gelu(xs - h)) / (2 * h)
    np.testing.assert_allclose(gelu_grad(xs), fd, rtol=1e-6, atol=1e-8)


def test_init_deterministic():
    cfg = TSNetConfig(**SMALL)
    a, b = tsnet_init(cfg, 5), tsnet_init(cfg, 5)
    for (_, x), (_, y) in zip(a.items(), b.items()):
        np.testing.assert_array_equal(x, y)


def test_init_gate_is_identity():
    cfg = TSNetConfig(**SMALL)
    params = tsnet_init(cfg, 3)
    x = random_sequence(10, cfg.dim, seed=2)
    _, _, cache = tsnet_forward(params, cfg, x)
    np.testing.assert_array_equal(cache.gate, np.ones(cfg.hidden))
    # removing the gating block changes nothing at init
    cfg_off = TSNetConfig(**{**SMALL, "use_gating": False})
    _, s_hat_on, _ = tsnet_forward(params, cfg, x)
    _, s_hat_off, _ = tsnet_forward(params, cfg_off, x)
    np.testing.assert_array_equal(s_hat_on, s_hat_off)


def test_init_fan_in_bound():
    cfg = TSNetConfig(**SMALL)
    params = tsnet_init(cfg, 9)
    assert np.max(np.abs(params.conv1_w)) <= 1.0 / np.sqrt(cfg.dim * cfg.k1)
    assert np.max(np.abs(params.conv2_w)) <= 1.0 / np.sqrt(cfg.hidden * cfg.k2)


def test_zero_params_constant_logits():
    cfg = TSNetConfig(**SMALL)
    params = tsnet_init(cfg, 0)
    for _, arr in params.items():
        arr[...] = 0.0
    s, s_hat, _ = tsnet_forward(params, cfg, random_sequence(9, cfg.dim))
    assert np.ptp(s) == 0.0
    np.testing.assert_array_equal(s_hat, np.zeros(9))


def test_single_frame_normalizes_to_zero():
    cfg, params, _ = small_instance()
    _, s_hat, _ = tsnet_forward(params, cfg, random_sequence(1, cfg.dim, seed=4))
    np.testing.assert_array_equal(s_hat, [0.0])


def test_normalization_stats():
    cfg, params, x = small_instance(n=12)
    _, s_hat, _ = tsnet_forward(params, cfg, x)
    assert abs(s_hat.mean()) < 1e-6
    msq = (s_hat ** 2).mean()
    assert 0.99 <= msq <= 1.0


def test_dim_mismatch():
    cfg, params, _ = small_instance()
    with pytest.raises(ShapeError):
        tsnet_forward(params, cfg, random_sequence(5, cfg.dim + 1))


def test_forward_deterministic():
    cfg, params, x = small_instance()
    _, a, _ = tsnet_forward(params, cfg, x)
    _, b, _ = tsnet_forward(params, cfg, x)
    assert a.tobytes() == b.tobytes()


def test_shift_invariance():
    cfg, params, x = small_instance()
    _, s_hat, _ = tsnet_forward(params, cfg, x)
    shifted = params.copy()
    shifted.proj_b += 3.7
    _, s_hat2, _ = tsnet_forward(shifted, cfg, x)
    np.testing.assert_allclose(s_hat2, s_hat, atol=1e-10)


def test_scale_behavior():
    cfg, params, x = small_instance()
    _, s_hat, cache = tsnet_forward(params, cfg, x)
    lam = 3.0
    scaled = params.copy()
    scaled.proj_w *= lam
    scaled.proj_b *= lam
    _, s_hat2, _ = tsnet_forward(scaled, cfg, x)
    # exact eps-dependent bound: s_hat_lambda = c * (s - mu)/sqrt(var + eps)
    # with c = lam*sqrt(var+eps)/sqrt(lam^2 var + eps)
    var = cache.var
    c = lam * np.sqrt(var + cfg.eps) / np.sqrt(lam ** 2 * var + cfg.eps)
    bound = np.abs(s_hat) * abs(c - 1.0) + 1e-12
    assert np.all(np.abs(s_hat2 - s_hat) <= bound)


def test_zero_grad_in_zero_grad_out():
    cfg, params, x = small_instance()
    _, _, cache = tsnet_forward(params, cfg, x)
    grads, gx = tsnet_backward(params, cfg, cache, np.zeros(x.n_frames))
    for _, g in grads.items():
        assert np.all(g == 0.0)
    assert np.all(gx == 0.0)


def test_stale_cache_rejected():
    cfg, params, x = small_instance()
    _, _, cache = tsnet_forward(params, cfg, x)
    with pytest.raises(StateError):
        tsnet_backward(params.copy(), cfg, cache, np.zeros(x.n_frames))


def test_shift_direction_has_zero_derivative():
    # s_hat is invariant to adding a constant to s, so the directional
    # derivative of the backward pass along all-ones in s must vanish:
    # sum_t (d L / d s_t) == 0 for any upstream gradient.
    cfg, params, x = small_instance(n=16)
    _, s_hat, cache = tsnet_forward(params, cfg, x)
    rng = np.random.default_rng(0)
    g = rng.standard_normal(x.n_frames)
    r = np.sqrt(cache.var + cfg.eps)
    ds = (g - g.mean() - s_hat * (g * s_hat).mean()) / r
    assert abs(ds.sum()) < 1e-10


def _fd_param_check(cfg, params, x, seed, h=1e-3, rel_tol=1e-4):
    n = x.n_frames
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(n)
    _, _, cache = tsnet_forward(params, cfg, x)
    grads, gx = tsnet_backward(params, cfg, cache, g)

    def loss():
        _, s_hat, _ = tsnet_forward(params, cfg, x)
        return float(g @ s_hat)

    worst = 0.0
    for name, arr in params.items():
        ga = getattr(grads, name)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            # fourth-order central difference: the plain two-point stencil at
            # h=1e-3 carries O(h^2) truncation error (~1e-6 absolute here),
            # which alone exceeds rel_tol on small-gradient entries
            vals = []
            for off in (2 * h, h, -h, -2 * h):
                arr[i] = old + off
                vals.append(loss())
            arr[i] = old
            f2p, f1p, f1m, f2m = vals
            fd = (-f2p + 8 * f1p - 8 * f1m + f2m) / (12 * h)
            worst = max(worst, abs(fd - ga[i]) / max(abs(fd), abs(ga[i]), 1e-6))
    assert worst < rel_tol, f"max param rel err {worst}"
    return gx


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed):
    cfg = TSNetConfig(dim=8, hidden=5, k1=5, k2=3, mlp_hidden=2)
    params = tsnet_init(cfg, seed)
    rng = np.random.default_rng(seed + 50)
    for _, arr in params.items():
        arr += 0.05 * rng.standard_normal(arr.shape)
    x = random_sequence(16, cfg.dim, seed=seed + 7)
    _fd_param_check(cfg, params, x, seed)


def test_grad_x_matches_finite_differences():
    cfg, params, x = small_instance(n=10)
    rng = np.random.default_rng(8)
    g = rng.standard_normal(x.n_frames)
    _, _, cache = tsnet_forward(params, cfg, x)
    _, gx = tsnet_backward(params, cfg, cache, g)
    h = 1e-3
    for t in range(0, x.n_frames, 3):
        for j in range(0, cfg.dim, 3):
            old = x.data[t, j]
            x.data[t, j] = old + h
            _, sp, _ = tsnet_forward(params, cfg, x)
            x.data[t, j] = old - h
            _, sm, _ = tsnet_forward(params, cfg, x)
            x.data[t, j] = old
            fd = float(g @ sp - g @ sm) / (2 * h)
            assert abs(fd - gx[t, j]) <= 1e-3 * max(abs(fd), abs(gx[t, j]), 1e-3)


def test_normalize_logits_helper():
    s_hat, mu, var = normalize_logits([5.0], 1e-5)
    np.testing.assert_array_equal(s_hat, [0.0])
    s_hat, _, _ = normalize_logits([1.0, 2.0, 3.0], 1e-5)
    assert abs(s_hat.mean()) < 1e-12


def test_checkpoint_round_trip(tmp_path):
    cfg, params, _ = small_instance()
    path = tmp_path / "p.lfsp"
    save_checkpoint(params, cfg, path)
    loaded, loaded_cfg = load_checkpoint(path)
    assert loaded_cfg == cfg
    for (_, a), (_, b) in zip(params.items(), loaded.items()):
        assert a.tobytes() == b.tobytes()
    # rewrite must be byte-identical
    path2 = tmp_path / "q.lfsp"
    save_checkpoint(loaded, loaded_cfg, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_endianness_normalized(tmp_path):
    cfg, params, _ = small_instance()
    swapped = params.copy()
    for _, arr in swapped.items():
        arr[...] = arr  # contents identical
    # store one param as big-endian view; file bytes must not change
    be = params.copy()
    be.proj_w = be.proj_w.astype(">f8")
    pa, pb = tmp_path / "a.lfsp", tmp_path / "b.lfsp"
    save_checkpoint(params, cfg, pa)
    save_checkpoint(be, cfg, pb)
    assert pa.read_bytes() == pb.read_bytes()
