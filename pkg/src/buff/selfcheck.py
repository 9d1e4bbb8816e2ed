"""Standalone invariant suite behind the `buff selfcheck` stage.

Each check raises AssertionError (or any exception) on violation; the
runner reports one pass/fail line per check.  Everything here is fast
enough for interactive use.
"""
from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from . import gg
from .bayes import forward_uncertainty, init_uncertainty_net, predict_mask
from .data import bicubic_resize, degrade, gen_dataset, DatasetSpec
from .diffusion import make_schedule, posterior_step, q_marginal_variance, q_sample, residual, sample_sr
from .errors import CheckpointError
from .io import load_checkpoint, read_pgm, save_checkpoint, write_pgm
from .mask import RefineConfig, refine_mask
from .metrics import ause, sparsification
from .nets import param_count


def check_log_gamma_and_variance_identities():
    assert abs(gg.log_gamma(1.0)) < 1e-12
    assert abs(gg.log_gamma(0.5) - 0.5723649429247001) < 1e-10
    assert abs(gg.log_gamma(5.0) - 3.1780538303479458) < 1e-10
    for s in np.linspace(0.1, 10.0, 34):
        assert abs(gg.gg_variance(s, 2.0) - s * s / 2.0) < 1e-12
        assert abs(gg.gg_variance(s, 1.0) - 2.0 * s * s) < 1e-11 * max(1.0, s * s)


def check_sampler_variance():
    rng = np.random.default_rng(2024)
    n = 100_000
    p = gg.GGParams(0.0, 1.0, 1.5)
    draws = gg.gg_sample(p, rng, size=n)
    v = gg.gg_variance(1.0, 1.5)
    m4 = np.exp(gg.log_gamma(5.0 / 1.5) - gg.log_gamma(1.0 / 1.5))
    se = np.sqrt((m4 - v * v) / n)
    assert abs(draws.var() - v) < 4 * se, f"MC variance {draws.var()} vs {v}"


def check_nll_gradient_spot():
    rng = np.random.default_rng(7)
    m = rng.normal(size=(3, 3))
    a = rng.uniform(0.5, 1.5, (3, 3))
    b = rng.uniform(0.6, 2.5, (3, 3))
    y = m + 0.3
    field = gg.GGFieldParams(m, a, b)
    d_mean, d_scale, d_shape = gg.gg_nll_grad(field, y)
    h = 1e-5
    for gi, grad in enumerate((d_mean, d_scale, d_shape)):
        up = [m.copy(), a.copy(), b.copy()]
        dn = [m.copy(), a.copy(), b.copy()]
        up[gi][1, 1] += h
        dn[gi][1, 1] -= h
        fd = (gg.gg_nll(gg.GGFieldParams(*up), y) - gg.gg_nll(gg.GGFieldParams(*dn), y)) / (2 * h)
        rel = abs(grad[1, 1] - fd) / max(abs(fd), 1e-12)
        assert rel < 1e-4, f"grid {gi}: rel err {rel}"


def check_schedule_recurrences():
    s = make_schedule(1000, 1e-4, 0.05)
    assert np.all(np.diff(s.alpha_bars) < 0)
    recur = np.concatenate(([s.alphas[0]], s.alpha_bars[:-1] * s.alphas[1:]))
    assert np.abs(s.alpha_bars - recur).max() < 1e-12
    prev = np.concatenate(([1.0], s.alpha_bars[:-1]))
    expected = (1 - prev) / (1 - s.alpha_bars) * s.betas
    assert np.abs(s.posterior_betas - expected).max() < 1e-12


def check_forward_marginal_recursion():
    sched = make_schedule(20, 1e-3, 0.08)
    rng = np.random.default_rng(4)
    b = rng.uniform(0.65, 1.4, (6, 6))
    v = np.zeros((6, 6))
    for t in range(1, 21):
        v = (1 - sched.betas[t - 1]) * v + sched.betas[t - 1] * b**2
        assert np.abs(v - q_marginal_variance(t, b, sched)).max() < 1e-10


def check_degenerate_mask_reduction():
    sched = make_schedule(15, 1e-3, 0.06)
    rng = np.random.default_rng(5)
    x0 = rng.random((8, 8))
    eps = rng.standard_normal((8, 8))
    z = rng.standard_normal((8, 8))
    ones = np.ones((8, 8))
    for t in (1, 7, 15):
        i = t - 1
        ab = sched.alpha_bars[i]
        ref_q = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
        assert np.array_equal(q_sample(x0, t, ones, eps, sched), ref_q)
        mu = (x0 - sched.betas[i] / np.sqrt(1 - ab) * eps) / np.sqrt(sched.alphas[i])
        ref_p = mu + np.sqrt(sched.posterior_betas[i]) * z
        assert np.array_equal(posterior_step(x0, t, eps, ones, z, sched), ref_p)


def check_oracle_chain_inversion():
    sched = make_schedule(5, 1e-3, 0.05)
    hr = gen_dataset(DatasetSpec(count=1, size=16, scale=4, seed=77))[0]
    lr = degrade(hr, 4)
    lr_up = bicubic_resize(lr, 16, 16)
    x_r = residual(hr, lr_up)

    def oracle(x_t, t, _cond):
        abar = sched.alpha_bars[t - 1]
        return (x_t - np.sqrt(abar) * x_r) / np.sqrt(1 - abar)

    sr = sample_sr(lr, oracle, None, None, sched, None, 4, seed=5, unit_mask=True, zero_noise=True)
    err = np.mean(np.abs((sr - lr_up) - x_r))
    assert err < 1e-6, f"oracle inversion error {err}"


def check_mask_refinement_brute_force():
    cfg = RefineConfig(threshold=0.5, threshold_mode="fixed")
    m = np.linspace(-2, 3, 1000)
    out = refine_mask(m.reshape(1, -1), cfg)[0]
    assert np.all(out >= cfg.lower_bound - 1e-12)
    assert np.all(out <= cfg.upper_bound + 1e-12)
    above = m > cfg.threshold
    assert np.all(np.diff(out[above]) >= 0)
    assert np.all(np.diff(out[~above]) >= 0)
    flat = refine_mask(
        m.reshape(1, -1), RefineConfig(threshold=0.5, intensity=0.0, threshold_mode="fixed")
    )[0]
    assert set(np.unique(flat)) == {0.85, 1.2}


def check_bicubic_identities():
    rng = np.random.default_rng(6)
    img = rng.random((20, 20))
    assert np.array_equal(bicubic_resize(img, 20, 20), img)
    lhs = bicubic_resize(2.0 * img + 0.1, 13, 27)
    rhs = 2.0 * bicubic_resize(img, 13, 27) + 0.1
    assert np.abs(lhs - rhs).max() < 1e-12


def check_checkpoint_round_trip():
    rng = np.random.default_rng(8)
    tensors = {
        f"t{i}": rng.standard_normal(shape).astype(np.float32)
        for i, shape in enumerate([(3,), (2, 4), (1, 2, 3), (5, 1, 2, 2)])
    }
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.ckpt"
        save_checkpoint(path, tensors)
        loaded = load_checkpoint(path)
        for k in tensors:
            assert np.array_equal(loaded[k].view(np.uint32), tensors[k].view(np.uint32))
        bad = Path(tmp) / "bad.ckpt"
        bad.write_bytes(b"NOPE" + bytes(12))
        try:
            load_checkpoint(bad)
        except CheckpointError:
            pass
        else:
            raise AssertionError("bad magic accepted")


def check_pgm_round_trip():
    rng = np.random.default_rng(9)
    img = rng.random((9, 13))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.pgm"
        write_pgm(path, img)
        back = read_pgm(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 65535 + 1e-12


def check_sparsification_brute_force():
    errors = np.array([[1.0, 2.0, 3.0, 4.0]])
    curve = sparsification(np.zeros((1, 4)), errors, steps=2)
    assert abs(curve.error_by_uncertainty[1] - 3.5) < 1e-12
    assert abs(curve.error_by_oracle[1] - 1.5) < 1e-12
    assert abs(ause(curve) - 0.2) < 1e-12
    perfect = sparsification(errors, errors, steps=2)
    assert abs(ause(perfect)) < 1e-12


def check_uncertainty_net_contract():
    net = init_uncertainty_net(seed=3, channels=8)
    expected = (1 * 8 * 9 + 8) + (8 * 8 * 9 + 8) + 3 * (8 * 9 + 1)
    assert param_count(net) == expected
    lr = np.random.default_rng(10).random((8, 8))
    mask = predict_mask(net, lr, 2)
    assert mask.shape == (16, 16)
    assert np.all(mask > 0)
    field = forward_uncertainty(net, bicubic_resize(lr, 16, 16))
    assert np.array_equal(mask, gg.gg_variance(field.scale, field.shape))


CHECKS = [
    ("log-gamma and variance identities", check_log_gamma_and_variance_identities),
    ("generalized-gaussian sampler variance", check_sampler_variance),
    ("nll analytic gradient spot check", check_nll_gradient_spot),
    ("schedule recurrences", check_schedule_recurrences),
    ("forward marginal recursion", check_forward_marginal_recursion),
    ("degenerate mask reduction", check_degenerate_mask_reduction),
    ("oracle chain inversion", check_oracle_chain_inversion),
    ("mask refinement brute force", check_mask_refinement_brute_force),
    ("bicubic identities", check_bicubic_identities),
    ("checkpoint round trip", check_checkpoint_round_trip),
    ("pgm round trip", check_pgm_round_trip),
    ("sparsification brute force", check_sparsification_brute_force),
    ("uncertainty net contract", check_uncertainty_net_contract),
]


def run_all():
    """Run every check; returns (name, ok, detail) tuples."""
    results = []
    for name, fn in CHECKS:
        try:
            fn()
            results.append((name, True, ""))
        except Exception as exc:  # report, never abort the suite
            results.append((name, False, f"{type(exc).__name__}: {exc}"))
    return results
