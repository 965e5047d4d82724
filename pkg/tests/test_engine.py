import numpy as np
import pytest

from reference import reference_iterations
from stmp.denoisers import ChannelDenoiser, DenoiserOutput, GaussianScore
from stmp.engine import (DivergedError, NonPositiveVarianceError, activity_update,
                         damp, decide_activity, gaussian_ext, lmmse_update, run,
                         x_combine, x_project)
from stmp.model import EngineConfig, SystemConfig
from stmp.pilots import apply_pilot, build_pilot, dense_pilot


def _randc(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# lmmse_update


def test_lmmse_hand_example():
    # K=2, T=1, P=1, noise 1, v=1 gives v_post = 1 - 1/3
    cfg = SystemConfig(k=2, n=1, m=1, t=1, p=1.0)
    pilot = build_pilot(cfg, np.random.default_rng(0))
    _, v_post = lmmse_update(np.zeros((1, 1), dtype=complex), pilot,
                             np.zeros((2, 1, 1), dtype=complex), np.array([1.0]), 1.0)
    np.testing.assert_allclose(v_post, [2.0 / 3.0], atol=1e-15)


def test_lmmse_certain_prior_passes_through():
    rng = np.random.default_rng(1)
    cfg = SystemConfig(k=4, n=2, m=1, t=2)
    pilot = build_pilot(cfg, rng)
    x_pri = _randc(rng, 4, 2, 1)
    y = _randc(rng, 4, 1)
    x_post, v_post = lmmse_update(y, pilot, x_pri, np.array([1e-30]), 0.5)
    np.testing.assert_allclose(x_post, x_pri, atol=1e-25)
    assert 0 < v_post[0] <= 1e-30


def test_lmmse_matches_dense_oracle():
    rng = np.random.default_rng(2)
    cfg = SystemConfig(k=4, n=2, m=1, t=2, p=1.0)
    pilot = build_pilot(cfg, rng)
    q = dense_pilot(pilot)
    x_pri = _randc(rng, 4, 2, 1)
    y = _randc(rng, 4, 1)
    v, nv = 0.7, 0.3
    x_post, v_post = lmmse_update(y, pilot, x_pri, np.array([v]), nv)
    gram = v * (q @ q.conj().T) + nv * np.eye(4)
    expect = (x_pri.reshape(-1) + v * q.conj().T
              @ np.linalg.solve(gram, y[:, 0] - q @ x_pri.reshape(-1)))
    np.testing.assert_allclose(x_post.reshape(-1), expect, atol=1e-9)
    assert 0 < v_post[0] < v


def test_lmmse_variance_strictly_decreases():
    rng = np.random.default_rng(3)
    for _ in range(100):
        k = int(rng.integers(2, 50))
        t = int(rng.integers(1, k + 1))
        v = float(rng.uniform(1e-6, 1e3))
        p = float(rng.uniform(0.1, 10))
        nv = float(rng.uniform(1e-6, 10))
        v_post = v - t * p * v ** 2 / (k * p * v + nv)
        assert 0 < v_post < v


def test_lmmse_rejects_nonpositive_variance():
    cfg = SystemConfig(k=2, n=1, m=1, t=1)
    pilot = build_pilot(cfg, np.random.default_rng(0))
    with pytest.raises(NonPositiveVarianceError):
        lmmse_update(np.zeros((1, 1), dtype=complex), pilot,
                     np.zeros((2, 1, 1), dtype=complex), np.array([0.0]), 1.0)


# ---------------------------------------------------------------------------
# gaussian_ext


def test_ext_harmonic_identity():
    post = np.array([3.0 + 1.0j])
    pri = np.array([1.0 - 1.0j])
    mean, v_ext, clamped, bad = gaussian_ext(post, np.array([0.5]), pri,
                                             np.array([1.0]), 1e-12, 1e6)
    np.testing.assert_allclose(v_ext, [1.0])
    np.testing.assert_allclose(mean, 2 * post - pri)
    assert clamped == 0


def test_ext_equal_means_fixed_point():
    pri = np.array([0.3 + 0.4j])
    mean, _, _, _ = gaussian_ext(pri, np.array([0.2]), pri, np.array([0.9]),
                                 1e-12, 1e6)
    np.testing.assert_allclose(mean, pri, atol=1e-15)


def test_ext_uninformative_clamps_to_cap():
    mean, v_ext, clamped, bad = gaussian_ext(np.array([1.0 + 0j]), np.array([2.0]),
                                             np.array([0.5 + 0j]), np.array([1.0]),
                                             1e-12, 1e6)
    assert v_ext[0] == 1e6 and clamped == 1 and bad[0]


def test_ext_precision_identity_ulp():
    rng = np.random.default_rng(4)
    v_pri = rng.uniform(0.1, 100.0, 1000)
    v_post = v_pri * rng.uniform(0.05, 0.9, 1000)
    _, v_ext, clamped, _ = gaussian_ext(np.zeros(1000, dtype=complex), v_post,
                                        np.zeros(1000, dtype=complex), v_pri,
                                        1e-12, 1e6)
    assert clamped == 0
    lhs = 1.0 / v_ext + 1.0 / v_pri
    rhs = 1.0 / v_post
    assert np.all(np.abs(lhs - rhs) <= 4 * np.spacing(rhs))


# ---------------------------------------------------------------------------
# activity_update


def test_activity_prior_one_forces_active():
    lam_post = activity_update(np.zeros((3, 2, 1), dtype=complex), np.array([1.0]),
                               np.zeros((3, 2, 1), dtype=complex), np.array([1.0]), 1.0)
    np.testing.assert_allclose(lam_post, 1.0)


def test_activity_identical_hypotheses_keep_prior():
    rng = np.random.default_rng(5)
    x = _randc(rng, 4, 2, 3)
    lam_post = activity_update(x, np.array([0.5, 1.0, 2.0]),
                               np.zeros_like(x), np.zeros(3), 0.37)
    np.testing.assert_allclose(lam_post, 0.37, atol=1e-12)


def test_activity_matches_direct_ratio():
    rng = np.random.default_rng(6)
    k, n, m = 5, 2, 1
    x = _randc(rng, k, n, m)
    h = _randc(rng, k, n, m)
    v = rng.uniform(0.5, 2.0, m)
    tau = rng.uniform(0.5, 2.0, m)
    lam = 0.2
    lam_post = activity_update(x, v, h, tau, lam)
    for kk in range(k):
        p0, p1 = 1.0 - lam, lam
        for j in range(m):
            c0 = np.exp(-np.sum(np.abs(x[kk, :, j]) ** 2) / v[j]) / (np.pi * v[j]) ** n
            vt = v[j] + tau[j]
            c1 = np.exp(-np.sum(np.abs(x[kk, :, j] - h[kk, :, j]) ** 2) / vt) \
                / (np.pi * vt) ** n
            p0, p1 = p0 * c0, p1 * c1
        np.testing.assert_allclose(lam_post[kk], p1 / (p0 + p1), atol=1e-10)


def test_activity_monotone_in_prior():
    rng = np.random.default_rng(7)
    x = _randc(rng, 6, 3, 2)
    h = _randc(rng, 6, 3, 2)
    v = rng.uniform(0.5, 2.0, 2)
    tau = rng.uniform(0.5, 2.0, 2)
    grid = np.linspace(0.01, 0.99, 25)
    vals = np.array([activity_update(x, v, h, tau, g) for g in grid])
    assert np.all(np.diff(vals, axis=0) >= -1e-12)


def test_activity_extreme_variances_stay_finite():
    rng = np.random.default_rng(8)
    for _ in range(50):
        m = int(rng.integers(1, 4))
        v = 10.0 ** rng.uniform(-12, 6, m)
        tau = 10.0 ** rng.uniform(-12, 6, m)
        x = _randc(rng, 8, 4, m) * 10.0 ** rng.uniform(-6, 3)
        h = _randc(rng, 8, 4, m) * 10.0 ** rng.uniform(-6, 3)
        lam_post = activity_update(x, v, h, tau, 0.05)
        assert np.all(np.isfinite(lam_post))
        assert np.all((lam_post >= 0) & (lam_post <= 1))


# ---------------------------------------------------------------------------
# x_combine / x_project / damp / decide


def test_combine_uninformative_denoiser():
    rng = np.random.default_rng(9)
    x = _randc(rng, 3, 2, 1)
    h = _randc(rng, 3, 2, 1)
    x_t, v_t = x_combine(x, np.array([0.8]), h, np.array([1e18]))
    np.testing.assert_allclose(v_t, [0.8], rtol=1e-15)
    np.testing.assert_allclose(x_t, x, rtol=1e-12, atol=1e-14)


def test_combine_equal_weight_fusion():
    rng = np.random.default_rng(10)
    x = _randc(rng, 3, 2, 1)
    h = _randc(rng, 3, 2, 1)
    x_t, v_t = x_combine(x, np.array([2.0]), h, np.array([2.0]))
    np.testing.assert_allclose(v_t, [1.0])
    np.testing.assert_allclose(x_t, (x + h) / 2, atol=1e-14)


def test_combine_matches_precision_weighting():
    rng = np.random.default_rng(11)
    x = _randc(rng, 4, 3, 2)
    h = _randc(rng, 4, 3, 2)
    v = rng.uniform(0.1, 3.0, 2)
    tau = rng.uniform(0.1, 3.0, 2)
    x_t, v_t = x_combine(x, v, h, tau)
    v_expect = v * tau / (v + tau)
    np.testing.assert_allclose(v_t, v_expect, rtol=1e-12)
    np.testing.assert_allclose(x_t, (tau * x + v * h) / (v + tau), rtol=1e-12)


def test_project_extreme_lambdas():
    rng = np.random.default_rng(12)
    x_t = _randc(rng, 3, 2, 2)
    v_t = np.array([0.4, 0.9])
    x_post, v_post = x_project(np.ones(3), x_t, v_t)
    np.testing.assert_allclose(x_post, x_t)
    np.testing.assert_allclose(v_post, v_t)
    x_post, v_post = x_project(np.zeros(3), x_t, v_t)
    assert np.all(x_post == 0) and np.all(v_post == 0)


def test_project_half_lambda_moments():
    x_t = np.full((1, 1, 1), 2.0 + 0j)
    v_t = np.array([0.6])
    x_post, v_post = x_project(np.array([0.5]), x_t, v_t)
    np.testing.assert_allclose(x_post, 1.0 + 0j)
    np.testing.assert_allclose(v_post, 0.25 * 4.0 + 0.5 * 0.6)


def test_project_variance_never_negative():
    rng = np.random.default_rng(13)
    for _ in range(100):
        lam = rng.random(20)
        x_t = _randc(rng, 20, 3, 2) * 10.0 ** rng.uniform(-8, 8)
        v_t = 10.0 ** rng.uniform(-12, 6, 2)
        lamb = lam[:, None, None]
        v_elem = lamb * (1 - lamb) * np.abs(x_t) ** 2 + lamb * v_t[None, None, :]
        assert np.all(v_elem >= 0)
        _, v_post = x_project(lam, x_t, v_t)
        assert np.all(v_post >= 0)


def test_damp_limits_and_example():
    assert damp(2.0, 0.0, 1.0) == 2.0
    assert damp(2.0, 0.0, 0.5) == 1.0


def test_damp_geometric_convergence():
    target, x = 3.0, 0.0
    gamma = 0.3
    errors = []
    for _ in range(20):
        x = damp(target, x, gamma)
        errors.append(abs(x - target))
    ratios = np.array(errors[1:]) / np.array(errors[:-1])
    np.testing.assert_allclose(ratios, 1 - gamma, rtol=1e-10)


def test_decide_activity_inclusive_boundary():
    lam_post = np.array([0.9, 0.1, 0.5])
    assert decide_activity(lam_post, 0.5).tolist() == [1, 0, 1]
    assert decide_activity(np.array([0.4, 0.49]), 0.5).tolist() == [0, 0]


# ---------------------------------------------------------------------------
# run()


def _scene(cfg, sigma2, seed, lam_active=None):
    rng = np.random.default_rng(seed)
    pilot = build_pilot(cfg, rng)
    h = _randc(rng, cfg.k, cfg.n, cfg.m) * np.sqrt(sigma2 / 2)
    alpha = (rng.random(cfg.k) < cfg.lam).astype(np.int8)
    x = alpha[:, None, None] * h
    noise = _randc(rng, cfg.n * cfg.t, cfg.m) * np.sqrt(cfg.noise_var / 2)
    y = apply_pilot(pilot, x) + noise
    return pilot, x, y


def test_run_noiseless_invertible_system():
    cfg = SystemConfig(k=8, n=2, m=2, t=8, p=1.0, lam=1.0, noise_var=1e-12)
    eng = EngineConfig(max_iters=3, damping=1.0, tol=1e-300)
    pilot, x, y = _scene(cfg, 1.0, seed=20)
    den = ChannelDenoiser(GaussianScore(1.0))
    res = run(cfg, eng, pilot, y, den, truth=x, channel_power=1.0)
    assert res.trace.nmse_db[-1] < -100
    assert res.iterations <= 3


def test_run_fixed_point_matches_joint_lmmse():
    cfg = SystemConfig(k=8, n=2, m=1, t=8, p=1.0, lam=1.0, noise_var=0.1, seed=3)
    eng = EngineConfig(max_iters=30, damping=1.0, tol=1e-12)
    pilot, x, y = _scene(cfg, 1.0, seed=21)
    res = run(cfg, eng, pilot, y, ChannelDenoiser(GaussianScore(1.0)),
              channel_power=1.0)
    q = dense_pilot(pilot)
    gram = q @ q.conj().T + cfg.noise_var * np.eye(cfg.n * cfg.t)
    xhat = (q.conj().T @ np.linalg.solve(gram, y)).reshape(cfg.k, cfg.n, cfg.m)
    rel = np.linalg.norm(res.x_post - xhat) / np.linalg.norm(xhat)
    assert rel < 1e-6


def test_run_reproduces_straight_line_reference():
    # gamma = 1 with the analytic Gaussian denoiser, general lambda
    cfg = SystemConfig(k=6, n=2, m=2, t=4, p=1.3, lam=0.3, noise_var=0.2, seed=1)
    sigma2 = 0.8
    pilot, x, y = _scene(cfg, sigma2, seed=22)
    q = dense_pilot(pilot)
    v_init = cfg.lam * sigma2
    refs = reference_iterations(q, y, cfg.k, cfg.n, cfg.m, cfg.t, cfg.p,
                                cfg.noise_var, cfg.lam, sigma2, 4, v_init)
    for iters in range(1, 5):
        eng = EngineConfig(max_iters=iters, damping=1.0, tol=1e-300)
        res = run(cfg, eng, pilot, y, ChannelDenoiser(GaussianScore(sigma2)),
                  channel_power=sigma2)
        err = (np.linalg.norm(res.x_post - refs[iters - 1])
               / np.linalg.norm(refs[iters - 1]))
        assert err < 1e-10, f"iteration {iters}: {err}"


def test_run_gaussian_prior_reduction():
    # lambda = 1: every iteration must equal the Gaussian-prior reference
    cfg = SystemConfig(k=6, n=2, m=2, t=4, p=1.0, lam=1.0, noise_var=0.3, seed=2)
    sigma2 = 1.2
    pilot, x, y = _scene(cfg, sigma2, seed=23)
    q = dense_pilot(pilot)
    refs = reference_iterations(q, y, cfg.k, cfg.n, cfg.m, cfg.t, cfg.p,
                                cfg.noise_var, 1.0, sigma2, 5, sigma2)
    for iters in range(1, 6):
        eng = EngineConfig(max_iters=iters, damping=1.0, tol=1e-300)
        res = run(cfg, eng, pilot, y, ChannelDenoiser(GaussianScore(sigma2)),
                  channel_power=sigma2)
        err = (np.linalg.norm(res.x_post - refs[iters - 1])
               / np.linalg.norm(refs[iters - 1]))
        assert err < 1e-10


def test_run_damping_changes_trajectory_not_fixed_point():
    cfg = SystemConfig(k=8, n=2, m=1, t=8, p=1.0, lam=1.0, noise_var=0.1)
    pilot, x, y = _scene(cfg, 1.0, seed=24)
    res_a = run(cfg, EngineConfig(max_iters=60, damping=1.0, tol=1e-12), pilot, y,
                ChannelDenoiser(GaussianScore(1.0)), channel_power=1.0)
    res_b = run(cfg, EngineConfig(max_iters=60, damping=0.6, tol=1e-12), pilot, y,
                ChannelDenoiser(GaussianScore(1.0)), channel_power=1.0)
    assert np.linalg.norm(res_a.x_post - res_b.x_post) / np.linalg.norm(res_a.x_post) < 1e-6


def test_run_diverged_on_nonfinite_denoiser():
    cfg = SystemConfig(k=4, n=2, m=1, t=2, lam=0.5, noise_var=0.1)
    pilot, x, y = _scene(cfg, 1.0, seed=25)

    def bad_denoiser(h_pri, tau_pri):
        out = np.full_like(h_pri, np.nan)
        return DenoiserOutput(h_post=out, tau_post=np.ones(1))

    with pytest.raises(DivergedError):
        run(cfg, EngineConfig(), pilot, y, bad_denoiser)


def test_trace_lengths_and_csv():
    cfg = SystemConfig(k=8, n=2, m=2, t=4, lam=0.4, noise_var=0.05)
    eng = EngineConfig(max_iters=7, tol=1e-300)
    pilot, x, y = _scene(cfg, 1.0, seed=26)
    res = run(cfg, eng, pilot, y, ChannelDenoiser(GaussianScore(1.0)),
              truth=x, channel_power=1.0)
    tr = res.trace
    assert len(tr) == res.iterations == 7
    for attr in ("residual", "nmse_db", "v_pri_mean", "v_post_mean",
                 "tau_pri", "clamps", "ms"):
        assert len(getattr(tr, attr)) == 7
    csv = tr.to_csv()
    lines = csv.strip().split("\n")
    assert lines[0] == "iter,residual,nmse_db,v_pri_mean,v_post_mean,tau_pri,clamps,ms"
    assert len(lines) == 8


def test_iteration_count_never_exceeds_cap():
    cfg = SystemConfig(k=8, n=2, m=1, t=4, lam=0.3, noise_var=0.1)
    pilot, x, y = _scene(cfg, 1.0, seed=27)
    res = run(cfg, EngineConfig(max_iters=5, tol=1e-300), pilot, y,
              ChannelDenoiser(GaussianScore(1.0)), channel_power=1.0)
    assert res.iterations <= 5
