"""Training loop, finite differences and search helpers."""

import numpy as np
import pytest

from mgtune.optimize import (
    TrainConfig,
    batch_loss,
    best_omega,
    coordinate_grid_search,
    fd_gradient,
    gradient,
    local_search,
    make_operator,
    omega_sweep,
    param_count,
    theta_to_spec,
    train,
)
from mgtune.problem import sample_seeds
from mgtune.smoothers import FOUR_COLOR, JACOBI, SmootherSpec, build_smoother_matrix
from mgtune.spectral import build_two_grid_propagator, gelfand_loss
from mgtune.transfer import make_prolongation


def small_config(**kw):
    base = dict(m=8, alpha=10, delta=0.01, pool_size=20, batch_size=5,
                max_epochs=8, seed=3, estimator="dense", val_every=4)
    base.update(kw)
    return TrainConfig(**base)


def test_param_count_and_spec_mapping():
    assert param_count(FOUR_COLOR) == 4
    assert param_count(JACOBI) == 1
    spec = theta_to_spec(FOUR_COLOR, [0.7, 1.1, 1.1, 1.0])
    assert spec == SmootherSpec.four_color(0.7, 1.1, 1.1, 1.0)
    assert theta_to_spec(JACOBI, [0.9]) == SmootherSpec.jacobi(0.9)
    with pytest.raises(ValueError):
        theta_to_spec(FOUR_COLOR, [1.0])


def test_batch_loss_matches_direct_propagator_norm():
    """The batched objective must equal the mean squared alpha-power norm
    computed independently from dense propagators."""
    config = small_config()
    ops = [make_operator(config, s) for s in sample_seeds(11, 3)]
    theta = np.array([0.8, 1.0, 1.1, 0.95])
    got = batch_loss(theta, ops, config)
    spec = theta_to_spec(config.smoother_kind, theta)
    ref = 0.0
    for A in ops:
        P = make_prolongation(config.prolongation, A)
        T = build_two_grid_propagator(A, P, spec, config.nu).matrix
        ref += gelfand_loss(T, config.alpha) ** 2
    ref /= len(ops)
    assert got == pytest.approx(ref, rel=1e-10)


def test_probe_estimator_tracks_dense():
    dense_cfg = small_config(m=16, estimator="dense")
    probe_cfg = small_config(m=16, estimator="probes", probes=64)
    ops = [make_operator(dense_cfg, s) for s in sample_seeds(13, 4)]
    theta = np.array([0.75, 1.1, 1.1, 1.02])
    exact = batch_loss(theta, ops, dense_cfg)
    est = batch_loss(theta, ops, probe_cfg)
    # Unbiased randomized estimate with 64 probes: expect ~10% agreement.
    assert est == pytest.approx(exact, rel=0.35)


def test_fd_gradient_exact_on_quadratic():
    c = np.array([0.3, -0.2, 1.5])

    def f(x):
        return float(np.sum((x - c) ** 2))

    g = fd_gradient(f, np.zeros(3), h=1e-5)
    assert np.allclose(g, -2 * c, atol=1e-8)
    assert np.allclose(fd_gradient(lambda x: x[0] * x[1], np.zeros(2), 1e-5),
                       [0.0, 0.0], atol=1e-10)


def test_fd_gradient_matches_richardson_on_gelfand_loss():
    config = small_config()
    ops = [make_operator(config, s) for s in sample_seeds(17, 2)]
    theta = np.array([0.8, 1.05, 1.1, 0.95])

    def f(t):
        return batch_loss(t, ops, config)

    g = gradient(theta, ops, config)
    # 4-point Richardson stencil, one order higher than the implementation.
    rich = np.zeros(4)
    h = 1e-3
    for i in range(4):
        e = np.zeros(4)
        e[i] = 1.0
        rich[i] = (f(theta - 2 * h * e) - 8 * f(theta - h * e)
                   + 8 * f(theta + h * e) - f(theta + 2 * h * e)) / (12 * h)
    assert np.abs(g - rich).max() <= 1e-4 * max(1.0, np.abs(rich).max())


def test_fd_gradient_overflow_fallback():
    def f(x):
        if x[0] > 1.0:
            return float("inf")
        return float(x[0] ** 2)

    g = fd_gradient(f, np.array([1.0 - 5e-7]), h=1e-5)
    assert np.isfinite(g[0])
    assert g[0] == pytest.approx(2.0, rel=1e-2)


def test_train_zero_epochs_returns_start():
    theta0 = np.array([0.9, 1.0, 1.1, 1.05])
    theta, trace = train(theta0, small_config(max_epochs=0))
    assert np.array_equal(theta, theta0)
    assert len(trace.epochs) == 0


def test_train_reduces_validation_loss_and_is_deterministic():
    theta0 = np.ones(4)
    cfg = small_config(max_epochs=20, lr=0.03)
    t1, tr1 = train(theta0, cfg)
    t2, tr2 = train(theta0, cfg)
    assert np.array_equal(t1, t2)
    assert np.array_equal(tr1.val_loss, tr2.val_loss, equal_nan=True)
    seen = tr1.val_loss[np.isfinite(tr1.val_loss)]
    assert seen[-1] < seen[0]
    assert np.all((t1 >= cfg.clip_lo) & (t1 <= cfg.clip_hi))


def test_train_respects_clip_box():
    cfg = small_config(max_epochs=6, lr=5.0, clip_lo=0.4, clip_hi=1.6)
    theta, _ = train(np.ones(4), cfg)
    assert np.all(theta >= 0.4)
    assert np.all(theta <= 1.6)


def test_train_trace_csv(tmp_path):
    _, trace = train(np.ones(4), small_config(max_epochs=8))
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("epoch,train_loss,val_loss,theta_1")
    assert len(lines) > 1


def test_refine_steps_polish():
    cfg = small_config(max_epochs=12, refine_steps=(0.02, 0.01))
    plain = small_config(max_epochs=12)
    theta_r, _ = train(np.ones(4), cfg)
    theta_p, _ = train(np.ones(4), plain)
    ops = [make_operator(cfg, s) for s in sample_seeds((cfg.seed, 1), 20)]
    assert batch_loss(theta_r, ops, cfg) <= batch_loss(theta_p, ops, cfg) + 1e-12


def test_local_search_on_synthetic_bowl():
    calls = []

    def rate(theta):
        calls.append(tuple(theta))
        return float(np.sum((np.asarray(theta) - 0.5) ** 2)) + 0.1

    theta, best = local_search(np.array([0.56, 0.44]), 0.01, rate)
    assert np.allclose(theta, [0.5, 0.5], atol=1e-12)
    assert best == pytest.approx(0.1)
    # Cached evaluations: no lattice point is measured twice.
    assert len(calls) == len(set(calls))


def test_local_search_stops_at_local_optimum():
    def rate(theta):
        return float(np.sum(np.asarray(theta) ** 2)) + 0.2

    start = np.zeros(3)
    theta, best = local_search(start, 0.05, rate)
    assert np.array_equal(theta, start)
    assert best == pytest.approx(0.2)


def test_coordinate_grid_search_finds_lattice_argmin():
    def rate(theta):
        t = np.asarray(theta)
        return 0.15 + (t[0] - 0.73) ** 2 + 0.5 * (t[1] - 1.1) ** 2

    theta, best = coordinate_grid_search(
        [(0.5, 1.0), (0.8, 1.4)], 0.01, rate, restarts=2, seed=1)
    assert theta[0] == pytest.approx(0.73, abs=0.011)
    assert theta[1] == pytest.approx(1.10, abs=0.011)
    assert best <= rate([0.74, 1.11])


def test_omega_sweep_table_and_divergence_flags():
    def rate(omega):
        if omega > 1.9:
            return float("inf")
        return 0.3 + (omega - 1.1) ** 2

    omegas = np.round(np.arange(0.8, 2.01, 0.1), 10)
    rows = omega_sweep(omegas, rate)
    assert len(rows) == len(omegas)
    flagged = [r for r in rows if r.diverged]
    assert {round(r.omega, 1) for r in flagged} == {2.0}
    best = best_omega(rows)
    assert best.omega == pytest.approx(1.1)
    assert not best.diverged


def test_make_operator_poisson_mode():
    cfg = small_config(poisson=True)
    A1 = make_operator(cfg, 1)
    A2 = make_operator(cfg, 999)
    assert np.array_equal(A1.stencils, A2.stencils)


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(batch_size=0)
    with pytest.raises(ValueError):
        small_config(alpha=0)
    with pytest.raises(ValueError):
        small_config(val_fraction=1.5)
    with pytest.raises(ValueError):
        small_config(clip_lo=2.0, clip_hi=1.0)
