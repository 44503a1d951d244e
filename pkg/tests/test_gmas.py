import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmaslab import diffcore as dc
from gmaslab.diffcore import Graph, Tensor
from gmaslab.gmas import (distance, grad_at_depth, grad_plan, grad_q, loss_gmas, loss_td,
                          loss_modelfree_total, per_depth_slopes)
from gmaslab.mazeenv import TransitionBatch
from gmaslab.oracles import central_diff, path_value, random_model, rel_err
from gmaslab.planner import PlanConfig, best_actions
from gmaslab.verify import mode_gap_error, recursion_error, second_order_error


def batch_for(nets, n=5, seed=0):
    rng = np.random.default_rng(seed)
    d = nets.config.obs_dim
    return TransitionBatch(rng.uniform(-1, 1, (n, d)), rng.integers(4, size=n),
                           rng.choice([1.0, -0.1], n), rng.choice([0.0, 0.9], n),
                           rng.uniform(-1, 1, (n, d)))


def test_depth_zero_slope_matches_differences():
    nets = random_model(1)
    x = np.array([0.3, -0.2, 0.5])
    fd = central_diff(lambda v: nets.q_values(v[None], True).data[0, 2], x)
    assert rel_err(grad_at_depth(nets, x, 2, 0, None), fd) < 1e-6


def test_depth_one_slope_matches_differences():
    nets = random_model(2)
    x = np.array([-0.4, 0.1, 0.6])
    best = best_actions(nets, x, 1, 1, frozen=True)
    fd = central_diff(lambda v: path_value(nets, v, (1, int(best[1])), frozen=True), x)
    assert rel_err(grad_at_depth(nets, x, 1, 1, best), fd) < 1e-6


@pytest.mark.parametrize("d", [0, 1, 2, 3])
@pytest.mark.parametrize("seed", range(8))
def test_recursion_matches_differences(seed, d):
    assert recursion_error(7000 + seed, d) < 1e-3


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("seed", range(4))
def test_jacobian_modes_differ_by_child_term(seed, d):
    assert mode_gap_error(8000 + seed, d) < 1e-12


def test_literal_jacobian_mode_differs_from_residual():
    nets = random_model(3)
    x = np.array([0.2, 0.2, -0.3])
    best = best_actions(nets, x, 0, 2, frozen=True)
    assert not np.allclose(grad_at_depth(nets, x, 0, 2, best, "residual"),
                           grad_at_depth(nets, x, 0, 2, best, "paper"))


def test_missing_backup_actions_rejected():
    nets = random_model(4)
    with pytest.raises(ValueError, match="missing"):
        grad_at_depth(nets, np.zeros(3), 0, 2, {2: 1})


def test_batched_slopes_match_single_rows():
    nets = random_model(5)
    xs = np.random.default_rng(5).uniform(-1, 1, (4, 3))
    a = np.array([0, 1, 2, 3])
    best = best_actions(nets, xs, a, 2, frozen=True)
    batched = grad_at_depth(nets, xs, a, 2, best)
    for i in range(4):
        row = {k: int(v[i]) for k, v in best.items()}
        np.testing.assert_allclose(batched[i], grad_at_depth(nets, xs[i], a[i], 2, row),
                                   rtol=1e-12, atol=1e-14)


def test_grad_plan_depth_zero_is_frozen_q_slope():
    nets = random_model(6)
    xs = np.random.default_rng(6).uniform(-1, 1, (3, 3))
    a = np.array([0, 2, 3])
    np.testing.assert_array_equal(grad_plan(nets, xs, a, PlanConfig(0)), grad_q(nets, xs, a))
    np.testing.assert_array_equal(grad_plan(nets, xs, a, PlanConfig(0, gamma_prime=0.5)),
                                  grad_q(nets, xs, a))


def test_grad_plan_averages_depths():
    nets = random_model(7)
    xs = np.random.default_rng(7).uniform(-1, 1, (3, 3))
    a = np.array([1, 1, 0])
    s = per_depth_slopes(nets, xs, a, PlanConfig(2))
    np.testing.assert_allclose(grad_plan(nets, xs, a, PlanConfig(2)), (s[0] + s[1] + s[2]) / 3,
                               rtol=1e-15)
    np.testing.assert_allclose(grad_plan(nets, xs, a, PlanConfig(2, gamma_prime=1.0)),
                               (s[0] + s[1] + s[2]) / 3, rtol=1e-15)
    np.testing.assert_allclose(grad_plan(nets, xs, a, PlanConfig(2, gamma_prime=0.5)),
                               (s[0] + 0.5 * s[1] + 0.25 * s[2]) / 1.75, rtol=1e-15)


@pytest.mark.parametrize("u,v,expected", [
    ([1.0, 2.0, 0.0], [2.0, 4.0, 0.0], 0.0),
    ([1.0, 0.0, 0.0], [0.0, 3.0, 0.0], 1.0),
    ([1.0, -1.0, 2.0], [-2.0, 2.0, -4.0], 2.0),
])
def test_cosine_distance_values(u, v, expected):
    assert abs(distance(np.array([u]), np.array([v]), "cosine").item() - expected) <= 1e-12


def test_cosine_degenerate_is_one():
    assert distance(np.zeros((1, 3)), np.ones((1, 3)), "cosine").item() == 1.0
    assert distance(np.full((1, 3), 1e-10), np.ones((1, 3)), "cosine").item() == 1.0


def test_l2_distance():
    assert distance(np.array([[3.0, 0.0]]), np.array([[0.0, 4.0]]), "l2").item() == 5.0
    with pytest.raises(ValueError):
        distance(np.ones((1, 2)), np.ones((1, 2)), "l1")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.01, 100))
def test_cosine_bounds_and_scale_invariance(u, v, c):
    u, v = np.array([u]), np.array([v])
    d = distance(u, v, "cosine").item()
    assert -1e-12 <= d <= 2 + 1e-12
    if min(np.linalg.norm(u), np.linalg.norm(v)) > 1e-3:
        assert distance(c * u, v, "cosine").item() == pytest.approx(d, abs=1e-9)


@pytest.mark.parametrize("kind", ["cosine", "l2"])
@pytest.mark.parametrize("seed", range(3))
def test_second_order_gradient_matches_differences(seed, kind):
    assert second_order_error(9000 + seed, kind) < 1e-3


def test_loss_is_linear_in_alpha():
    nets = random_model(8)
    b = batch_for(nets)
    with Graph():
        l1 = loss_gmas(nets, b, PlanConfig(1), 0.05).item()
        l2 = loss_gmas(nets, b, PlanConfig(1), 0.10).item()
    assert l2 == pytest.approx(2 * l1, rel=1e-12)


def test_loss_vanishes_when_live_equals_frozen_at_depth_zero():
    nets = random_model(9)
    nets.sync_frozen()
    b = batch_for(nets)
    with Graph():
        assert loss_gmas(nets, b, PlanConfig(0), 1.0, "l2").item() == 0.0
        assert loss_gmas(nets, b, PlanConfig(0), 1.0, "cosine").item() == pytest.approx(0, abs=1e-12)


def test_loss_needs_positive_alpha_and_graph():
    nets = random_model(10)
    b = batch_for(nets)
    with pytest.raises(RuntimeError):
        loss_gmas(nets, b, PlanConfig(0), 0.05)
    with Graph(), pytest.raises(ValueError):
        loss_gmas(nets, b, PlanConfig(0), 0.0)


@pytest.mark.parametrize("kind", ["cosine", "l2"])
def test_loss_gradient_over_q_params_matches_differences(kind):
    nets = random_model(11)
    b = batch_for(nets, n=4, seed=11)
    cfg = PlanConfig(1)
    with Graph():
        target = grad_plan(nets, nets.encode(b.s).data, b.a, cfg)
    params = nets.q.parameters()

    def value():
        with Graph():
            return loss_gmas(nets, b, cfg, 0.05, kind, target=target).item()

    with Graph():
        grads = dc.gradient(loss_gmas(nets, b, cfg, 0.05, kind, target=target), params)
    rng = np.random.default_rng(0)
    for p, g in zip(params, grads):
        coords = rng.choice(p.size, size=min(5, p.size), replace=False)
        saved = p.data.copy()

        def f(v, p=p):
            p.data = v
            return value()

        fd = central_diff(f, saved, coords=coords)
        p.data = saved
        assert rel_err(g.data.reshape(-1)[coords], fd) < 1e-3


def test_alpha_zero_total_is_td():
    nets = random_model(12)
    b = batch_for(nets)
    with Graph():
        total = loss_modelfree_total(nets, b, PlanConfig(1), 0.0).item()
        td = loss_td(nets, b).item()
    assert total == td


def test_total_at_least_td():
    nets = random_model(13)
    b = batch_for(nets)
    with Graph():
        td = loss_td(nets, b).item()
        for alpha in (0.01, 0.05, 1.0):
            assert loss_modelfree_total(nets, b, PlanConfig(1), alpha).item() >= td


def test_target_slope_is_constant_in_loss():
    """Only the live Q and encoder receive gradient from the matching term."""
    nets = random_model(14)
    b = batch_for(nets)
    with Graph():
        loss = loss_gmas(nets, b, PlanConfig(1), 0.05)
        heads = nets.reward.parameters() + nets.discount.parameters() + nets.transition.parameters()
        grads = dc.gradient(loss, heads + nets.q_frozen.parameters())
        live = dc.gradient(loss, nets.q.parameters() + nets.encoder.parameters())
    assert all(not np.any(g.data) for g in grads)
    assert any(np.any(g.data) for g in live)


def test_slope_uses_abstract_state_only():
    nets = random_model(15)
    b = batch_for(nets)
    x = Tensor(nets.encode(b.s).data, requires_grad=True)
    with Graph():
        loss = loss_gmas(nets, b, PlanConfig(0), 1.0, "l2", x=x)
        gx = dc.gradient(loss, x)
    assert gx.shape == (5, 3)
