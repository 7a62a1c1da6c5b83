import numpy as np
import pytest

from vigan import diffcore as dc
from vigan.models import CategoricalMlpPolicy, GaussianMlpPolicy, ValueMlp
from vigan.rollout import AdvantageBatch
from vigan.trpo import TrpoConfig, conjugate_gradient, fisher_vector_product, surrogate_loss, trpo_step


def bandit_batch(policy, n=64, favour=0, rng=None):
    rng = rng or np.random.default_rng(0)
    obs = np.ones((n, 1))
    acts = rng.integers(2, size=(n, 1)).astype(np.float64)
    lp = np.array([policy.log_prob(o, a) for o, a in zip(obs, acts)])
    adv = np.where(acts[:, 0] == favour, 1.0, -1.0)
    return AdvantageBatch(obs, acts, lp, adv, np.zeros(n))


def gaussian_batch(policy, n=50, seed=0):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, 3))
    acts = rng.normal(size=(n, 2))
    lp = np.array([policy.log_prob(o, a) for o, a in zip(obs, acts)])
    return AdvantageBatch(obs, acts, lp, rng.normal(size=n), rng.normal(size=n))


# ------------------------------------------------------------------ surrogate


def test_surrogate_at_old_params_is_mean_advantage():
    pol = GaussianMlpPolicy(3, 2, -5, 5, np.random.default_rng(1))
    b = gaussian_batch(pol)
    assert surrogate_loss(pol, b).item() == pytest.approx(b.advantages.mean(), abs=1e-12)


def test_surrogate_zero_advantage_zero_gradient():
    pol = GaussianMlpPolicy(3, 2, -5, 5, np.random.default_rng(1))
    b = gaussian_batch(pol)
    b.advantages = np.zeros(len(b))
    for g in dc.grad(surrogate_loss(pol, b), pol.parameters()):
        assert np.all(g == 0.0)


def test_surrogate_gradient_is_policy_gradient():
    pol = GaussianMlpPolicy(3, 2, -5, 5, np.random.default_rng(1))
    b = gaussian_batch(pol)
    g_surr = dc.grad(surrogate_loss(pol, b), pol.parameters())
    pg = dc.mean(dc.mul(pol.log_prob_tensor(b.obs, b.actions), b.advantages))
    g_pg = dc.grad(pg, pol.parameters())
    for a, c in zip(g_surr, g_pg):
        np.testing.assert_allclose(a, c, atol=1e-12)


def test_bandit_surrogate_gradient_raises_favoured_logit():
    pol = CategoricalMlpPolicy(1, 2, np.random.default_rng(2), hidden=())
    b = bandit_batch(pol)
    g = np.concatenate([x.ravel() for x in dc.grad(surrogate_loss(pol, b), pol.parameters())])
    # finite-difference directional check along the gradient
    theta = pol.get_flat()
    eps = 1e-6
    pol.set_flat(theta + eps * g)
    up = surrogate_loss(pol, b).item()
    pol.set_flat(theta - eps * g)
    down = surrogate_loss(pol, b).item()
    pol.set_flat(theta)
    assert (up - down) / (2 * eps) == pytest.approx(g @ g, rel=1e-6)
    pol.set_flat(theta + 0.1 * g)
    assert pol.probs(np.ones((1, 1)))[0, 0] > 0.5


def test_surrogate_rejects_empty_batch():
    pol = CategoricalMlpPolicy(1, 2, np.random.default_rng(2))
    with pytest.raises(ValueError):
        surrogate_loss(pol, AdvantageBatch(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0), np.zeros(0), np.zeros(0)))


# ------------------------------------------------------------------ conjugate gradient


def test_cg_identity_one_iteration():
    b = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(conjugate_gradient(lambda v: v, b, iters=1), b)


def test_cg_diagonal():
    A = np.diag([1.0, 4.0])
    np.testing.assert_allclose(conjugate_gradient(lambda v: A @ v, np.array([1.0, 4.0]), iters=2), [1.0, 1.0])


def test_cg_random_spd_matches_direct_solve():
    rng = np.random.default_rng(3)
    for _ in range(5):
        M = rng.normal(size=(8, 8))
        A = M @ M.T + 0.5 * np.eye(8)
        b = rng.normal(size=8)
        x = conjugate_gradient(lambda v: A @ v, b, iters=50, tol=1e-14)
        exact = np.linalg.solve(A, b)
        assert np.linalg.norm(x - exact) / np.linalg.norm(exact) <= 1e-8


def test_cg_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        conjugate_gradient(lambda v: v * np.nan, np.ones(2))


# ------------------------------------------------------------------ Fisher-vector product


def test_fvp_zero_and_damping():
    pol = GaussianMlpPolicy(3, 2, -5, 5, np.random.default_rng(4))
    s = np.random.default_rng(5).normal(size=(20, 3))
    n = pol.num_params()
    assert np.all(fisher_vector_product(pol, s, np.zeros(n), 0.1) == 0.0)
    # damping enters additively
    v = np.random.default_rng(6).normal(size=n)
    np.testing.assert_allclose(fisher_vector_product(pol, s, v, 0.3) - fisher_vector_product(pol, s, v, 0.0),
                               0.3 * v, atol=1e-12)


def test_fvp_on_direction_with_no_curvature_returns_damping():
    pol = CategoricalMlpPolicy(2, 2, np.random.default_rng(7), hidden=())
    s = np.random.default_rng(8).normal(size=(10, 2))
    # shifting both logits' biases equally leaves the softmax unchanged
    v = np.zeros(pol.num_params())
    offset = 0
    for name, p in pol.named_parameters().items():
        if name.endswith("l0.bias"):
            v[offset:offset + p.size] = 1.0
        offset += p.size
    assert np.any(v)
    np.testing.assert_allclose(fisher_vector_product(pol, s, v, 0.2), 0.2 * v, atol=1e-12)


def test_fvp_symmetric_and_psd():
    pol = GaussianMlpPolicy(3, 2, -5, 5, np.random.default_rng(9))
    s = np.random.default_rng(10).normal(size=(30, 3))
    rng = np.random.default_rng(11)
    for _ in range(5):
        u, v = rng.normal(size=(2, pol.num_params()))
        fu, fv = fisher_vector_product(pol, s, u), fisher_vector_product(pol, s, v)
        assert v @ fu == pytest.approx(u @ fv, rel=1e-9)
        assert v @ fv >= 0.0


@pytest.mark.parametrize("kind", ["gaussian", "categorical"])
def test_fvp_matches_kl_curvature(kind):
    rng = np.random.default_rng(12)
    pol = GaussianMlpPolicy(3, 2, -5, 5, rng) if kind == "gaussian" else CategoricalMlpPolicy(3, 4, rng)
    s = rng.normal(size=(40, 3))
    v = rng.normal(size=pol.num_params())
    v /= np.linalg.norm(v)
    eps = 1e-3
    old = pol.dist_params(s)
    theta = pol.get_flat()
    pol.set_flat(theta + eps * v)
    kl = pol.kl_divergence(old, s)
    pol.set_flat(theta)
    quad = 0.5 * eps ** 2 * (v @ fisher_vector_product(pol, s, v))
    assert kl == pytest.approx(quad, rel=0.05)


def test_fvp_dimension_mismatch():
    pol = GaussianMlpPolicy(3, 2, -5, 5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        fisher_vector_product(pol, np.zeros((2, 3)), np.zeros(3))


# ------------------------------------------------------------------ full step


def test_zero_advantages_leave_policy_unchanged():
    pol = GaussianMlpPolicy(3, 2, -5, 5, np.random.default_rng(13))
    b = gaussian_batch(pol)
    b.advantages = np.zeros(len(b))
    before = pol.get_flat()
    rep = trpo_step(pol, ValueMlp(3, np.random.default_rng(0)), b, TrpoConfig())
    assert not rep.accepted
    assert np.max(np.abs(pol.get_flat() - before)) <= 1e-12


def test_bandit_step_increases_favoured_probability():
    pol = CategoricalMlpPolicy(1, 2, np.random.default_rng(14))
    b = bandit_batch(pol)
    p0 = pol.probs(np.ones((1, 1)))[0, 0]
    cfg = TrpoConfig()
    rep = trpo_step(pol, ValueMlp(1, np.random.default_rng(0)), b, cfg)
    assert rep.accepted
    assert pol.probs(np.ones((1, 1)))[0, 0] > p0
    assert rep.kl <= 1.5 * cfg.max_kl and rep.surrogate_improvement > 0


def test_accepted_steps_respect_trust_region():
    cfg = TrpoConfig(max_kl=0.005)
    for seed in range(5):
        pol = GaussianMlpPolicy(3, 2, -5, 5, np.random.default_rng(seed))
        b = gaussian_batch(pol, seed=seed)
        old = pol.dist_params(b.obs)
        before = surrogate_loss(pol, b).item()
        rep = trpo_step(pol, ValueMlp(3, np.random.default_rng(0)), b, cfg)
        if rep.accepted:
            assert pol.kl_divergence(old, b.obs) <= 1.5 * cfg.max_kl
            assert surrogate_loss(pol, b).item() > before


def test_natural_gradient_with_identity_fisher_is_vanilla_direction(monkeypatch):
    pol = GaussianMlpPolicy(3, 2, -5, 5, np.random.default_rng(15))
    b = gaussian_batch(pol)
    g = np.concatenate([x.ravel() for x in dc.grad(surrogate_loss(pol, b), pol.parameters())])
    import vigan.trpo as trpo_mod

    monkeypatch.setattr(trpo_mod, "fisher_vector_product", lambda policy, states, v, damping: v)
    theta = pol.get_flat()
    rep = trpo_step(pol, ValueMlp(3, np.random.default_rng(0)), b, TrpoConfig(max_kl=1e-4))
    if rep.accepted:
        step = pol.get_flat() - theta
        cos = step @ g / (np.linalg.norm(step) * np.linalg.norm(g))
        assert cos == pytest.approx(1.0, abs=1e-9)


def test_value_fit_reduces_error():
    rng = np.random.default_rng(16)
    pol = GaussianMlpPolicy(3, 2, -5, 5, rng)
    b = gaussian_batch(pol)
    b.value_targets = b.obs @ np.array([1.0, -1.0, 0.5])
    vf = ValueMlp(3, np.random.default_rng(1))
    before = np.mean((vf.predict(b.obs) - b.value_targets) ** 2)
    rep = trpo_step(pol, vf, b, TrpoConfig(value_fit_epochs=20))
    assert rep.value_loss < before


def test_config_validation():
    with pytest.raises(ValueError):
        TrpoConfig(max_kl=0)
    with pytest.raises(ValueError):
        TrpoConfig(cg_iters=0)
    with pytest.raises(ValueError):
        TrpoConfig(entropy_coef=-1)


def test_entropy_coef_sweep_orders_final_entropy():
    # the trust region fixes step length, so the bonus acts once it rivals the advantage signal
    obs = np.ones((1, 1))
    finals = []
    for coef in (0.0, 2.0, 5.0):
        pol = CategoricalMlpPolicy(1, 2, np.random.default_rng(17), hidden=())
        vf = ValueMlp(1, np.random.default_rng(0))
        cfg = TrpoConfig(entropy_coef=coef)
        for it in range(8):
            trpo_step(pol, vf, bandit_batch(pol, rng=np.random.default_rng(it)), cfg)
        finals.append(pol.entropy(obs))
    assert finals[0] < finals[1] < finals[2]
