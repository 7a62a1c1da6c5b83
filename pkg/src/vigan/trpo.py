"""Trust-region policy optimization with a natural-gradient step."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Adam, Tensor
from .rollout import AdvantageBatch


@dataclass
class TrpoConfig:
    max_kl: float = 0.01
    cg_iters: int = 10
    cg_damping: float = 0.1
    line_search_backtracks: int = 10
    line_search_accept_ratio: float = 0.1
    value_fit_epochs: int = 5
    value_learning_rate: float = 1e-3
    value_minibatch: int = 64
    entropy_coef: float = 0.0
    gae_lambda: float = 0.95

    def __post_init__(self):
        if not self.max_kl > 0:
            raise ValueError("max_kl must be > 0")
        if self.cg_iters < 1:
            raise ValueError("cg_iters must be >= 1")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be >= 0")
        if self.line_search_backtracks < 1:
            raise ValueError("line_search_backtracks must be >= 1")
        if self.value_fit_epochs < 0 or self.value_minibatch < 1:
            raise ValueError("value fit needs epochs >= 0 and minibatch >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrpoReport:
    surrogate_improvement: float = 0.0
    kl: float = 0.0
    line_search_steps: int = 0
    cg_residual: float = 0.0
    accepted: bool = False
    value_loss: float = 0.0


def surrogate_loss(policy, batch: AdvantageBatch, entropy_coef: float = 0.0) -> Tensor:
    """Importance-weighted advantage plus entropy bonus (an objective to maximize)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    lp = policy.log_prob_tensor(batch.obs, batch.actions)
    ratio = dc.exp(dc.sub(lp, batch.log_probs))
    out = dc.mean(dc.mul(ratio, batch.advantages))
    if entropy_coef:
        out = dc.add(out, dc.mul(policy.entropy_tensor(batch.obs), entropy_coef))
    if not np.isfinite(out.item()):
        raise ValueError("non-finite surrogate objective")
    return out


def conjugate_gradient(apply_A, b: np.ndarray, iters: int = 10, tol: float = 1e-10) -> np.ndarray:
    """Approximately solve A x = b for symmetric positive semi-definite A.

    Stops once ||A x - b|| <= tol * ||b||; otherwise returns the iterate with
    the smallest residual seen.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    b_norm = math.sqrt(rr)
    best, best_res = x.copy(), b_norm
    if b_norm == 0.0:
        return x
    for _ in range(iters):
        Ap = np.asarray(apply_A(p), dtype=np.float64)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp):
            raise ValueError("non-finite value in conjugate gradient")
        if pAp <= 0.0:
            break
        alpha = rr / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = float(r @ r)
        res = math.sqrt(rr_new)
        if res < best_res:
            best, best_res = x.copy(), res
        if res <= tol * b_norm:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return best


def fisher_vector_product(policy, states: np.ndarray, v: np.ndarray, damping: float = 0.0) -> np.ndarray:
    """(F + damping I) v with F the Hessian of the mean KL at the current parameters."""
    return policy.fisher_vector_product(states, np.asarray(v, dtype=np.float64), damping)


def _surrogate_value(policy, batch, entropy_coef) -> float:
    with dc.no_grad():
        return surrogate_loss(policy, batch, entropy_coef).item()


def fit_value(value_fn, obs: np.ndarray, targets: np.ndarray, config: TrpoConfig, rng: np.random.Generator,
              optimizer: Adam | None = None) -> float:
    """Minibatch Adam on squared error; returns the final full-batch loss."""
    opt = optimizer or Adam(value_fn.parameters(), lr=config.value_learning_rate)
    n = len(obs)
    for _ in range(config.value_fit_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.value_minibatch):
            idx = order[start:start + config.value_minibatch]
            err = dc.sub(value_fn.forward(obs[idx]), targets[idx])
            dc.backward(dc.mean(dc.mul(err, err)))
            opt.step()
    pred = value_fn.predict(obs)
    return float(np.mean((pred - targets) ** 2))


def trpo_step(policy, value_fn, batch: AdvantageBatch, config: TrpoConfig, rng: np.random.Generator | None = None,
              value_optimizer: Adam | None = None) -> TrpoReport:
    """One natural-gradient policy update followed by a value-function fit."""
    rng = rng if rng is not None else np.random.default_rng(0)
    report = TrpoReport()
    params = policy.parameters()
    theta0 = policy.get_flat()
    old = policy.dist_params(batch.obs)

    surr = surrogate_loss(policy, batch, config.entropy_coef)
    surr0 = surr.item()
    g = np.concatenate([x.ravel() for x in dc.grad(surr, params)])

    if np.any(g != 0.0):
        def fvp(v):
            return fisher_vector_product(policy, batch.obs, v, config.cg_damping)

        x = conjugate_gradient(fvp, g, config.cg_iters)
        report.cg_residual = float(np.linalg.norm(fvp(x) - g))
        xFx = float(x @ fvp(x))
        if xFx > 0:
            full_step = math.sqrt(2.0 * config.max_kl / xFx) * x
            expected = float(g @ full_step)
            for i in range(config.line_search_backtracks):
                frac = 0.5 ** i
                policy.set_flat(theta0 + frac * full_step)
                improve = _surrogate_value(policy, batch, config.entropy_coef) - surr0
                kl = policy.kl_divergence(old, batch.obs)
                report.line_search_steps = i + 1
                if np.isfinite(kl) and kl <= config.max_kl and improve > 0 \
                        and improve >= config.line_search_accept_ratio * expected * frac:
                    report.accepted, report.kl, report.surrogate_improvement = True, kl, improve
                    break
            if not report.accepted:
                policy.set_flat(theta0)

    report.value_loss = fit_value(value_fn, batch.obs, batch.value_targets, config, rng, value_optimizer)
    return report
