"""Network architectures: policies, value function, discriminators, TCN encoder."""

from __future__ import annotations

import math

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

LOG_2PI = math.log(2.0 * math.pi)
DISC_EPS = 1e-7


def _he(rng: np.random.Generator, fan_in: int, shape, scale: float = 1.0) -> np.ndarray:
    return rng.normal(size=shape) * math.sqrt(2.0 / fan_in) * scale


class Module:
    """Named-parameter bookkeeping shared by every model."""

    def named_parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(state) != set(params):
            raise KeyError(f"parameter names differ: missing {sorted(set(params) - set(state))}, "
                           f"unexpected {sorted(set(state) - set(params))}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data[...] = state[k]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        if flat.size != self.num_params():
            raise ValueError(f"flat vector has {flat.size} entries, model has {self.num_params()}")
        i = 0
        for p in self.parameters():
            p.data[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def unflatten(self, flat: np.ndarray) -> list[np.ndarray]:
        out, i = [], 0
        for p in self.parameters():
            out.append(flat[i:i + p.size].reshape(p.shape))
            i += p.size
        return out


class Mlp(Module):
    """Fully connected net with ReLU hidden layers and a linear output."""

    def __init__(self, sizes, rng: np.random.Generator, out_scale: float = 1.0):
        self.sizes = tuple(sizes)
        self.weights, self.biases = [], []
        n_layers = len(sizes) - 1
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = out_scale if i == n_layers - 1 else 1.0
            self.weights.append(Tensor(_he(rng, a, (a, b), scale), requires_grad=True))
            self.biases.append(Tensor(np.zeros(b), requires_grad=True))

    def named_parameters(self):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"l{i}.weight"] = w
            out[f"l{i}.bias"] = b
        return out

    def forward(self, x: Tensor) -> Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = dc.add(dc.matmul(h, w), b)
            if i < last:
                h = dc.relu(h)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward pass for rollouts."""
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def jvp(self, x: np.ndarray, tangents: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """Output and its directional derivative along a parameter tangent.

        ``tangents`` follows ``parameters()`` order (weight, bias per layer).
        """
        h, dh = x, np.zeros_like(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            dw, db = tangents[2 * i], tangents[2 * i + 1]
            z = h @ w.data + b.data
            dz = dh @ w.data + h @ dw + db
            if i < last:
                mask = z > 0
                h, dh = np.where(mask, z, 0.0), dz * mask
            else:
                h, dh = z, dz
        return h, dh


def _check_states(states: np.ndarray, dim: int) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    if states.shape[-1] != dim:
        raise ValueError(f"state dimension {states.shape[-1]} does not match policy input {dim}")
    if not np.all(np.isfinite(states)):
        raise ValueError("non-finite state")
    return states


class GaussianMlpPolicy(Module):
    """Diagonal Gaussian policy with a state-independent log standard deviation."""

    discrete = False

    def __init__(self, state_dim: int, action_dim: int, low, high, rng: np.random.Generator,
                 hidden=(64, 64), init_log_std: float = 0.0):
        self.state_dim, self.action_dim = state_dim, action_dim
        self.low = np.broadcast_to(np.asarray(low, dtype=np.float64), (action_dim,)).copy()
        self.high = np.broadcast_to(np.asarray(high, dtype=np.float64), (action_dim,)).copy()
        self.net = Mlp((state_dim, *hidden, action_dim), rng, out_scale=0.01)
        self.log_std = Tensor(np.full(action_dim, init_log_std), requires_grad=True)

    def named_parameters(self):
        out = {f"mean.{k}": v for k, v in self.net.named_parameters().items()}
        out["log_std"] = self.log_std
        return out

    def act(self, state, rng: np.random.Generator, deterministic: bool = False):
        state = _check_states(state, self.state_dim)
        mean = self.net.predict(state[None])[0]
        if deterministic:
            sample = mean
        else:
            sample = mean + np.exp(self.log_std.data) * rng.standard_normal(self.action_dim)
        logp = self._log_density(sample[None], mean[None])[0]
        return np.clip(sample, self.low, self.high), float(logp)

    def _log_density(self, actions, means):
        ls = self.log_std.data
        z = (actions - means) * np.exp(-ls)
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(ls) - 0.5 * self.action_dim * LOG_2PI

    def dist_params(self, states: np.ndarray):
        states = _check_states(states, self.state_dim)
        return self.net.predict(states), self.log_std.data.copy()

    # differentiable pieces used by the trust-region update and BC

    def log_prob_tensor(self, states: np.ndarray, actions: np.ndarray) -> Tensor:
        mean = self.net.forward(Tensor(states))
        z = dc.mul(dc.sub(Tensor(actions), mean), dc.exp(dc.neg(self.log_std)))
        quad = dc.mul(dc.sum(dc.mul(z, z), axis=1), -0.5)
        return dc.sub(quad, dc.add(dc.sum(self.log_std), 0.5 * self.action_dim * LOG_2PI))

    def entropy_tensor(self, states: np.ndarray) -> Tensor:
        return dc.add(dc.sum(self.log_std), 0.5 * self.action_dim * (LOG_2PI + 1.0))

    def kl_tensor(self, old, states: np.ndarray) -> Tensor:
        """Mean KL(old || current) over the batch."""
        old_mean, old_log_std = old
        mean = self.net.forward(Tensor(states))
        old_var = np.exp(2.0 * old_log_std)
        diff = dc.sub(Tensor(old_mean), mean)
        inv_var = dc.exp(dc.mul(self.log_std, -2.0))
        num = dc.add(dc.mul(diff, diff), old_var)
        per_dim = dc.add(dc.sub(self.log_std, old_log_std),
                         dc.sub(dc.mul(dc.mul(num, inv_var), 0.5), 0.5))
        return dc.mean(dc.sum(per_dim, axis=1))

    def fisher_vector_product(self, states: np.ndarray, v: np.ndarray, damping: float = 0.0) -> np.ndarray:
        """(F + damping·I) v, F the Fisher matrix of the mean KL at the current parameters."""
        if v.shape != (self.num_params(),):
            raise ValueError(f"vector has shape {v.shape}, expected ({self.num_params()},)")
        states = _check_states(states, self.state_dim)
        n_net = self.net.num_params()
        _, dmean = self.net.jvp(states, self.net.unflatten(v[:n_net]))
        u = dmean * np.exp(-2.0 * self.log_std.data) / len(states)
        out = self.net.forward(Tensor(states))
        g_net = dc.grad(dc.sum(dc.mul(out, u)), self.net.parameters())
        fv = np.concatenate([g.ravel() for g in g_net] + [2.0 * v[n_net:]])
        return fv + damping * v

    # plain-number conveniences

    def log_prob(self, state, action) -> float:
        state = _check_states(state, self.state_dim)
        return float(self._log_density(np.atleast_2d(action), self.net.predict(state[None]))[0])

    def entropy(self, states=None) -> float:
        return float(np.sum(self.log_std.data) + 0.5 * self.action_dim * (LOG_2PI + 1.0))

    def kl_divergence(self, old, states) -> float:
        with dc.no_grad():
            return self.kl_tensor(old, _check_states(states, self.state_dim)).item()


class CategoricalMlpPolicy(Module):
    discrete = True

    def __init__(self, state_dim: int, n_actions: int, rng: np.random.Generator, hidden=(64, 64)):
        self.state_dim, self.n_actions = state_dim, n_actions
        self.action_dim = 1
        self.net = Mlp((state_dim, *hidden, n_actions), rng, out_scale=0.01)

    def named_parameters(self):
        return {f"logits.{k}": v for k, v in self.net.named_parameters().items()}

    @staticmethod
    def _log_softmax(logits: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def probs(self, states: np.ndarray) -> np.ndarray:
        return np.exp(self._log_softmax(self.net.predict(np.atleast_2d(states))))

    def act(self, state, rng: np.random.Generator, deterministic: bool = False):
        state = _check_states(state, self.state_dim)
        logp = self._log_softmax(self.net.predict(state[None]))[0]
        if deterministic:
            a = int(np.argmax(logp))
        else:
            cdf = np.cumsum(np.exp(logp))
            a = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), self.n_actions - 1)
        return np.array([float(a)]), float(logp[a])

    def dist_params(self, states: np.ndarray):
        return self.net.predict(_check_states(states, self.state_dim))

    def _onehot(self, actions: np.ndarray) -> np.ndarray:
        idx = np.asarray(actions).reshape(-1).astype(np.int64)
        return np.eye(self.n_actions)[idx]

    def log_prob_tensor(self, states, actions) -> Tensor:
        lp = dc.log_softmax(self.net.forward(Tensor(states)), axis=1)
        return dc.sum(dc.mul(lp, self._onehot(actions)), axis=1)

    def entropy_tensor(self, states) -> Tensor:
        lp = dc.log_softmax(self.net.forward(Tensor(states)), axis=1)
        return dc.neg(dc.mean(dc.sum(dc.mul(dc.exp(lp), lp), axis=1)))

    def kl_tensor(self, old_logits, states) -> Tensor:
        old_lp = self._log_softmax(old_logits)
        lp = dc.log_softmax(self.net.forward(Tensor(states)), axis=1)
        return dc.mean(dc.sum(dc.mul(dc.sub(old_lp, lp), np.exp(old_lp)), axis=1))

    def fisher_vector_product(self, states, v, damping: float = 0.0) -> np.ndarray:
        if v.shape != (self.num_params(),):
            raise ValueError(f"vector has shape {v.shape}, expected ({self.num_params()},)")
        states = _check_states(states, self.state_dim)
        logits, dlogits = self.net.jvp(states, self.net.unflatten(v))
        p = np.exp(self._log_softmax(logits))
        u = (p * dlogits - p * np.sum(p * dlogits, axis=1, keepdims=True)) / len(states)
        out = self.net.forward(Tensor(states))
        g = dc.grad(dc.sum(dc.mul(out, u)), self.net.parameters())
        return np.concatenate([x.ravel() for x in g]) + damping * v

    def log_prob(self, state, action) -> float:
        state = _check_states(state, self.state_dim)
        return float(self._log_softmax(self.net.predict(state[None]))[0, int(np.ravel(action)[0])])

    def entropy(self, states) -> float:
        p = self.probs(_check_states(states, self.state_dim))
        return float(np.mean(-np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=1)))

    def kl_divergence(self, old, states) -> float:
        with dc.no_grad():
            return self.kl_tensor(old, _check_states(states, self.state_dim)).item()


class ValueMlp(Module):
    def __init__(self, state_dim: int, rng: np.random.Generator, hidden=(64, 64)):
        self.net = Mlp((state_dim, *hidden, 1), rng)

    def named_parameters(self):
        return {f"value.{k}": v for k, v in self.net.named_parameters().items()}

    def forward(self, states: np.ndarray) -> Tensor:
        return dc.reshape(self.net.forward(Tensor(states)), (-1,))

    def predict(self, states: np.ndarray) -> np.ndarray:
        return self.net.predict(np.atleast_2d(states))[:, 0]


def normalize_frames(frames: np.ndarray) -> np.ndarray:
    """uint8 pixels to [-1, 1]."""
    return frames.astype(np.float64) / 127.5 - 1.0


def stack_frames(frames: np.ndarray) -> np.ndarray:
    """(N, k, H, W, C) uint8 tuples to (N, k*C, H, W) network input in [-1, 1]."""
    n, k, h, w, c = frames.shape
    x = normalize_frames(frames).transpose(0, 1, 4, 2, 3)
    return x.reshape(n, k * c, h, w)


class ConvTrunk(Module):
    """DCGAN-like stack of 4x4 stride-2 convolutions with leaky ReLU."""

    def __init__(self, in_channels: int, height: int, width: int, rng: np.random.Generator,
                 widths=(8, 16, 32), slope: float = 0.2):
        self.slope = slope
        self.kernels, self.biases = [], []
        c = in_channels
        for co in widths:
            self.kernels.append(Tensor(_he(rng, c * 16, (co, c, 4, 4)), requires_grad=True))
            self.biases.append(Tensor(np.zeros((1, co, 1, 1)), requires_grad=True))
            c = co
            height, width = height // 2, width // 2
        if height < 1 or width < 1:
            raise ValueError("input too small for the convolution stack")
        self.out_features = c * height * width

    def named_parameters(self):
        out = {}
        for i, (k, b) in enumerate(zip(self.kernels, self.biases)):
            out[f"conv{i}.weight"] = k
            out[f"conv{i}.bias"] = b
        return out

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for k, b in zip(self.kernels, self.biases):
            h = dc.leaky_relu(dc.add(dc.conv2d(h, k, stride=2, padding=1), b), self.slope)
        return dc.reshape(h, (h.shape[0], -1))


class ConvDiscriminator(Module):
    """Scores a stack of k consecutive frames; output is P(expert) in (ε, 1−ε)."""

    def __init__(self, k_frames: int, channels: int, height: int, width: int,
                 rng: np.random.Generator, widths=(8, 16, 32), eps: float = DISC_EPS):
        self.k_frames, self.eps = k_frames, eps
        self.trunk = ConvTrunk(k_frames * channels, height, width, rng, widths)
        self.head = Mlp((self.trunk.out_features, 1), rng)

    def named_parameters(self):
        out = {f"trunk.{k}": v for k, v in self.trunk.named_parameters().items()}
        out.update({f"head.{k}": v for k, v in self.head.named_parameters().items()})
        return out

    def forward(self, x) -> Tensor:
        logits = self.head.forward(self.trunk.forward(dc.as_tensor(x)))
        return dc.clamp(dc.reshape(dc.sigmoid(logits), (-1,)), self.eps, 1.0 - self.eps)


class MlpDiscriminator(Module):
    """Scores concatenated (s, a) or (s, s') vectors."""

    def __init__(self, in_dim: int, rng: np.random.Generator, hidden=(64, 64), eps: float = DISC_EPS):
        self.eps = eps
        self.net = Mlp((in_dim, *hidden, 1), rng)

    def named_parameters(self):
        return {f"disc.{k}": v for k, v in self.net.named_parameters().items()}

    def forward(self, x) -> Tensor:
        logits = self.net.forward(dc.as_tensor(x))
        return dc.clamp(dc.reshape(dc.sigmoid(logits), (-1,)), self.eps, 1.0 - self.eps)


class TcnEncoder(Module):
    """Single-frame embedding network (conv trunk plus a linear head)."""

    def __init__(self, channels: int, height: int, width: int, rng: np.random.Generator,
                 widths=(8, 16, 32), embed_dim: int = 16):
        self.embed_dim = embed_dim
        self.trunk = ConvTrunk(channels, height, width, rng, widths)
        self.head = Mlp((self.trunk.out_features, embed_dim), rng)

    def named_parameters(self):
        out = {f"trunk.{k}": v for k, v in self.trunk.named_parameters().items()}
        out.update({f"head.{k}": v for k, v in self.head.named_parameters().items()})
        return out

    def forward(self, frames) -> Tensor:
        """(N, H, W, C) uint8 frames, or an already-normalised NCHW tensor."""
        if isinstance(frames, np.ndarray) and frames.dtype == np.uint8:
            frames = normalize_frames(frames).transpose(0, 3, 1, 2)
        return self.head.forward(self.trunk.forward(dc.as_tensor(frames)))

    def embed(self, frames: np.ndarray) -> np.ndarray:
        with dc.no_grad():
            return self.forward(frames).data
