"""Fully connected actor and critic networks with hand-written forward and
backward passes, plus finite-difference gradient checks.

Shapes follow the numpy convention x @ W + b with W of shape (fan_in,
fan_out). All caches needed by the backward passes are returned from the
forward passes; nothing hides in module state, so the finite-difference
checks can replay a forward bit-for-bit.

The actor outputs a tanh-squashed gaussian. The log-density uses the
numerically stable identity log(1 - tanh(u)^2) = 2*(log 2 - u -
softplus(-2u)), whose u-derivative is -2*tanh(u).
"""

from __future__ import annotations

import math

import numpy as np

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def softplus(x):
    return np.logaddexp(0.0, x)


def relu(x):
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

def he_linear(rng, fan_in, fan_out, dtype, scale=None):
    std = math.sqrt(2.0 / fan_in) if scale is None else scale
    w = rng.standard_normal((fan_in, fan_out)) * std
    return w.astype(dtype), np.zeros(fan_out, dtype=dtype)


def flatten_params(params):
    return np.concatenate([p.ravel() for p in params])


def unflatten_into(params, flat):
    """Write `flat` back into the list of arrays, preserving shapes."""
    pos = 0
    for p in params:
        n = p.size
        p[...] = flat[pos:pos + n].reshape(p.shape)
        pos += n
    if pos != flat.size:
        raise ValueError("flat vector size mismatch")


class Adam:
    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def state_arrays(self):
        return self.m + self.v


# ---------------------------------------------------------------------------
# actor
# ---------------------------------------------------------------------------

class ActorNet:
    """obs -> hidden relu stack -> (mean, log_std); tanh-squashed sampling."""

    def __init__(self, obs_dim, act_dim, hidden=(256, 256, 256),
                 dtype=np.float32, seed=0):
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.hidden = tuple(hidden)
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.params = []
        fan = obs_dim
        for h in self.hidden:
            w, b = he_linear(rng, fan, h, dtype)
            self.params += [w, b]
            fan = h
        w, b = he_linear(rng, fan, 2 * act_dim, dtype, scale=1e-2)
        self.params += [w, b]

    def forward(self, obs):
        """Returns (mean, log_std_clipped, cache)."""
        x = np.asarray(obs, dtype=self.dtype)
        acts = [x]
        pre = []
        for i in range(len(self.hidden)):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            z = x @ w + b
            pre.append(z)
            x = relu(z)
            acts.append(x)
        w, b = self.params[-2], self.params[-1]
        head = x @ w + b
        mean = head[:, :self.act_dim]
        raw_log_std = head[:, self.act_dim:]
        log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        cache = (acts, pre, raw_log_std)
        return mean, log_std, cache

    def backward(self, cache, g_mean, g_log_std):
        """Gradients of a scalar loss given d/dmean and d/dlog_std."""
        acts, pre, raw_log_std = cache
        clip_mask = ((raw_log_std > LOG_STD_MIN)
                     & (raw_log_std < LOG_STD_MAX)).astype(self.dtype)
        g_head = np.concatenate([g_mean, g_log_std * clip_mask], axis=1)
        grads = [None] * len(self.params)
        w = self.params[-2]
        grads[-2] = acts[-1].T @ g_head
        grads[-1] = g_head.sum(axis=0)
        g = g_head @ w.T
        for i in reversed(range(len(self.hidden))):
            g = g * (pre[i] > 0)
            w = self.params[2 * i]
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ w.T
        return grads

    def sample(self, obs, eps):
        """Reparameterized draw: action = tanh(mean + std*eps).

        Returns (action, logp, cache2) where cache2 carries what the actor
        loss backward needs.
        """
        mean, log_std, cache = self.forward(obs)
        eps = np.asarray(eps, dtype=self.dtype)
        std = np.exp(log_std)
        u = mean + std * eps
        a = np.tanh(u)
        logp = self._log_prob_from(u, log_std, eps)
        return a, logp, (cache, eps, std, u, a, log_std)

    @staticmethod
    def _log_prob_from(u, log_std, eps):
        # gaussian term with u = mean + std*eps substituted, then the tanh
        # change-of-variables correction
        gauss = -0.5 * eps * eps - log_std - _HALF_LOG_2PI
        corr = 2.0 * (math.log(2.0) - u - softplus(-2.0 * u))
        return (gauss - corr).sum(axis=1)

    def act(self, obs, deterministic=True, rng=None):
        """Policy output for rollouts; obs may be a single vector."""
        single = np.ndim(obs) == 1
        batch = np.atleast_2d(obs)
        mean, log_std, _ = self.forward(batch)
        if deterministic:
            a = np.tanh(mean)
        else:
            if rng is None:
                raise ValueError("stochastic act needs an rng")
            eps = rng.standard_normal(mean.shape).astype(self.dtype)
            a = np.tanh(mean + np.exp(log_std) * eps)
        if not np.isfinite(a).all():
            raise FloatingPointError("actor produced non-finite action")
        return a[0] if single else a


# ---------------------------------------------------------------------------
# critic
# ---------------------------------------------------------------------------

class CriticNet:
    """(obs, action) -> scalar Q with [linear, dropout, layernorm, relu]
    hidden blocks."""

    LN_EPS = 1e-5

    def __init__(self, obs_dim, act_dim, hidden=(256, 256, 256),
                 dropout=0.01, dtype=np.float32, seed=0):
        self.in_dim = obs_dim + act_dim
        self.hidden = tuple(hidden)
        self.dropout = float(dropout)
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.params = []
        fan = self.in_dim
        for h in self.hidden:
            w, b = he_linear(rng, fan, h, dtype)
            gamma = np.ones(h, dtype=dtype)
            beta = np.zeros(h, dtype=dtype)
            self.params += [w, b, gamma, beta]
            fan = h
        w, b = he_linear(rng, fan, 1, dtype, scale=1e-2)
        self.params += [w, b]

    def make_masks(self, batch, rng):
        """Inverted-dropout keep masks, pre-scaled by 1/keep."""
        if self.dropout <= 0.0 or rng is None:
            return None
        keep = 1.0 - self.dropout
        masks = []
        for h in self.hidden:
            m = (rng.random((batch, h)) < keep).astype(self.dtype) / keep
            masks.append(m)
        return masks

    def forward(self, obs, action, masks=None):
        """Returns (q, cache); masks=None runs in eval mode."""
        x = np.concatenate([np.asarray(obs, dtype=self.dtype),
                            np.asarray(action, dtype=self.dtype)], axis=1)
        acts = [x]
        saved = []
        for i in range(len(self.hidden)):
            w, b, gamma, beta = self.params[4 * i:4 * i + 4]
            z = x @ w + b
            d = z * masks[i] if masks is not None else z
            mu = d.mean(axis=1, keepdims=True)
            var = d.var(axis=1, keepdims=True)
            inv_std = 1.0 / np.sqrt(var + self.LN_EPS)
            xhat = (d - mu) * inv_std
            y = xhat * gamma + beta
            x = relu(y)
            saved.append((y, xhat, inv_std))
            acts.append(x)
        w, b = self.params[-2], self.params[-1]
        q = (x @ w + b)[:, 0]
        cache = (acts, saved, masks)
        return q, cache

    def backward(self, cache, g_q, want_input_grad=False):
        """Gradients for scalar loss given dL/dq (shape (B,)); optionally
        also the gradient w.r.t. the (obs||action) input."""
        acts, saved, masks = cache
        grads = [None] * len(self.params)
        g = np.asarray(g_q, dtype=self.dtype)[:, None]
        w = self.params[-2]
        grads[-2] = acts[-1].T @ g
        grads[-1] = g.sum(axis=0)
        g = g @ w.T
        for i in reversed(range(len(self.hidden))):
            y, xhat, inv_std = saved[i]
            g = g * (y > 0)
            gamma = self.params[4 * i + 2]
            grads[4 * i + 2] = (g * xhat).sum(axis=0)
            grads[4 * i + 3] = g.sum(axis=0)
            ghat = g * gamma
            n = xhat.shape[1]
            # layer norm backward over the feature axis
            gd = (inv_std / n) * (n * ghat
                                  - ghat.sum(axis=1, keepdims=True)
                                  - xhat * (ghat * xhat).sum(axis=1, keepdims=True))
            if masks is not None:
                gd = gd * masks[i]
            w = self.params[4 * i]
            grads[4 * i] = acts[i].T @ gd
            grads[4 * i + 1] = gd.sum(axis=0)
            g = gd @ w.T
        return (grads, g) if want_input_grad else (grads, None)


# ---------------------------------------------------------------------------
# losses with analytic gradients
# ---------------------------------------------------------------------------

def critic_loss_and_grads(critic: CriticNet, obs, action, target, masks=None):
    """Mean squared Bellman error for one critic; returns (loss, grads)."""
    q, cache = critic.forward(obs, action, masks)
    err = q - np.asarray(target, dtype=critic.dtype)
    loss = float(np.mean(err * err))
    g_q = (2.0 / err.shape[0]) * err
    grads, _ = critic.backward(cache, g_q)
    return loss, grads


def _min_q_and_action_grad(critics, obs, action):
    """min over critics (eval mode) and its gradient w.r.t. action."""
    qs, caches = [], []
    for c in critics:
        q, cache = c.forward(obs, action, masks=None)
        qs.append(q)
        caches.append(cache)
    qs = np.stack(qs)                  # (n_critics, B)
    which = np.argmin(qs, axis=0)      # (B,)
    qmin = qs[which, np.arange(qs.shape[1])]
    act_dim = np.asarray(action).shape[1]
    g_action = np.zeros((qs.shape[1], act_dim), dtype=critics[0].dtype)
    for i, c in enumerate(critics):
        sel = (which == i).astype(critics[0].dtype)
        if not sel.any():
            continue
        _, g_in = c.backward(caches[i], sel, want_input_grad=True)
        g_action += g_in[:, -act_dim:]
    return qmin, g_action


def actor_loss_and_grads(actor: ActorNet, critics, obs, eps, alpha):
    """Loss mean(alpha*logp - min_Q(s, a)) with full analytic gradients.

    Returns (loss, grads, logp) so the caller can reuse logp for the
    temperature update.
    """
    a, logp, (cache, eps_arr, std, u, a_arr, log_std) = actor.sample(obs, eps)
    qmin, g_action = _min_q_and_action_grad(critics, obs, a)
    batch = a.shape[0]
    loss = float(np.mean(alpha * logp - qmin))
    tanh_u = a_arr
    # d loss / du through both logp (2*tanh(u) per unit) and the action
    g_u = (alpha * 2.0 * tanh_u - g_action * (1.0 - tanh_u * tanh_u)) / batch
    g_mean = g_u
    # explicit -log_std term of logp plus the chain through u = mean+std*eps
    g_log_std = g_u * std * eps_arr + (-alpha / batch)
    g_log_std = g_log_std.astype(actor.dtype)
    grads = actor.backward(cache, g_mean.astype(actor.dtype), g_log_std)
    return loss, grads, logp


# ---------------------------------------------------------------------------
# finite-difference checks
# ---------------------------------------------------------------------------

def _fd_check(params, loss_fn, grads, n_coords, h, seed):
    """Central finite differences on randomly sampled coordinates."""
    rng = np.random.default_rng(seed)
    flat_grads = flatten_params(grads)
    sizes = np.array([p.size for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    max_rel = 0.0
    for c in coords:
        pi = int(np.searchsorted(offsets, c, side="right") - 1)
        local = int(c - offsets[pi])
        p = params[pi]
        flat_view = p.reshape(-1)
        orig = flat_view[local]
        flat_view[local] = orig + h
        lp = loss_fn()
        flat_view[local] = orig - h
        lm = loss_fn()
        flat_view[local] = orig
        fd = (lp - lm) / (2.0 * h)
        an = float(flat_grads[c])
        denom = max(abs(fd), abs(an), 1e-6)
        max_rel = max(max_rel, abs(fd - an) / denom)
    return max_rel


def gradient_check_actor(obs_dim=24, act_dim=5, batch=8, hidden=(32, 16),
                         n_coords=250, h=1e-5, seed=0):
    """Max relative error of the actor-loss gradient on a random batch."""
    rng = np.random.default_rng(seed)
    actor = ActorNet(obs_dim, act_dim, hidden, dtype=np.float64, seed=seed)
    critics = [CriticNet(obs_dim, act_dim, hidden, dropout=0.0,
                         dtype=np.float64, seed=seed + 1 + i)
               for i in range(2)]
    obs = rng.standard_normal((batch, obs_dim))
    eps = rng.standard_normal((batch, act_dim))
    alpha = 0.2

    def loss_fn():
        a, logp, _ = actor.sample(obs, eps)
        qmin, _ = _min_q_and_action_grad(critics, obs, a)
        return float(np.mean(alpha * logp - qmin))

    _, grads, _ = actor_loss_and_grads(actor, critics, obs, eps, alpha)
    return _fd_check(actor.params, loss_fn, grads, n_coords, h, seed + 7)


def gradient_check_critic(obs_dim=24, act_dim=5, batch=8, hidden=(32, 16),
                          dropout=0.3, n_coords=250, h=1e-5, seed=0):
    """Max relative error of the critic-loss gradient, dropout masks held
    fixed across the finite-difference evaluations."""
    rng = np.random.default_rng(seed)
    critic = CriticNet(obs_dim, act_dim, hidden, dropout=dropout,
                       dtype=np.float64, seed=seed)
    obs = rng.standard_normal((batch, obs_dim))
    action = rng.standard_normal((batch, act_dim))
    target = rng.standard_normal(batch)
    masks = critic.make_masks(batch, np.random.default_rng(seed + 3))

    def loss_fn():
        q, _ = critic.forward(obs, action, masks)
        err = q - target
        return float(np.mean(err * err))

    _, grads = critic_loss_and_grads(critic, obs, action, target, masks)
    return _fd_check(critic.params, loss_fn, grads, n_coords, h, seed + 7)
