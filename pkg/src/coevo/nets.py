"""Minimal differentiable building blocks: graph message passing, MLPs,
Gaussian/categorical heads.

Everything is float64 numpy with explicit forward/backward passes; there is
no general autodiff, just the few compositions the three policies need.
Modules cache their last forward inputs, `backward` accumulates into `.g*`
gradient buffers, and all trainable arrays are reachable through
`named_params()` in a fixed order so parameter vectors can be flattened,
checkpointed, and finite-difference checked.
"""

import json

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


class NetError(ValueError):
    """Shape or numerical problems inside a network."""


def orthogonal(rng, out_dim, in_dim, gain=1.0):
    """Orthogonal-ish init: QR of a Gaussian draw, sign-fixed for determinism."""
    a = rng.standard_normal((max(out_dim, in_dim), min(out_dim, in_dim)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if out_dim < in_dim:
        q = q.T
    return gain * q[:out_dim, :in_dim]


class Linear:
    """y = x @ W.T + b over the trailing axis."""

    def __init__(self, in_dim, out_dim, rng, gain=1.0):
        self.W = orthogonal(rng, out_dim, in_dim, gain)
        self.b = np.zeros(out_dim)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def forward(self, x):
        if x.shape[-1] != self.W.shape[1]:
            raise NetError(f"Linear expected {self.W.shape[1]} features, got {x.shape[-1]}")
        self._x = x
        return x @ self.W.T + self.b

    def backward(self, dy):
        x2 = self._x.reshape(-1, self.W.shape[1])
        dy2 = dy.reshape(-1, self.W.shape[0])
        self.gW += dy2.T @ x2
        self.gb += dy2.sum(axis=0)
        return dy @ self.W

    def named_params(self):
        return [("W", self.W), ("b", self.b)]

    def named_grads(self):
        return [("W", self.gW), ("b", self.gb)]


def neighbor_sum(adj, h):
    """Sum of neighbor features: adj @ h, batched over leading dims of h."""
    if h.ndim == 2:
        return adj @ h
    n = adj.shape[0]
    flat = h.transpose(1, 0, 2).reshape(n, -1)
    out = adj @ flat
    return out.reshape(n, h.shape[0], h.shape[2]).transpose(1, 0, 2)


class GraphConv:
    """h'_u = tanh(W_self h_u + W_nbr sum_{v~u} h_v + b) over tree neighbors."""

    def __init__(self, in_dim, out_dim, rng, gain=1.0):
        self.W_self = orthogonal(rng, out_dim, in_dim, gain)
        self.W_nbr = orthogonal(rng, out_dim, in_dim, gain)
        self.b = np.zeros(out_dim)
        self.gW_self = np.zeros_like(self.W_self)
        self.gW_nbr = np.zeros_like(self.W_nbr)
        self.gb = np.zeros_like(self.b)
        self._h = None
        self._m = None
        self._y = None
        self._adj = None

    def forward(self, h, adj):
        if h.shape[-1] != self.W_self.shape[1]:
            raise NetError(f"GraphConv expected {self.W_self.shape[1]} features, got {h.shape[-1]}")
        m = neighbor_sum(adj, h)
        y = np.tanh(h @ self.W_self.T + m @ self.W_nbr.T + self.b)
        self._h, self._m, self._y, self._adj = h, m, y, adj
        return y

    def backward(self, dy):
        dz = dy * (1.0 - self._y ** 2)
        in_dim = self.W_self.shape[1]
        out_dim = self.W_self.shape[0]
        dz2 = dz.reshape(-1, out_dim)
        self.gW_self += dz2.T @ self._h.reshape(-1, in_dim)
        self.gW_nbr += dz2.T @ self._m.reshape(-1, in_dim)
        self.gb += dz2.sum(axis=0)
        # adjacency is symmetric, so the neighbor-sum transpose reuses it
        return dz @ self.W_self + neighbor_sum(self._adj, dz @ self.W_nbr)

    def named_params(self):
        return [("W_self", self.W_self), ("W_nbr", self.W_nbr), ("b", self.b)]

    def named_grads(self):
        return [("W_self", self.gW_self), ("W_nbr", self.gW_nbr), ("b", self.gb)]


class GraphNet:
    """A stack of GraphConv layers; returns per-node hidden states."""

    def __init__(self, in_dim, hidden, rng):
        self.layers = []
        d = in_dim
        for h in hidden:
            self.layers.append(GraphConv(d, h, rng))
            d = h
        self.out_dim = d

    def forward(self, h, adj):
        for layer in self.layers:
            h = layer.forward(h, adj)
        return h

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def named_params(self):
        return [(f"layers.{i}.{n}", p) for i, l in enumerate(self.layers)
                for n, p in l.named_params()]

    def named_grads(self):
        return [(f"layers.{i}.{n}", p) for i, l in enumerate(self.layers)
                for n, p in l.named_grads()]


class Mlp:
    """Affine + tanh stack; the final layer stays affine."""

    def __init__(self, sizes, rng, final_gain=1.0):
        if len(sizes) < 2:
            raise NetError("Mlp needs at least input and output sizes")
        self.linears = []
        for i in range(len(sizes) - 1):
            gain = final_gain if i == len(sizes) - 2 else 1.0
            self.linears.append(Linear(sizes[i], sizes[i + 1], rng, gain))
        self._acts = []

    def forward(self, x):
        self._acts = []
        for i, lin in enumerate(self.linears):
            x = lin.forward(x)
            if i < len(self.linears) - 1:
                x = np.tanh(x)
                self._acts.append(x)
        return x

    def backward(self, dy):
        for i in reversed(range(len(self.linears))):
            if i < len(self.linears) - 1:
                dy = dy * (1.0 - self._acts[i] ** 2)
            dy = self.linears[i].backward(dy)
        return dy

    def named_params(self):
        return [(f"linears.{i}.{n}", p) for i, l in enumerate(self.linears)
                for n, p in l.named_params()]

    def named_grads(self):
        return [(f"linears.{i}.{n}", p) for i, l in enumerate(self.linears)
                for n, p in l.named_grads()]


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------

def gaussian_sample(mean, log_std, rng):
    return mean + np.exp(log_std) * rng.standard_normal(mean.shape)

def gaussian_logprob(mean, log_std, action):
    """Diagonal-normal log density, summed over the trailing axis."""
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_std))):
        raise NetError("non-finite Gaussian parameters")
    z = (action - mean) / np.exp(log_std)
    return -0.5 * np.sum(z * z + 2.0 * log_std + LOG_2PI, axis=-1)


def gaussian_logprob_backward(mean, log_std, action, dlp):
    """Gradients of sum(dlp * logprob) w.r.t. mean and log_std."""
    inv_var = np.exp(-2.0 * log_std)
    dmean = dlp[..., None] * (action - mean) * inv_var
    dls = dlp[..., None] * ((action - mean) ** 2 * inv_var - 1.0)
    return dmean, dls


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def categorical_sample(logits, rng):
    if not np.all(np.isfinite(logits)):
        raise NetError("non-finite logits")
    p = softmax(logits)
    cdf = np.cumsum(p, axis=-1)
    u = rng.random(logits.shape[:-1] + (1,))
    return np.minimum((u > cdf[..., :-1]).sum(axis=-1), logits.shape[-1] - 1)


def categorical_logprob(logits, idx):
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1)) + logits.max(axis=-1)
    picked = np.take_along_axis(logits, idx[..., None], axis=-1)[..., 0]
    return picked - lse


def categorical_logprob_backward(logits, idx, dlp):
    """Gradient of sum(dlp * logprob) w.r.t. logits: (onehot - softmax)."""
    g = -softmax(logits)
    np.put_along_axis(g, idx[..., None],
                      np.take_along_axis(g, idx[..., None], axis=-1) + 1.0, axis=-1)
    return dlp[..., None] * g


# ---------------------------------------------------------------------------
# parameter vectors and checkpoints
# ---------------------------------------------------------------------------

def flatten_params(named):
    """One float64 vector from a named_params()-style list; bijective with
    unflatten for fixed shapes."""
    if not named:
        return np.zeros(0)
    return np.concatenate([arr.ravel() for _, arr in named])


def set_flat_params(named, flat):
    total = sum(arr.size for _, arr in named)
    if flat.shape != (total,):
        raise NetError(f"flat vector has {flat.shape[0]} entries, expected {total}")
    off = 0
    for _, arr in named:
        arr[...] = flat[off:off + arr.size].reshape(arr.shape)
        off += arr.size


def zero_grads(named_grads):
    for _, g in named_grads:
        g[...] = 0.0


def grad_norm(named_grads):
    total = 0.0
    for _, g in named_grads:
        total += float(np.sum(g * g))
    return np.sqrt(total)


def clip_grads(named_grads, max_norm):
    norm = grad_norm(named_grads)
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / norm
        for _, g in named_grads:
            g *= scale
    return norm


def check_gradient(loss_and_grad, get_flat, set_flat, rng, n_coords=5, step=1e-5):
    """Central finite differences on randomly chosen coordinates.

    Returns the worst relative error, computed against
    max(|analytic|, |numeric|, 1e-3) so near-zero coordinates stay testable
    at double precision.
    """
    base = get_flat().copy()
    _, grad = loss_and_grad()
    worst = 0.0
    coords = rng.integers(0, base.size, size=n_coords)
    for c in coords:
        x = base.copy()
        x[c] = base[c] + step
        set_flat(x)
        up, _ = loss_and_grad()
        x[c] = base[c] - step
        set_flat(x)
        dn, _ = loss_and_grad()
        fd = (up - dn) / (2.0 * step)
        err = abs(fd - grad[c]) / max(abs(fd), abs(grad[c]), 1e-3)
        worst = max(worst, err)
    set_flat(base)
    return worst


CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays, meta):
    """Versioned dump of named arrays plus a JSON metadata record."""
    meta = dict(meta)
    meta["format_version"] = CHECKPOINT_VERSION
    payload = {k.replace("/", "__SLASH__"): v for k, v in arrays.items()}
    payload["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **payload)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise NetError(f"unsupported checkpoint version {meta.get('format_version')!r}")
        arrays = {k.replace("__SLASH__", "/"): data[k] for k in data.files if k != "__meta__"}
    return arrays, meta
