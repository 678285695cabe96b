"""Small numpy network kernel: conv encoder, dense heads, losses, Adam.

Everything the agent trains is built from four layer types (``Conv2D``,
``ReLU``, ``Flatten``, ``Dense``) chained in a ``Sequential`` encoder with
one or more dense heads on top.  Backward passes are written by hand and
verified against central finite differences by :func:`grad_check`.

Network inputs are NCHW; conv layers work channels-last internally.  Training runs in float32; ``astype(np.float64)`` gives a
double precision copy for gradient checks.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

# (out_channels, kernel, stride) of the standard Atari encoder
ENCODER_CONVS = ((32, 8, 4), (64, 4, 2), (64, 3, 1))
FEATURE_DIM = 512


def conv_output_size(n: int, kernel: int, stride: int) -> int:
    """Spatial size after a valid (unpadded) convolution."""
    if n < kernel:
        raise ValueError(f"input size {n} smaller than kernel {kernel}")
    return (n - kernel) // stride + 1


class Layer:
    """Base layer.  Subclasses fill ``params`` and ``grads`` with equal keys."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout, input_grad=True):
        raise NotImplementedError

    def clear_cache(self):
        self._cache = None

    def _require_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a forward cache")
        return self._cache


class Conv2D(Layer):
    """Valid convolution on NHWC activations.

    Weights are stored as (out, in, k, k).  The im2col step splits the input
    into stride-sized blocks so each kernel offset is a contiguous slab copy.
    """

    def __init__(self, in_channels, out_channels, kernel, stride=1, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        fan_in = in_channels * kernel * kernel
        bound = 1.0 / np.sqrt(fan_in)
        self.params["weight"] = rng.uniform(
            -bound, bound, size=(out_channels, in_channels, kernel, kernel)
        ).astype(dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)

    def _geometry(self, h, w):
        k, s = self.kernel, self.stride
        oh, ow = conv_output_size(h, k, s), conv_output_size(w, k, s)
        if k % s == 0:
            kb, bs = k // s, s  # kernel spans kb x kb blocks of size s
        else:
            kb, bs = k, 1  # fall back to unit blocks (stride handled by slicing)
        return oh, ow, kb, bs

    def _weight_matrix(self):
        k, s = self.kernel, self.stride
        wt = self.params["weight"]
        if k % s == 0:
            kb = k // s
            wt = wt.reshape(self.out_channels, self.in_channels, kb, s, kb, s)
            wt = wt.transpose(0, 2, 4, 3, 5, 1)
        else:
            wt = wt.transpose(0, 2, 3, 1)
        return wt.reshape(self.out_channels, -1)

    def _blocks(self, x, oh, ow, kb, bs):
        n, h, w, c = x.shape
        s = self.stride
        if bs > 1:
            hb, wb = oh - 1 + kb, ow - 1 + kb
            xb = x[:, :hb * bs, :wb * bs].reshape(n, hb, bs, wb, bs, c).transpose(0, 1, 3, 2, 4, 5)
            return np.ascontiguousarray(xb), 1
        return x, s

    def forward(self, x):
        n, h, w, c = x.shape
        if c != self.in_channels:
            raise ValueError(f"Conv2D expects {self.in_channels} channels, got {c}")
        oh, ow, kb, bs = self._geometry(h, w)
        xb, step = self._blocks(x, oh, ow, kb, bs)
        tail = xb.shape[3:]
        cols = np.empty((n, oh, ow, kb, kb) + tail, dtype=x.dtype)
        for bi in range(kb):
            for bj in range(kb):
                cols[:, :, :, bi, bj] = xb[:, bi:bi + step * (oh - 1) + 1:step,
                                            bj:bj + step * (ow - 1) + 1:step]
        cols = cols.reshape(n * oh * ow, -1)
        out = cols @ self._weight_matrix().T
        out += self.params["bias"]
        self._cache = (x.shape, cols)
        return out.reshape(n, oh, ow, self.out_channels)

    def backward(self, dout, input_grad=True):
        (n, h, w, c), cols = self._require_cache()
        oh, ow, kb, bs = self._geometry(h, w)
        dmat = dout.reshape(-1, self.out_channels)
        wmat = self._weight_matrix()
        gw = dmat.T @ cols
        k, s = self.kernel, self.stride
        if k % s == 0:
            gw = gw.reshape(self.out_channels, kb, kb, s, s, c).transpose(0, 5, 1, 3, 2, 4)
        else:
            gw = gw.reshape(self.out_channels, k, k, c).transpose(0, 3, 1, 2)
        self.grads["weight"] = np.ascontiguousarray(gw).reshape(self.params["weight"].shape)
        self.grads["bias"] = dmat.sum(axis=0)
        if not input_grad:
            return None
        if bs > 1:
            tail = (bs, bs, c)
            hb, wb, step = oh - 1 + kb, ow - 1 + kb, 1
        else:
            tail = (c,)
            hb, wb, step = h, w, s
        dcols = (dmat @ wmat).reshape((n, oh, ow, kb, kb) + tail)
        dxb = np.zeros((n, hb, wb) + tail, dtype=dout.dtype)
        for bi in range(kb):
            for bj in range(kb):
                dxb[:, bi:bi + step * (oh - 1) + 1:step,
                    bj:bj + step * (ow - 1) + 1:step] += dcols[:, :, :, bi, bj]
        if bs == 1:
            return dxb
        dx = np.zeros((n, h, w, c), dtype=dout.dtype)
        dx[:, :hb * bs, :wb * bs] = dxb.transpose(0, 1, 3, 2, 4, 5).reshape(n, hb * bs, wb * bs, c)
        return dx


class ToChannelsLast(Layer):
    """NCHW -> NHWC (the conv layers work channels-last)."""

    def forward(self, x):
        return np.ascontiguousarray(x.transpose(0, 2, 3, 1))

    def backward(self, dout, input_grad=True):
        return dout.transpose(0, 3, 1, 2)


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.in_features = in_features
        self.out_features = out_features
        bound = 1.0 / np.sqrt(in_features)
        self.params["weight"] = rng.uniform(
            -bound, bound, size=(out_features, in_features)
        ).astype(dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"Dense expects (batch, {self.in_features}), got {x.shape}")
        self._cache = x
        out = x @ self.params["weight"].T
        out += self.params["bias"]
        return out

    def backward(self, dout, input_grad=True):
        x = self._require_cache()
        self.grads["weight"] = dout.T @ x
        self.grads["bias"] = dout.sum(axis=0)
        if not input_grad:
            return None
        return dout @ self.params["weight"]


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dout, input_grad=True):
        return dout * self._require_cache()


class Flatten(Layer):
    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, input_grad=True):
        return dout.reshape(self._require_cache())


class Sequential:
    """Ordered chain of named layers."""

    def __init__(self, layers):
        self.layers: list[tuple[str, Layer]] = list(layers)

    def forward(self, x):
        for _, layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout, input_grad=False):
        last = len(self.layers) - 1
        for idx in range(last, -1, -1):
            need = input_grad or idx > 0
            dout = self.layers[idx][1].backward(dout, input_grad=need)
        return dout

    def named_layers(self):
        return list(self.layers)


def build_encoder(in_channels, input_size=84, convs=ENCODER_CONVS, feature_dim=FEATURE_DIM,
                  rng=None, dtype=np.float32):
    """The standard conv stem: conv/ReLU stack, flatten, dense to ``feature_dim`` + ReLU.

    Returns ``(encoder, feature_dim)``.
    """
    rng = np.random.default_rng() if rng is None else rng
    layers = [("nhwc", ToChannelsLast())]
    size, channels = input_size, in_channels
    for i, (out_ch, k, s) in enumerate(convs, start=1):
        layers.append((f"conv{i}", Conv2D(channels, out_ch, k, s, rng=rng, dtype=dtype)))
        layers.append((f"relu{i}", ReLU()))
        size = conv_output_size(size, k, s)
        channels = out_ch
    layers.append(("flatten", Flatten()))
    layers.append(("fc", Dense(channels * size * size, feature_dim, rng=rng, dtype=dtype)))
    layers.append(("fc_relu", ReLU()))
    return Sequential(layers), feature_dim


def identity_encoder(n_features):
    """Encoder stub passing flat features straight to the heads (tabular mode)."""
    return Sequential([("flatten", Flatten())]), n_features


class MultiHeadNet:
    """Shared encoder with any number of dense heads reading the same features."""

    def __init__(self, encoder, feature_dim, heads, rng=None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        self.encoder = encoder
        self.feature_dim = feature_dim
        self.head_names = tuple(heads)
        self.heads = {name: Dense(feature_dim, n, rng=rng, dtype=dtype) for name, n in heads.items()}
        self._forward_done = False

    # -- parameters -------------------------------------------------------
    def named_parameters(self):
        """(name, array) pairs in declaration order: encoder first, then heads."""
        out = []
        for lname, layer in self.encoder.named_layers():
            for pname, arr in layer.params.items():
                out.append((f"{lname}.{pname}", arr))
        for hname in self.head_names:
            for pname, arr in self.heads[hname].params.items():
                out.append((f"head_{hname}.{pname}", arr))
        return out

    def named_gradients(self):
        out = []
        for lname, layer in self.encoder.named_layers():
            for pname in layer.params:
                out.append((f"{lname}.{pname}", layer.grads[pname]))
        for hname in self.head_names:
            head = self.heads[hname]
            for pname in head.params:
                out.append((f"head_{hname}.{pname}", head.grads[pname]))
        return out

    def parameters(self):
        return [arr for _, arr in self.named_parameters()]

    def gradients(self):
        return [arr for _, arr in self.named_gradients()]

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    @property
    def dtype(self):
        return self.parameters()[0].dtype

    def signature(self):
        """Architecture description: parameter names and shapes, head sizes."""
        parts = [f"{name}:{'x'.join(map(str, arr.shape))}" for name, arr in self.named_parameters()]
        return ";".join(parts)

    def spec_hash(self, tag=""):
        """32-byte digest of the architecture, optionally bound to a ``tag`` string."""
        text = self.signature() + (f"\n{tag}" if tag else "")
        return hashlib.sha256(text.encode()).digest()

    def copy_from(self, other):
        """Overwrite parameters with ``other``'s values (bit-exact)."""
        mine, theirs = self.named_parameters(), other.named_parameters()
        if [n for n, _ in mine] != [n for n, _ in theirs]:
            raise ValueError("architecture mismatch")
        for (_, dst), (_, src) in zip(mine, theirs):
            if dst.shape != src.shape:
                raise ValueError("architecture mismatch")
            dst[...] = src

    def astype(self, dtype):
        """Deep copy with every parameter cast to ``dtype``."""
        import copy

        clone = copy.deepcopy(self)
        for layer in clone._all_layers():
            layer.clear_cache()
            for key in layer.params:
                layer.params[key] = layer.params[key].astype(dtype)
            layer.grads = {}
        return clone

    def flat_parameters(self):
        return np.concatenate([p.ravel() for p in self.parameters()])

    def checksum(self):
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def _all_layers(self):
        return [layer for _, layer in self.encoder.named_layers()] + [
            self.heads[h] for h in self.head_names
        ]

    # -- compute ----------------------------------------------------------
    def features(self, x):
        return self.encoder.forward(np.asarray(x, dtype=self.dtype))

    def forward(self, x):
        """Outputs of every head, in head order."""
        feats = self.features(x)
        self._forward_done = True
        return tuple(self.heads[h].forward(feats) for h in self.head_names)

    def backward(self, head_grads, input_grad=False):
        """Accumulate parameter gradients from per-head output gradients.

        A ``None`` entry means the head does not feed the loss; its gradients
        are zero.
        """
        if not self._forward_done:
            raise RuntimeError("backward called before forward")
        dfeat = None
        for hname, g in zip(self.head_names, head_grads):
            head = self.heads[hname]
            if g is None:
                head.grads = {k: np.zeros_like(v) for k, v in head.params.items()}
                continue
            d = head.backward(np.asarray(g, dtype=self.dtype))
            dfeat = d if dfeat is None else dfeat + d
        if dfeat is None:
            for _, layer in self.encoder.named_layers():
                layer.grads = {k: np.zeros_like(v) for k, v in layer.params.items()}
            return None
        return self.encoder.backward(dfeat, input_grad=input_grad)


class DualHeadNet(MultiHeadNet):
    """Conv stem with a motor-Q head and a sensory-Q head."""

    def __init__(self, in_channels, n_motor, n_sensory, input_size=84, convs=ENCODER_CONVS,
                 rng=None, dtype=np.float32, encoder=None):
        rng = np.random.default_rng() if rng is None else rng
        if encoder is None:
            encoder = build_encoder(in_channels, input_size, convs, rng=rng, dtype=dtype)
        enc, fdim = encoder
        super().__init__(enc, fdim, {"motor": n_motor, "sensory": n_sensory}, rng=rng, dtype=dtype)


class RewardNet(MultiHeadNet):
    """Inverse-dynamics classifier over a channel-concatenated observation pair."""

    def __init__(self, in_channels, n_motor, input_size=84, convs=ENCODER_CONVS,
                 rng=None, dtype=np.float32, encoder=None):
        rng = np.random.default_rng() if rng is None else rng
        if encoder is None:
            encoder = build_encoder(2 * in_channels, input_size, convs, rng=rng, dtype=dtype)
        enc, fdim = encoder
        super().__init__(enc, fdim, {"action": n_motor}, rng=rng, dtype=dtype)

    def logits(self, obs_t, obs_next):
        pair = np.concatenate([obs_t, obs_next], axis=1)
        return self.forward(pair)[0]


# -- losses -------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of ``logits`` (batch, n) against integer ``labels``.

    Returns ``(loss, p_label, dlogits)`` where ``p_label`` is the softmax
    probability assigned to each label and ``dlogits`` is the gradient of the
    mean loss.
    """
    logits = np.atleast_2d(np.asarray(logits))
    labels = np.atleast_1d(np.asarray(labels))
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError("one label per row required")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    log_p = z[np.arange(n), labels] - log_norm
    probs = np.exp(z - log_norm[:, None])
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(-log_p.mean()), np.exp(log_p), grad


def squared_error(pred, target):
    """Mean squared residual and its gradient wrt ``pred``."""
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kwargs):
        state = cls(**kwargs)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state

    def copy(self):
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                         [m.copy() for m in self.m], [v.copy() for v in self.v])


def adam_step(params, grads, state):
    """Bias-corrected Adam update, applied to ``params`` in place.

    ``state`` moments and step count advance by one.  Returns ``params``.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if not (len(params) == len(grads) == len(state.m)):
        raise ValueError("params, grads and moments must have equal length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    step_size = state.lr * np.sqrt(corr2) / corr1
    eps_hat = state.eps * np.sqrt(corr2)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (step_size * m / (np.sqrt(v) + eps_hat)).astype(p.dtype, copy=False)
    return params


# -- gradient checking --------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tolerance: float
    worst: str
    n_kink_skipped: int = 0

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def relative_error(a, b, floor=1e-10):
    return abs(a - b) / max(abs(a), abs(b), floor)


def _relu_masks(net):
    return [layer._cache.copy() for layer in net._all_layers()
            if isinstance(layer, ReLU) and layer._cache is not None]


def _same_masks(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(net, inputs, loss_fn, tolerance=1e-3, eps=1e-4, n_params=100, rng=None,
               backward=None, max_tries=20):
    """Compare analytic gradients to central finite differences.

    ``loss_fn(outputs) -> (loss, output_grads)`` maps the tuple returned by
    ``net.forward(inputs)`` to a scalar.  ``n_params`` entries are sampled
    across all parameter arrays (every array contributes at least one).  The
    check should be run on a float64 copy of the network.  ``backward`` may
    replace ``net.backward`` (used for fault injection).

    A perturbation that flips any ReLU on/off pattern straddles a kink where
    the loss is not differentiable; such entries are resampled (counted in
    ``n_kink_skipped``).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    backward = net.backward if backward is None else backward

    loss, out_grads = loss_fn(net.forward(inputs))
    base_masks = _relu_masks(net)
    backward(out_grads)
    named = net.named_parameters()
    grads = [g.copy() for g in net.gradients()]
    sizes = np.array([p.size for _, p in named], dtype=float)

    def loss_at():
        value = loss_fn(net.forward(inputs))[0]
        return value, _same_masks(base_masks, _relu_masks(net))

    def draw(i=None):
        if i is None:
            i = int(rng.choice(len(named), p=sizes / sizes.sum()))
        return i, int(rng.integers(named[i][1].size))

    queue = [draw(i) for i in range(len(named))]
    worst, worst_name, checked, skipped = 0.0, "", 0, 0
    while checked < max(n_params, len(named)):
        i, flat_idx = queue.pop() if queue else draw()
        name, p = named[i]
        idx = np.unravel_index(flat_idx, p.shape)
        for _ in range(max_tries):
            orig = p[idx]
            p[idx] = orig + eps
            plus, ok_plus = loss_at()
            p[idx] = orig - eps
            minus, ok_minus = loss_at()
            p[idx] = orig
            if ok_plus and ok_minus:
                break
            skipped += 1
            flat_idx = int(rng.integers(p.size))
            idx = np.unravel_index(flat_idx, p.shape)
        else:
            continue
        numeric = (plus - minus) / (2 * eps)
        err = relative_error(float(grads[i][idx]), numeric)
        checked += 1
        if err > worst:
            worst, worst_name = err, f"{name}{[int(j) for j in idx]}"
    return GradCheckReport(worst, checked, tolerance, worst_name, skipped)


def _gather_td_loss(targets, motor_actions, sensory_actions):
    """Squared TD error of Q_s[a_s] + Q_o[a_o] against fixed targets."""
    def loss_fn(outputs):
        q_m, q_s = outputs
        rows = np.arange(len(targets))
        pred = q_m[rows, motor_actions] + q_s[rows, sensory_actions]
        loss, dpred = squared_error(pred, targets)
        gm, gs = np.zeros_like(q_m), np.zeros_like(q_s)
        gm[rows, motor_actions] = dpred
        gs[rows, sensory_actions] = dpred
        return loss, (gm, gs)
    return loss_fn


def gradcheck_suite(seed=0, n_params=100, eps=1e-4, tolerance=1e-3, input_size=36):
    """Finite-difference checks, in float64, for each layer type and both full networks.

    Returns a list of ``(name, GradCheckReport)``.  ``input_size`` is the
    image side for the full networks (36 is the smallest the standard stem
    accepts).
    """
    rng = np.random.default_rng(seed)
    f64 = np.float64

    def mse_loss(target):
        def loss_fn(outputs):
            loss, g = squared_error(outputs[0], target)
            return loss, (g,)
        return loss_fn

    cases = []
    # single conv, blocked path (kernel divisible by stride) and general path
    for name, (k, s) in (("conv2d", (4, 2)), ("conv2d_unblocked", (3, 2))):
        conv = Conv2D(3, 4, k, s, rng=rng, dtype=f64)
        out = conv_output_size(10, k, s)
        enc = Sequential([("nhwc", ToChannelsLast()), ("conv", conv), ("flatten", Flatten())])
        net = MultiHeadNet(enc, 4 * out * out, {"out": 5}, rng=rng, dtype=f64)
        x = rng.normal(size=(2, 3, 10, 10))
        cases.append((name, net, x, mse_loss(rng.normal(size=(2, 5)))))
    net = MultiHeadNet(*identity_encoder(12), {"out": 7}, rng=rng, dtype=f64)
    cases.append(("dense", net, rng.normal(size=(3, 12)), mse_loss(rng.normal(size=(3, 7)))))
    enc = Sequential([("fc", Dense(12, 16, rng=rng, dtype=f64)), ("relu", ReLU())])
    net = MultiHeadNet(enc, 16, {"out": 4}, rng=rng, dtype=f64)
    cases.append(("relu", net, rng.normal(size=(3, 12)), mse_loss(rng.normal(size=(3, 4)))))

    batch = 4
    dual = DualHeadNet(4, 3, 16, input_size=input_size, rng=rng, dtype=f64)
    x = rng.uniform(size=(batch, 4, input_size, input_size))
    td = _gather_td_loss(rng.normal(size=batch), rng.integers(3, size=batch),
                         rng.integers(16, size=batch))
    cases.append(("dual_head_td", dual, x, td))

    reward = RewardNet(4, 3, input_size=input_size, rng=rng, dtype=f64)
    pair = rng.uniform(size=(batch, 8, input_size, input_size))
    labels = rng.integers(3, size=batch)

    def ce_loss(outputs):
        loss, _, g = softmax_cross_entropy(outputs[0], labels)
        return loss, (g,)
    cases.append(("reward_net_ce", reward, pair, ce_loss))

    return [(name, grad_check(net, x, fn, tolerance=tolerance, eps=eps, n_params=n_params,
                              rng=np.random.default_rng([seed, i])))
            for i, (name, net, x, fn) in enumerate(cases)]


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = b"AVRLNET\x00"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, net, tag=""):
    """Header (magic, version, spec hash, array count) + LE float32 arrays.

    The spec hash covers the architecture and ``tag`` (e.g. a config digest).
    """
    params = net.parameters()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(net.spec_hash(tag))
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def read_checkpoint_hash(path):
    with open(path, "rb") as fh:
        head = fh.read(len(CHECKPOINT_MAGIC) + 4 + 32)
    if len(head) < len(CHECKPOINT_MAGIC) + 36 or not head.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a network checkpoint")
    return head[len(CHECKPOINT_MAGIC) + 4:]


def load_checkpoint(path, net, tag=""):
    """Fill ``net`` from ``path``; the stored spec hash must match ``net`` and ``tag``."""
    with open(path, "rb") as fh:
        data = fh.read()
    off = len(CHECKPOINT_MAGIC)
    if data[:off] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<I", data, off)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off += 4
    if data[off:off + 32] != net.spec_hash(tag):
        raise CheckpointError(f"{path}: spec hash does not match the network/config")
    off += 32
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    params = net.parameters()
    if count != len(params):
        raise CheckpointError(f"{path}: expected {len(params)} arrays, found {count}")
    for p in params:
        nbytes = p.size * 4
        chunk = data[off:off + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated")
        p[...] = np.frombuffer(chunk, dtype="<f4").reshape(p.shape)
        off += nbytes
    if off != len(data):
        raise CheckpointError(f"{path}: trailing bytes")
    return net
