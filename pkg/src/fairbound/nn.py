"""A small fully connected network with hand-written reverse-mode gradients.

Only what the encoder, decoder and classifier heads need: dense layers with
ReLU (or tanh) hidden activations, an identity or tanh output layer, optional
identity skips, mean-squared and class-weighted cross-entropy losses, the
composite reconstruction + MMD objective, SGD, and a flat binary checkpoint.
"""

from __future__ import annotations

import dataclasses
import io
import struct
from typing import Sequence

import numpy as np

from fairbound.core import FairboundError, TooFewSamples
from fairbound.mmd import KernelSpec, mmd2_unbiased, mmd2_with_grad

_ACTIVATIONS = ("relu", "tanh", "identity")


@dataclasses.dataclass(frozen=True)
class NetworkSpec:
    """Layer widths ``(d_in, hidden..., d_out)`` and structural options.

    With ``skip_every=k > 0`` the output of hidden layer ``l`` gets the
    activation of layer ``l - k`` added whenever ``l`` is a multiple of ``k``
    and the two widths agree.
    """

    widths: tuple[int, ...]
    activation: str = "relu"
    skip_every: int = 0
    seed: int = 0
    output_activation: str = "identity"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2:
            raise ValueError("need an input width and at least one layer")
        if any(w <= 0 for w in widths):
            raise ValueError(f"widths must be positive, got {widths}")
        for act in (self.activation, self.output_activation):
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if self.skip_every < 0:
            raise ValueError("skip_every must be non-negative")
        object.__setattr__(self, "widths", widths)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def d_in(self) -> int:
        return self.widths[0]

    @property
    def d_out(self) -> int:
        return self.widths[-1]

    @classmethod
    def mlp(cls, d_in: int, d_out: int, hidden: Sequence[int] = (64, 64, 64), **kw) -> "NetworkSpec":
        return cls((d_in, *hidden, d_out), **kw)

    @classmethod
    def seven_net(cls, d_in: int, d_out: int, seed: int = 0) -> "NetworkSpec":
        """Seven dense layers, hidden width eight times the input, skips every two layers."""
        return cls((d_in, *([8 * d_in] * 6), d_out), skip_every=2, seed=seed)

    def skip_source(self, layer: int) -> int | None:
        """Index of the activation added to hidden ``layer`` (1-based), if any."""
        k = self.skip_every
        if k == 0 or layer >= self.n_layers or layer % k or layer - k < 0:
            return None
        return layer - k if self.widths[layer - k] == self.widths[layer] else None

    def init(self) -> "NetworkParams":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(self.seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return NetworkParams(weights, biases)


@dataclasses.dataclass
class NetworkParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in declaration order: W1, b1, W2, b2, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams([np.zeros_like(W) for W in self.weights], [np.zeros_like(b) for b in self.biases])

    def check(self, spec: NetworkSpec):
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise ValueError("parameter count does not match the spec")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (spec.widths[l], spec.widths[l + 1]) or b.shape != (spec.widths[l + 1],):
                raise ValueError(f"layer {l + 1} has shapes {W.shape}, {b.shape}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l + 1} has non-finite parameters")


@dataclasses.dataclass
class Cache:
    acts: list[np.ndarray]
    pres: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.acts[-1]


def _act(name, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    return x


def _act_grad(name, pre, post):
    if name == "relu":
        return (pre > 0).astype(pre.dtype)
    if name == "tanh":
        return 1.0 - post * post
    return np.ones_like(pre)


def forward(spec: NetworkSpec, params: NetworkParams, X) -> Cache:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != spec.d_in:
        raise ValueError(f"expected input of width {spec.d_in}, got shape {X.shape}")
    acts, pres = [X], []
    for l in range(1, spec.n_layers + 1):
        pre = acts[-1] @ params.weights[l - 1] + params.biases[l - 1]
        if l == spec.n_layers:
            out = _act(spec.output_activation, pre)
        else:
            out = _act(spec.activation, pre)
            src = spec.skip_source(l)
            if src is not None:
                out = out + acts[src]
        pres.append(pre)
        acts.append(out)
    return Cache(acts, pres)


def predict(spec: NetworkSpec, params: NetworkParams, X) -> np.ndarray:
    return forward(spec, params, X).output


def backward(spec: NetworkSpec, params: NetworkParams, cache: Cache, grad_out) -> tuple[NetworkParams, np.ndarray]:
    """Gradients of a scalar loss given its gradient with respect to the output.

    Returns the parameter gradients and the gradient with respect to the input.
    """
    L = spec.n_layers
    g_act = [None] * (L + 1)
    g_act[L] = np.asarray(grad_out, dtype=float)
    gW, gb = [None] * L, [None] * L
    for l in range(L, 0, -1):
        g = g_act[l]
        if l < L:
            src = spec.skip_source(l)
            if src is not None:
                g_act[src] = g if g_act[src] is None else g_act[src] + g
            g = g * _act_grad(spec.activation, cache.pres[l - 1], _act(spec.activation, cache.pres[l - 1]))
        elif spec.output_activation != "identity":
            g = g * _act_grad(spec.output_activation, cache.pres[l - 1], cache.acts[l])
        gW[l - 1] = cache.acts[l - 1].T @ g
        gb[l - 1] = g.sum(axis=0)
        g_in = g @ params.weights[l - 1].T
        g_act[l - 1] = g_in if g_act[l - 1] is None else g_act[l - 1] + g_in
    return NetworkParams(gW, gb), g_act[0]


# ----------------------------------------------------------------------------
# losses


def mse_loss(pred, target, per_sample: bool = False) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient.

    Averages over all entries, or with ``per_sample`` sums over features and
    averages over rows (the squared reconstruction distance per record).
    """
    diff = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    denom = diff.shape[0] if per_sample else diff.size
    return float((diff * diff).sum() / denom), 2.0 * diff / denom


def balanced_class_weights(labels, n_classes: int) -> np.ndarray:
    """Per-class weights ``1 / count``, so every present class carries equal total weight."""
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=n_classes).astype(float)
    return np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)


def cross_entropy_loss(logits, labels, class_weights=None) -> tuple[float, np.ndarray]:
    """Weighted softmax cross-entropy, normalized by the total sample weight."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n, k = logits.shape
    w = np.ones(n) if class_weights is None else np.asarray(class_weights, dtype=float)[labels]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    total = w.sum()
    value = -float((w * log_p[np.arange(n), labels]).sum() / total)
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return value, grad * (w / total)[:, None]


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = np.exp(z - z.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


STANDARDIZE_EPS = 1e-6


def standardize(Z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-column standardization with pooled statistics: ``(Zs, mean, std)``."""
    mu = Z.mean(axis=0)
    sd = np.sqrt(Z.var(axis=0) + STANDARDIZE_EPS)
    return (Z - mu) / sd, mu, sd


def standardize_backward(Zs, sd, g) -> np.ndarray:
    """Gradient with respect to ``Z`` given the gradient ``g`` with respect to ``Zs``."""
    return (g - g.mean(axis=0) - Zs * (g * Zs).mean(axis=0)) / sd


def whiten(Z) -> tuple[np.ndarray, tuple]:
    """ZCA whitening with pooled statistics: ``(Zw, state)`` for :func:`whiten_backward`.

    ``Zw = (Z - mean) C^{-1/2}`` with ``C`` the covariance plus a small ridge.
    """
    Zc = Z - Z.mean(axis=0)
    cov = Zc.T @ Zc / len(Z) + STANDARDIZE_EPS * np.eye(Z.shape[1])
    lam, U = np.linalg.eigh(cov)
    root = np.sqrt(np.maximum(lam, STANDARDIZE_EPS))
    W = (U / root) @ U.T
    return Zc @ W, (Zc, W, U, root)


def whiten_backward(state, g) -> np.ndarray:
    Zc, W, U, root = state
    n = len(Zc)
    # divided differences of t -> t^{-1/2} at the eigenvalues, in a cancellation-free form
    F = -1.0 / (np.outer(root, root) * (root[:, None] + root[None, :]))
    G = U.T @ (Zc.T @ g) @ U
    S = U @ (F * G) @ U.T
    S = 0.5 * (S + S.T)
    dZc = g @ W + 2.0 * Zc @ S / n
    return dZc - dZc.mean(axis=0)


CODE_NORMS = ("none", "standardize", "whiten")


def normalize_codes(Z, mode: str):
    """Map codes through the shared affine normalization ``mode``.

    Returns the normalized codes and a function taking gradients with
    respect to them back to gradients with respect to ``Z``.
    """
    if mode == "none":
        return Z, lambda g: g
    if mode == "standardize":
        Zs, _, sd = standardize(Z)
        return Zs, lambda g: standardize_backward(Zs, sd, g)
    if mode == "whiten":
        Zw, state = whiten(Z)
        return Zw, lambda g: whiten_backward(state, g)
    raise ValueError(f"unknown code normalization {mode!r}")


@dataclasses.dataclass(frozen=True)
class CompositeLoss:
    total: float
    pretext: float
    mmd2: float


def composite_loss_and_grad(enc_spec, enc, dec_spec, dec, X, s, lam: float,
                            kernel: KernelSpec = KernelSpec(), epsilon: float = 0.0,
                            code_noise=None, code_norm: str = "none"):
    """Reconstruction loss plus ``lam * (MMD^2 - epsilon)`` between the groups' codes.

    Returns ``(CompositeLoss, encoder grads, decoder grads)``.  The MMD term
    is the unbiased estimate between ``f(x)`` over ``s == 0`` and over
    ``s == 1``.  With ``lam == 0`` the MMD term contributes nothing, and is
    only reported when both groups hold at least two samples.  ``code_noise``,
    if given, is added to the codes before decoding (the MMD term sees the
    clean codes).  ``code_norm`` applies one batch-wide affine map to the
    codes of both groups before the MMD (see :func:`normalize_codes`), so the
    penalty no longer depends on the scale the encoder picks.
    """
    X = np.asarray(X, dtype=float)
    s = np.asarray(s).astype(int).ravel()
    enc_cache = forward(enc_spec, enc, X)
    Z = enc_cache.output
    dec_cache = forward(dec_spec, dec, Z if code_noise is None else Z + code_noise)
    pretext, g_rec = mse_loss(dec_cache.output, X, per_sample=True)
    dec_grads, g_code = backward(dec_spec, dec, dec_cache, g_rec)
    g0, g1 = s == 0, s == 1
    enough = g0.sum() >= 2 and g1.sum() >= 2
    if lam != 0.0:
        if not enough:
            raise TooFewSamples(f"MMD term needs 2 samples per group, got {g0.sum()} and {g1.sum()}")
        Zm, back = normalize_codes(Z, code_norm)
        mmd2, gz0, gz1 = mmd2_with_grad(Zm[g0], Zm[g1], kernel)
        g_mmd = np.zeros_like(Z)
        g_mmd[g0] = gz0
        g_mmd[g1] = gz1
        g_code = g_code + lam * back(g_mmd)
    else:
        Zm = normalize_codes(Z, code_norm)[0]
        mmd2 = mmd2_unbiased(Zm[g0], Zm[g1], kernel) if enough else float("nan")
    enc_grads, _ = backward(enc_spec, enc, enc_cache, g_code)
    penalty = lam * (mmd2 - epsilon) if lam != 0.0 else 0.0
    return CompositeLoss(pretext + penalty, pretext, mmd2), enc_grads, dec_grads


def loss_and_grad(spec: NetworkSpec, params: NetworkParams, X, target, loss: str = "mse", class_weights=None):
    """Loss of a single network against ``target`` and the parameter gradients.

    ``loss`` is ``"mse"`` (regression/reconstruction) or ``"cross_entropy"``
    (integer class labels, optionally class-weighted).  The composite
    objective with its MMD term lives in :func:`composite_loss_and_grad`.
    """
    cache = forward(spec, params, X)
    if loss == "mse":
        value, g = mse_loss(cache.output, target)
    elif loss == "cross_entropy":
        value, g = cross_entropy_loss(cache.output, target, class_weights)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    grads, _ = backward(spec, params, cache, g)
    return value, grads


# ----------------------------------------------------------------------------
# optimization


def sgd_step(params: NetworkParams, grads: NetworkParams, lr: float) -> NetworkParams:
    """Plain gradient step ``p - lr * g``, returned as new parameters."""
    return NetworkParams(
        [W - lr * gW for W, gW in zip(params.weights, grads.weights)],
        [b - lr * gb for b, gb in zip(params.biases, grads.biases)],
    )


@dataclasses.dataclass(frozen=True)
class StepDecay:
    """Learning rate divided by ``factor`` at each milestone epoch."""

    base_lr: float
    milestones: tuple[int, ...] = ()
    factor: float = 10.0

    def __call__(self, epoch: int) -> float:
        return self.base_lr / self.factor ** sum(epoch >= m for m in self.milestones)


class SGD:
    """Stochastic gradient descent with optional heavy-ball momentum, updating in place."""

    def __init__(self, params: NetworkParams, momentum: float = 0.0):
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.params = params
        self.momentum = momentum
        self.velocity = params.zeros_like() if momentum else None

    def step(self, grads: NetworkParams, lr: float):
        if self.velocity is None:
            for p, g in zip(self.params.arrays(), grads.arrays()):
                p -= lr * g
            return
        for p, v, g in zip(self.params.arrays(), self.velocity.arrays(), grads.arrays()):
            v *= self.momentum
            v += g
            p -= lr * v


# ----------------------------------------------------------------------------
# checkpoints

_MAGIC = b"FBNN"
_VERSION = 1


class CheckpointError(FairboundError):
    pass


def _write_network(buf, spec: NetworkSpec, params: NetworkParams):
    params.check(spec)
    act = _ACTIVATIONS.index(spec.activation)
    out_act = _ACTIVATIONS.index(spec.output_activation)
    buf.write(struct.pack("<I", spec.n_layers))
    buf.write(struct.pack(f"<{len(spec.widths)}I", *spec.widths))
    buf.write(struct.pack("<IIIq", act, out_act, spec.skip_every, spec.seed))
    for arr in params.arrays():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))


def _read_exact(buf, n):
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError("checkpoint is truncated")
    return data


def _read_network(buf):
    (n_layers,) = struct.unpack("<I", _read_exact(buf, 4))
    widths = struct.unpack(f"<{n_layers + 1}I", _read_exact(buf, 4 * (n_layers + 1)))
    act, out_act, skip, seed = struct.unpack("<IIIq", _read_exact(buf, 20))
    spec = NetworkSpec(widths, _ACTIVATIONS[act], skip, seed, _ACTIVATIONS[out_act])
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        W = np.frombuffer(_read_exact(buf, 8 * fan_in * fan_out), dtype="<f8").reshape(fan_in, fan_out)
        b = np.frombuffer(_read_exact(buf, 8 * fan_out), dtype="<f8")
        weights.append(W.astype(float))
        biases.append(b.astype(float))
    return spec, NetworkParams(weights, biases)


def dumps_networks(networks: Sequence[tuple[NetworkSpec, NetworkParams]]) -> bytes:
    """Serialize networks: a header, then each network's spec and its
    matrices row-major as little-endian float64."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<II", _VERSION, len(networks)))
    for spec, params in networks:
        _write_network(buf, spec, params)
    return buf.getvalue()


def loads_networks(data: bytes) -> list[tuple[NetworkSpec, NetworkParams]]:
    buf = io.BytesIO(data)
    if _read_exact(buf, 4) != _MAGIC:
        raise CheckpointError("not a network checkpoint")
    version, count = struct.unpack("<II", _read_exact(buf, 8))
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out = [_read_network(buf) for _ in range(count)]
    if buf.read(1):
        raise CheckpointError("trailing bytes after last network")
    return out


def save_networks(path, networks):
    with open(path, "wb") as fh:
        fh.write(dumps_networks(networks))


def load_networks(path):
    with open(path, "rb") as fh:
        return loads_networks(fh.read())
