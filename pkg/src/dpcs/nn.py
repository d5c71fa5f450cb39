"""Small feed-forward networks in numpy: forward, reverse-mode gradients, Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of
shape ``(B, fan_in)`` maps to ``X @ W + b``.
"""
from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, ContractViolation, NumericError

VAR_FLOOR = 1e-8
LN_EPS = 1e-5
CHECKPOINT_FORMAT = "dpcs-networks"
CHECKPOINT_VERSION = 1


class InputNormalizer:
    """Running per-feature mean/variance used to whiten network inputs."""

    def __init__(self, dim: int):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0
        self._inv_std = np.ones(dim)

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        if self.count == 0:
            mean, var = b_mean, b_var
        else:
            total = self.count + n
            delta = b_mean - self.mean
            mean = self.mean + delta * (n / total)
            m2 = self.var * self.count + b_var * n + delta**2 * (self.count * n / total)
            var = m2 / total
        self.count += n
        self.mean = mean
        self.var = np.maximum(var, VAR_FLOOR)
        self._inv_std = 1.0 / np.sqrt(self.var)

    def set_state(self, mean, var, count) -> None:
        self.mean = np.array(mean, dtype=np.float64)
        self.var = np.maximum(np.array(var, dtype=np.float64), VAR_FLOOR)
        self.count = float(count)
        self._inv_std = 1.0 / np.sqrt(self.var)

    @property
    def inv_std(self) -> np.ndarray:
        return self._inv_std

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) * self._inv_std

    def copy(self) -> "InputNormalizer":
        out = InputNormalizer(self.mean.shape[0])
        out.set_state(self.mean, self.var, self.count)
        return out


@dataclass
class Gradients:
    """Gradients in the order of :meth:`Mlp.parameters`, plus the input gradient."""

    params: list
    input: Optional[np.ndarray] = None
    n_layers: int = 0

    @property
    def weights(self) -> list:
        return self.params[0:2 * self.n_layers:2]

    @property
    def biases(self) -> list:
        return self.params[1:2 * self.n_layers:2]

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.params)))


class Mlp:
    """ReLU multilayer perceptron with an input normalizer.

    ``output_activation`` is ``"linear"`` or ``"nonnegative"`` (clamped at
    zero).  With ``layer_norm=True`` every hidden layer normalizes its
    pre-activations across units and applies a learned gain and shift.
    """

    def __init__(self, layer_dims: Sequence[int], output_activation: str = "linear",
                 layer_norm: bool = False, rng: Optional[np.random.Generator] = None):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ConfigurationError(f"invalid layer dims {layer_dims!r}")
        if output_activation not in ("linear", "nonnegative"):
            raise ConfigurationError(f"unknown output activation {output_activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layer_dims = dims
        self.output_activation = output_activation
        self.layer_norm = bool(layer_norm)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(np.ascontiguousarray(rng.uniform(-bound, bound, (fan_in, fan_out))))
            self.biases.append(rng.uniform(-bound, bound, fan_out))
        hidden = dims[1:-1]
        self.gains = [np.ones(d) for d in hidden] if self.layer_norm else []
        self.shifts = [np.zeros(d) for d in hidden] if self.layer_norm else []
        self.normalizer = InputNormalizer(dims[0])

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list:
        """Trainable arrays (mutated in place by optimizers and soft updates)."""
        params = []
        for W, b in zip(self.weights, self.biases):
            params += [W, b]
        for g, s in zip(self.gains, self.shifts):
            params += [g, s]
        return params

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "Mlp":
        out = Mlp.__new__(Mlp)
        out.layer_dims = list(self.layer_dims)
        out.output_activation = self.output_activation
        out.layer_norm = self.layer_norm
        out.weights = [W.copy() for W in self.weights]
        out.biases = [b.copy() for b in self.biases]
        out.gains = [g.copy() for g in self.gains]
        out.shifts = [s.copy() for s in self.shifts]
        out.normalizer = self.normalizer.copy()
        return out

    def load_parameters_from(self, other: "Mlp") -> None:
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src
        self.normalizer = other.normalizer.copy()

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim or x.ndim > 2:
            raise ContractViolation(f"expected input of width {self.input_dim}, got shape {x.shape}")
        return x

    # -- forward -------------------------------------------------------------
    def forward(self, x) -> np.ndarray:
        x = self._check_input(x)
        if x.ndim == 1 and not self.layer_norm:
            return kernels.mlp_forward_vec(np.ascontiguousarray(x), self.normalizer.mean,
                                           self.normalizer.inv_std, self.weights, self.biases,
                                           self.output_activation == "nonnegative")
        out, _ = self.forward_cached(x)
        return out

    __call__ = forward

    def forward_cached(self, x, linear_output: bool = False):
        """Forward pass keeping intermediates for :meth:`backward`.

        Returns ``(output, cache)``.  ``linear_output`` skips the output clamp.
        """
        x = self._check_input(x)
        squeeze = x.ndim == 1
        h = self.normalizer.apply(np.atleast_2d(x))
        cache = {"squeeze": squeeze, "acts": [h], "pre": [], "ln": []}
        last = self.n_layers - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            cache["pre"].append(z)
            if k < last:
                if self.layer_norm:
                    mu = z.mean(axis=1, keepdims=True)
                    sd = np.sqrt(z.var(axis=1, keepdims=True) + LN_EPS)
                    u = (z - mu) / sd
                    cache["ln"].append((u, sd))
                    z = self.gains[k] * u + self.shifts[k]
                h = np.maximum(z, 0.0)
                cache["acts"].append(h)
                cache.setdefault("post", []).append(z)
            else:
                h = z if (linear_output or self.output_activation == "linear") else np.maximum(z, 0.0)
        cache["linear_output"] = linear_output
        return (h[0] if squeeze else h), cache

    def _head_mask(self, cache) -> Optional[np.ndarray]:
        if cache["linear_output"] or self.output_activation == "linear":
            return None
        return cache["pre"][-1] > 0.0

    # -- backward ------------------------------------------------------------
    def backward(self, cache, upstream, need_input_grad: bool = True) -> Gradients:
        """Gradients of ``sum(output * upstream)`` w.r.t. all parameters and the input."""
        up = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        out_shape = cache["pre"][-1].shape
        if up.shape != out_shape:
            raise ContractViolation(f"upstream shape {up.shape} does not match output {out_shape}")
        mask = self._head_mask(cache)
        delta = up if mask is None else up * mask
        n = self.n_layers
        dW = [None] * n
        db = [None] * n
        dg = [None] * len(self.gains)
        ds = [None] * len(self.shifts)
        for k in range(n - 1, -1, -1):
            a_prev = cache["acts"][k]
            dW[k] = a_prev.T @ delta
            db[k] = delta.sum(axis=0)
            if k == 0 and not need_input_grad:
                break
            da = delta @ self.weights[k].T
            if k == 0:
                delta = da
                break
            # through hidden layer k-1: relu then optional layer norm
            post = cache["post"][k - 1]
            dz = da * (post > 0.0)
            if self.layer_norm:
                u, sd = cache["ln"][k - 1]
                dg[k - 1] = (dz * u).sum(axis=0)
                ds[k - 1] = dz.sum(axis=0)
                du = dz * self.gains[k - 1]
                dz = (du - du.mean(axis=1, keepdims=True) - u * (du * u).mean(axis=1, keepdims=True)) / sd
            delta = dz
        params = []
        for w, b in zip(dW, db):
            params += [w, b]
        for g, s in zip(dg, ds):
            params += [g, s]
        dx = None
        if need_input_grad:
            dx = delta * self.normalizer.inv_std
            if cache["squeeze"]:
                dx = dx[0]
        return Gradients(params, dx, n)

    # -- serialization -------------------------------------------------------
    def describe(self) -> dict:
        return {"layer_dims": self.layer_dims, "output_activation": self.output_activation,
                "layer_norm": self.layer_norm}

    def arrays(self, prefix: str) -> dict:
        out = {}
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}/W{k}"] = W
            out[f"{prefix}/b{k}"] = b
        for k, (g, s) in enumerate(zip(self.gains, self.shifts)):
            out[f"{prefix}/g{k}"] = g
            out[f"{prefix}/s{k}"] = s
        out[f"{prefix}/norm_mean"] = self.normalizer.mean
        out[f"{prefix}/norm_var"] = self.normalizer.var
        out[f"{prefix}/norm_count"] = np.array([self.normalizer.count])
        return out

    @classmethod
    def from_arrays(cls, desc: dict, arrays, prefix: str) -> "Mlp":
        net = cls(desc["layer_dims"], desc["output_activation"], desc.get("layer_norm", False))
        try:
            for k in range(net.n_layers):
                net.weights[k] = _checked(arrays[f"{prefix}/W{k}"], net.weights[k].shape, prefix)
                net.biases[k] = _checked(arrays[f"{prefix}/b{k}"], net.biases[k].shape, prefix)
            for k in range(len(net.gains)):
                net.gains[k] = _checked(arrays[f"{prefix}/g{k}"], net.gains[k].shape, prefix)
                net.shifts[k] = _checked(arrays[f"{prefix}/s{k}"], net.shifts[k].shape, prefix)
            net.normalizer.set_state(arrays[f"{prefix}/norm_mean"], arrays[f"{prefix}/norm_var"],
                                     float(np.asarray(arrays[f"{prefix}/norm_count"]).reshape(-1)[0]))
        except KeyError as exc:
            raise ConfigurationError(f"checkpoint is missing array {exc.args[0]!r}") from None
        return net


def _checked(arr, shape, prefix) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if arr.shape != tuple(shape):
        raise ConfigurationError(f"checkpoint array for {prefix!r} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"checkpoint array for {prefix!r} contains non-finite values")
    return arr


# -- optimizer ---------------------------------------------------------------
@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(params: list, grads: list, state: AdamState) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    if len(params) != len(grads):
        raise ContractViolation("params/grads length mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to adam_step")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ContractViolation(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- gradient verification ---------------------------------------------------
def _rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _tail_from_post(net: Mlp, k: int, post: np.ndarray) -> np.ndarray:
    """Continue a forward pass from the post-normalization pre-activation of hidden layer ``k``."""
    h = np.maximum(post, 0.0)
    last = net.n_layers - 1
    for j in range(k + 1, net.n_layers):
        z = h @ net.weights[j] + net.biases[j]
        if j < last:
            if net.layer_norm:
                z = net.gains[j] * (z - z.mean(axis=1, keepdims=True)) / np.sqrt(
                    z.var(axis=1, keepdims=True) + LN_EPS) + net.shifts[j]
            h = np.maximum(z, 0.0)
        else:
            h = z if net.output_activation == "linear" else np.maximum(z, 0.0)
    return h


def _tail_from_pre(net: Mlp, k: int, z: np.ndarray) -> np.ndarray:
    if k == net.n_layers - 1:
        return z if net.output_activation == "linear" else np.maximum(z, 0.0)
    if net.layer_norm:
        z = net.gains[k] * (z - z.mean(axis=1, keepdims=True)) / np.sqrt(
            z.var(axis=1, keepdims=True) + LN_EPS) + net.shifts[k]
    return _tail_from_post(net, k, z)


def numeric_gradients(net: Mlp, x, upstream, h: float = 1e-5, method: str = "batched"):
    """Central-difference gradients of ``sum(net(x) * upstream)``.

    ``method="naive"`` perturbs every parameter in place and re-runs the
    forward pass; ``"batched"`` evaluates all perturbations of one layer's
    parameters as a single batch by re-entering the network downstream of
    that layer.  Both evaluate the forward map only.
    """
    x = np.asarray(x, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64)

    def f(inp):
        return np.sum(np.atleast_2d(net.forward_cached(inp)[0]) * up, axis=-1)

    if method == "naive":
        grads = []
        for p in net.parameters():
            g = np.empty_like(p)
            flat = p.reshape(-1)
            gf = g.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + h
                fp = f(x)[0]
                flat[idx] = orig - h
                fm = f(x)[0]
                flat[idx] = orig
                gf[idx] = (fp - fm) / (2 * h)
            grads.append(g)
    elif method == "batched":
        _, cache = net.forward_cached(x)
        acts, pres = cache["acts"], cache["pre"]
        posts = cache.get("post", [])
        grads_w, grads_b = [], []
        for k in range(net.n_layers):
            a = acts[k][0]
            z = pres[k][0]
            fan_in, fan_out = net.weights[k].shape
            # W[i, o] +/- h shifts z[o] by +/- h * a[i]
            eye = np.eye(fan_out)
            shift = (a[:, None, None] * eye[None, :, :]).reshape(fan_in * fan_out, fan_out)
            plus = np.sum(_tail_from_pre(net, k, z + h * shift) * up, axis=1)
            minus = np.sum(_tail_from_pre(net, k, z - h * shift) * up, axis=1)
            grads_w.append(((plus - minus) / (2 * h)).reshape(fan_in, fan_out))
            plus = np.sum(_tail_from_pre(net, k, z + h * eye) * up, axis=1)
            minus = np.sum(_tail_from_pre(net, k, z - h * eye) * up, axis=1)
            grads_b.append((plus - minus) / (2 * h))
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads += [gw, gb]
        for k in range(len(net.gains)):
            u, _ = cache["ln"][k]
            u = u[0]
            post = posts[k][0]
            eye = np.eye(u.shape[0])
            gp = np.sum(_tail_from_post(net, k, post + h * eye * u) * up, axis=1)
            gm = np.sum(_tail_from_post(net, k, post - h * eye * u) * up, axis=1)
            sp = np.sum(_tail_from_post(net, k, post + h * eye) * up, axis=1)
            sm = np.sum(_tail_from_post(net, k, post - h * eye) * up, axis=1)
            grads += [(gp - gm) / (2 * h), (sp - sm) / (2 * h)]
    else:
        raise ValueError(f"unknown method {method!r}")

    eye = np.eye(x.shape[0])
    dx = (f(x + h * eye) - f(x - h * eye)) / (2 * h)
    return grads, dx


def finite_diff_check(net: Mlp, x, h: float = 1e-5, upstream=None, method: str = "batched",
                      floor: float = 1e-6, rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between :meth:`Mlp.backward` and central differences.

    Covers every trainable parameter and the input vector ``x``.  Relative
    errors use ``max(|analytic|, |numeric|, floor)`` as denominator.
    """
    if h <= 0:
        raise ContractViolation("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    if upstream is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        upstream = rng.standard_normal(net.output_dim)
    upstream = np.asarray(upstream, dtype=np.float64)
    _, cache = net.forward_cached(x)
    analytic = net.backward(cache, upstream)
    numeric, dx = numeric_gradients(net, x, upstream, h, method)
    err = _rel_err(analytic.input, dx, floor)
    for a, n in zip(analytic.params, numeric):
        err = max(err, _rel_err(a, n, floor))
    return err


def min_kink_distance(net: Mlp, x) -> float:
    """Smallest |pre-activation| over ReLU units for input ``x`` (distance to a kink)."""
    _, cache = net.forward_cached(x)
    zs = list(cache.get("post", []))
    if net.output_activation == "nonnegative":
        zs.append(cache["pre"][-1])
    return float(min(np.min(np.abs(z)) for z in zs)) if zs else float("inf")


# -- checkpoint files ----------------------------------------------------------
def save_networks(path, networks: dict, meta: Optional[dict] = None) -> None:
    """Write named networks to a versioned ``.npz`` archive.

    The archive holds one ``__meta__`` JSON entry (format, version, per-network
    architecture, caller metadata) and float64 arrays keyed ``<name>/<array>``.
    """
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
              "networks": {name: net.describe() for name, net in networks.items()},
              "meta": meta or {}}
    arrays = {"__meta__": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for name, net in networks.items():
        arrays.update(net.arrays(name))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_networks(path):
    """Inverse of :func:`save_networks`; returns ``(networks, meta)``."""
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as exc:
        raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from None
    if "__meta__" not in arrays:
        raise ConfigurationError(f"{path} is not a network checkpoint (no header)")
    try:
        header = json.loads(arrays.pop("__meta__").tobytes().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"corrupt checkpoint header in {path}: {exc}") from None
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format in {path}: "
                                 f"{header.get('format')!r} v{header.get('version')!r}")
    nets = {name: Mlp.from_arrays(desc, arrays, name) for name, desc in header["networks"].items()}
    return nets, header.get("meta", {})
