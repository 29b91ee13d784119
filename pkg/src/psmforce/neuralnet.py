"""Small float64 network engine: dense and LSTM layers trained with truncated BPTT and Adam.

Sequences are laid out time-major, ``(T, B, features)``.  Dense, ReLU and
dropout layers act on every time step independently; LSTM layers carry
``(h, c)`` across calls when asked to, but gradients never flow into a
carried initial state (truncated BPTT).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

FORMAT_MAGIC = b"PSMFORCE-NET"
FORMAT_VERSION = 1
BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


class ModelFormatError(ValueError):
    """Corrupt, truncated or incompatible model file."""


class DimensionError(ValueError):
    pass


# --------------------------------------------------------------------- spec


@dataclass(frozen=True)
class LSTM:
    input_dim: int
    hidden_dim: int
    trainable: bool = True

    @property
    def in_dim(self) -> int:
        return self.input_dim

    @property
    def out_dim(self) -> int:
        return self.hidden_dim


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int
    trainable: bool = True


@dataclass(frozen=True)
class ReLU:
    trainable: bool = True


@dataclass(frozen=True)
class Dropout:
    p: float = 0.2
    trainable: bool = True

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError("dropout p must lie in [0, 1)")


Layer = Union[LSTM, Dense, ReLU, Dropout]
_KINDS = {"LSTM": LSTM, "Dense": Dense, "ReLU": ReLU, "Dropout": Dropout}
_WEIGHT_NAMES = {"LSTM": ("Wx", "Wh"), "Dense": ("W",)}


def _kind(layer) -> str:
    return type(layer).__name__


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        dim = None
        for i, layer in enumerate(self.layers):
            if not isinstance(layer, (LSTM, Dense, ReLU, Dropout)):
                raise TypeError(f"layer {i}: unsupported layer {layer!r}")
            if isinstance(layer, (LSTM, Dense)):
                if dim is not None and layer.in_dim != dim:
                    raise DimensionError(
                        f"layer {i} ({_kind(layer)}) expects {layer.in_dim} inputs, previous layer gives {dim}"
                    )
                dim = layer.out_dim

    @property
    def input_dim(self) -> int:
        for layer in self.layers:
            if isinstance(layer, (LSTM, Dense)):
                return layer.in_dim
        raise DimensionError("network has no parametric layer")

    @property
    def output_dim(self) -> int:
        for layer in reversed(self.layers):
            if isinstance(layer, (LSTM, Dense)):
                return layer.out_dim
        raise DimensionError("network has no parametric layer")

    def frozen(self, upto: int | None = None) -> "NetworkSpec":
        """Copy with layers ``[0, upto)`` (all when None) marked non-trainable."""
        n = len(self.layers) if upto is None else upto
        return NetworkSpec(tuple(
            _replace(layer, trainable=False) if i < n else layer for i, layer in enumerate(self.layers)
        ))

    def to_json(self) -> list[dict]:
        out = []
        for layer in self.layers:
            d = {"type": _kind(layer)}
            d.update({k: v for k, v in layer.__dict__.items()})
            out.append(d)
        return out

    @classmethod
    def from_json(cls, items: list[dict]) -> "NetworkSpec":
        layers = []
        for d in items:
            d = dict(d)
            kind = _KINDS[d.pop("type")]
            layers.append(kind(**d))
        return cls(tuple(layers))


def _replace(layer, **kw):
    d = dict(layer.__dict__)
    d.update(kw)
    return type(layer)(**d)


# -------------------------------------------------------------------- state


def init_params(spec: NetworkSpec, seed: int = 0) -> list[dict[str, np.ndarray]]:
    """Uniform +-1/sqrt(fan_in) weights, zero biases, LSTM forget-gate bias +1."""
    rng = np.random.default_rng(seed)
    params = []
    for layer in spec.layers:
        if isinstance(layer, Dense):
            a = 1.0 / np.sqrt(layer.in_dim)
            params.append({"W": rng.uniform(-a, a, (layer.in_dim, layer.out_dim)),
                           "b": np.zeros(layer.out_dim)})
        elif isinstance(layer, LSTM):
            H = layer.hidden_dim
            ax, ah = 1.0 / np.sqrt(layer.input_dim), 1.0 / np.sqrt(H)
            b = np.zeros(4 * H)
            b[H:2 * H] = 1.0
            params.append({"Wx": rng.uniform(-ax, ax, (layer.input_dim, 4 * H)),
                           "Wh": rng.uniform(-ah, ah, (H, 4 * H)),
                           "b": b})
        else:
            params.append({})
    return params


@dataclass
class NetworkState:
    """Parameters, Adam moments, carried recurrent state and the last forward cache."""

    params: list
    moments: list = field(default_factory=list)
    step: int = 0
    carry: list = field(default_factory=list)
    cache: dict | None = None

    def copy(self) -> "NetworkState":
        return NetworkState([{k: v.copy() for k, v in p.items()} for p in self.params],
                            [{k: (m.copy(), v.copy()) for k, (m, v) in mo.items()} for mo in self.moments],
                            self.step,
                            [None if c is None else (c[0].copy(), c[1].copy()) for c in self.carry])


class Network:
    """A spec plus its mutable state.  Not safe for concurrent mutation."""

    def __init__(self, spec: NetworkSpec, seed: int = 0, params=None):
        self.spec = spec
        if params is None:
            params = init_params(spec, seed)
        _check_params(spec, params)
        self.state = NetworkState(params, [dict() for _ in spec.layers], 0,
                                  [None] * len(spec.layers))

    @property
    def params(self) -> list:
        return self.state.params

    def reset_state(self) -> None:
        self.state.carry = [None] * len(self.spec.layers)

    def first_trainable(self) -> int:
        for i, layer in enumerate(self.spec.layers):
            if layer.trainable and self.params[i]:
                return i
        return len(self.spec.layers)

    def with_spec(self, spec: NetworkSpec) -> "Network":
        """Same parameters (copied) under a spec with identical shapes, e.g. new trainable flags."""
        return Network(spec, params=[{k: v.copy() for k, v in p.items()} for p in self.params])

    # ------------------------------------------------------------ forward

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None,
                carry: bool = False, start: int = 0, stop: int | None = None,
                keep_cache: bool = True) -> np.ndarray:
        """Run layers ``[start, stop)`` on ``x`` of shape (T, B, D) or (T, D).

        With ``carry`` the LSTM layers start from (and update) the stored
        recurrent state; otherwise they start from zeros.  Dropout is active
        only when ``train`` is true.
        """
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[:, None, :]
        if x.ndim != 3:
            raise DimensionError(f"expected (T, B, D) input, got shape {x.shape}")
        layers = self.spec.layers
        stop = len(layers) if stop is None else stop
        expect = _layer_input_dim(self.spec, start)
        if expect is not None and x.shape[2] != expect:
            raise DimensionError(f"layer {start} expects {expect} input features, got {x.shape[2]}")
        if train and rng is None and any(isinstance(l, Dropout) and l.p > 0 for l in layers[start:stop]):
            raise ValueError("train-mode dropout needs an rng")
        caches = []
        for i in range(start, stop):
            layer, p = layers[i], self.params[i]
            if isinstance(layer, Dense):
                y = _dense(x, p["W"]) + p["b"]
                caches.append(x)
            elif isinstance(layer, ReLU):
                y = np.maximum(x, 0.0)
                caches.append(x)
            elif isinstance(layer, Dropout):
                if train and layer.p > 0:
                    mask = (rng.random(x.shape) >= layer.p) / (1.0 - layer.p)
                    y = x * mask
                else:
                    mask = None
                    y = x
                caches.append(mask)
            else:
                init = self.state.carry[i] if carry else None
                y, c, final = _lstm_forward(p, x, init)
                if carry:
                    self.state.carry[i] = final
                caches.append(c)
            x = y
        if keep_cache:
            self.state.cache = {"start": start, "stop": stop, "caches": caches, "out": x}
        return x[:, 0, :] if squeeze else x

    def predict(self, x, carry: bool = False) -> np.ndarray:
        return self.forward(x, train=False, carry=carry, keep_cache=False)

    # ----------------------------------------------------------- backward

    def loss_and_grads(self, target, l2: float = 0.0, mask=None):
        """MSE (+ l2 * sum of squared trainable weights) and its gradients.

        Requires a cached forward pass.  ``mask`` of shape (T, B) selects the
        time steps that count toward the loss.  Returns ``(loss, grads)``
        where ``grads[i]`` is empty for frozen or parameter-free layers.
        """
        cache = self.state.cache
        if cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        y = cache["out"]
        t = np.asarray(target, dtype=float)
        if t.ndim == 2:
            t = t[:, None, :]
        if t.shape != y.shape:
            raise DimensionError(f"target shape {t.shape} does not match output {y.shape}")
        diff = y - t
        if mask is None:
            w = np.ones(y.shape[:2])
        else:
            w = np.asarray(mask, dtype=float).reshape(y.shape[:2])
        denom = max(w.sum(), 1.0) * y.shape[2]
        mse = float(np.sum(w[:, :, None] * diff ** 2) / denom)
        reg = 0.0
        for i, layer in enumerate(self.spec.layers):
            if layer.trainable and _kind(layer) in _WEIGHT_NAMES:
                reg += sum(float(np.sum(self.params[i][n] ** 2)) for n in _WEIGHT_NAMES[_kind(layer)])
        dy = 2.0 * w[:, :, None] * diff / denom
        grads = self.backward(dy)
        if l2:
            for i, layer in enumerate(self.spec.layers):
                if grads[i] and _kind(layer) in _WEIGHT_NAMES:
                    for n in _WEIGHT_NAMES[_kind(layer)]:
                        grads[i][n] = grads[i][n] + 2.0 * l2 * self.params[i][n]
        return mse + l2 * reg, grads

    def backward(self, dy) -> list[dict]:
        """Backpropagate ``dL/dy`` through the cached forward pass."""
        cache = self.state.cache
        if cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        start, stop, caches = cache["start"], cache["stop"], cache["caches"]
        grads: list[dict] = [dict() for _ in self.spec.layers]
        lowest = max(start, self.first_trainable())
        dx = np.asarray(dy, dtype=float)
        if dx.ndim == 2:
            dx = dx[:, None, :]
        for i in range(stop - 1, lowest - 1, -1):
            layer, p, c = self.spec.layers[i], self.params[i], caches[i - start]
            need_dx = i > lowest
            if isinstance(layer, Dense):
                if layer.trainable:
                    x2 = c.reshape(-1, c.shape[-1])
                    d2 = dx.reshape(-1, dx.shape[-1])
                    grads[i] = {"W": x2.T @ d2, "b": d2.sum(axis=0)}
                if need_dx:
                    dx = _dense(dx, p["W"].T)
            elif isinstance(layer, ReLU):
                dx = dx * (c > 0)
            elif isinstance(layer, Dropout):
                if c is not None:
                    dx = dx * c
            else:
                g, dx_in = _lstm_backward(p, c, dx, need_dx)
                if layer.trainable:
                    grads[i] = g
                dx = dx_in
        return grads

    # ---------------------------------------------------------------- adam

    def adam_step(self, grads: list[dict], lr: float) -> None:
        """One bias-corrected Adam update of every trainable tensor with a gradient."""
        self.state.step += 1
        t = self.state.step
        c1 = 1.0 - BETA1 ** t
        c2 = 1.0 - BETA2 ** t
        for i, layer in enumerate(self.spec.layers):
            if not layer.trainable or not grads[i]:
                continue
            mom = self.state.moments[i]
            for name, g in grads[i].items():
                if name not in mom:
                    mom[name] = (np.zeros_like(g), np.zeros_like(g))
                m, v = mom[name]
                m *= BETA1
                m += (1.0 - BETA1) * g
                v *= BETA2
                v += (1.0 - BETA2) * g * g
                self.params[i][name] -= lr * (m / c1) / (np.sqrt(v / c2) + EPS)

    # ------------------------------------------------------------ helpers

    def snapshot(self) -> list[dict]:
        return [{k: v.copy() for k, v in p.items()} for p in self.params]

    def restore(self, params: list[dict]) -> None:
        for dst, src in zip(self.params, params):
            for k in dst:
                dst[k][...] = src[k]


def _layer_input_dim(spec: NetworkSpec, start: int) -> int | None:
    for layer in spec.layers[start:]:
        if isinstance(layer, (LSTM, Dense)):
            return layer.in_dim
    return None


def _check_params(spec: NetworkSpec, params) -> None:
    if len(params) != len(spec.layers):
        raise DimensionError(f"{len(params)} parameter blocks for {len(spec.layers)} layers")
    ref = init_shapes(spec)
    for i, (want, got) in enumerate(zip(ref, params)):
        if set(want) != set(got):
            raise DimensionError(f"layer {i} ({_kind(spec.layers[i])}): tensors {sorted(got)} != {sorted(want)}")
        for name, shape in want.items():
            if tuple(np.shape(got[name])) != shape:
                raise DimensionError(
                    f"layer {i} ({_kind(spec.layers[i])}) tensor {name}: shape {np.shape(got[name])}, expected {shape}"
                )


def init_shapes(spec: NetworkSpec) -> list[dict[str, tuple]]:
    out = []
    for layer in spec.layers:
        if isinstance(layer, Dense):
            out.append({"W": (layer.in_dim, layer.out_dim), "b": (layer.out_dim,)})
        elif isinstance(layer, LSTM):
            D, H = layer.input_dim, layer.hidden_dim
            out.append({"Wx": (D, 4 * H), "Wh": (H, 4 * H), "b": (4 * H,)})
        else:
            out.append({})
    return out


# --------------------------------------------------------------------- LSTM


def _dense(x, W):
    """``x @ W`` over the last axis as a single 2-D product."""
    return (x.reshape(-1, x.shape[-1]) @ W).reshape(*x.shape[:-1], W.shape[1])


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _lstm_forward(p, x, init):
    T, B, _ = x.shape
    H = p["Wh"].shape[0]
    if init is None:
        h = np.zeros((B, H))
        c = np.zeros((B, H))
    else:
        h, c = init
        if h.shape != (B, H):
            raise DimensionError(f"carried LSTM state has shape {h.shape}, batch needs {(B, H)}")
    xg = _dense(x, p["Wx"]) + p["b"]
    Wh = p["Wh"]
    hs = np.empty((T + 1, B, H))
    cs = np.empty((T + 1, B, H))
    acts = np.empty((T, B, 4 * H))
    tcs = np.empty((T, B, H))
    hs[0], cs[0] = h, c
    for t in range(T):
        g = xg[t] + h @ Wh
        a = acts[t]
        a[:, :3 * H] = _sigmoid(g[:, :3 * H])
        a[:, 3 * H:] = np.tanh(g[:, 3 * H:])
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 3 * H:]
        tc = np.tanh(c)
        h = a[:, 2 * H:3 * H] * tc
        hs[t + 1], cs[t + 1], tcs[t] = h, c, tc
    cache = {"x": x, "hs": hs, "cs": cs, "acts": acts, "tcs": tcs}
    return hs[1:], cache, (h.copy(), c.copy())


def _lstm_backward(p, cache, dh_out, need_dx):
    x, hs, cs, acts, tcs = cache["x"], cache["hs"], cache["cs"], cache["acts"], cache["tcs"]
    T, B, H = tcs.shape
    Wh = p["Wh"]
    dG = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        a = acts[t]
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        dh = dh_out[t] + dh_next
        tc = tcs[t]
        dc = dh * o * (1.0 - tc * tc) + dc_next
        d = dG[t]
        d[:, :H] = dc * g * i * (1.0 - i)
        d[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
        d[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        d[:, 3 * H:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = d @ Wh.T
    G2 = dG.reshape(-1, 4 * H)
    grads = {
        "Wx": x.reshape(-1, x.shape[-1]).T @ G2,
        "Wh": hs[:-1].reshape(-1, H).T @ G2,
        "b": G2.sum(axis=0),
    }
    dx = _dense(dG, p["Wx"].T) if need_dx else None
    return grads, dx


# ------------------------------------------------------- functional surface


def forward(net: Network, x, train: bool = False, rng=None, carry: bool = False) -> np.ndarray:
    return net.forward(x, train=train, rng=rng, carry=carry)


def backward(net: Network, target, l2: float = 0.0, mask=None):
    return net.loss_and_grads(target, l2=l2, mask=mask)


def adam_step(net: Network, grads, lr: float) -> Network:
    net.adam_step(grads, lr)
    return net


def lr_at_epoch(initial_lr: float, decay_every: int, decay_factor: float, epoch: int) -> float:
    """Step-decay schedule: ``initial_lr * decay_factor ** (epoch // decay_every)``."""
    return initial_lr * decay_factor ** (epoch // decay_every)


# -------------------------------------------------------------------- files


def save_model(net: Network, path, meta: dict | None = None) -> Path:
    """Write a text header line (spec, tensor table, metadata) then little-endian float64 blocks."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = []
    blobs = []
    for i, p in enumerate(net.params):
        for name in sorted(p):
            arr = np.ascontiguousarray(p[name], dtype="<f8")
            tensors.append({"layer": i, "name": name, "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
    header = {
        "version": FORMAT_VERSION,
        "spec": net.spec.to_json(),
        "tensors": tensors,
        "meta": meta or {},
    }
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(blobs)
    with path.open("wb") as fh:
        fh.write(FORMAT_MAGIC + b" " + str(FORMAT_VERSION).encode() + b"\n")
        fh.write(text + b"\n")
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
    return path


def load_model(path, expected: NetworkSpec | None = None) -> tuple[Network, dict]:
    """Read a model file; returns ``(network, meta)``.

    When ``expected`` is given every layer's kind and dimensions must match it.
    """
    raw = Path(path).read_bytes()
    first, sep, rest = raw.partition(b"\n")
    if not sep or not first.startswith(FORMAT_MAGIC):
        raise ModelFormatError(f"{path}: not a model file")
    try:
        version = int(first[len(FORMAT_MAGIC):].strip())
    except ValueError:
        raise ModelFormatError(f"{path}: unreadable version") from None
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    text, sep, rest = rest.partition(b"\n")
    if not sep:
        raise ModelFormatError(f"{path}: truncated header")
    try:
        header = json.loads(text.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ModelFormatError(f"{path}: corrupt header") from None
    if len(rest) < 8:
        raise ModelFormatError(f"{path}: truncated payload")
    (nbytes,) = struct.unpack("<Q", rest[:8])
    payload = rest[8:]
    need = sum(8 * int(np.prod(t["shape"], dtype=np.int64)) for t in header["tensors"])
    if nbytes != need or len(payload) != need:
        raise ModelFormatError(f"{path}: truncated or corrupt tensor data ({len(payload)} of {need} bytes)")
    spec = NetworkSpec.from_json(header["spec"])
    if expected is not None:
        _check_compatible(expected, spec)
        spec = expected
    params = [dict() for _ in spec.layers]
    off = 0
    for t in header["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=off).reshape(t["shape"]).astype(float)
        params[t["layer"]][t["name"]] = arr
        off += 8 * n
    return Network(spec, params=params), header.get("meta", {})


def _check_compatible(expected: NetworkSpec, got: NetworkSpec) -> None:
    if len(expected.layers) != len(got.layers):
        raise DimensionError(f"model has {len(got.layers)} layers, expected {len(expected.layers)}")
    for i, (a, b) in enumerate(zip(expected.layers, got.layers)):
        if _kind(a) != _kind(b):
            raise DimensionError(f"layer {i}: model has {_kind(b)}, expected {_kind(a)}")
        da = {k: v for k, v in a.__dict__.items() if k != "trainable"}
        db = {k: v for k, v in b.__dict__.items() if k != "trainable"}
        if da != db:
            raise DimensionError(f"layer {i} ({_kind(a)}): model dims {db} != expected {da}")
