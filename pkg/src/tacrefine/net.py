"""Multi-branch tactile policy network in plain numpy (float64).

Layout::

    finger i image (99) -> tanh(64) -> tanh(32) -> + positional vector i
    [3 current features, 3 target features, 6 joints] (198) -> tanh(128)
    -> tanh(64) -> tanh(32) -> linear(6) * output_scale

Each finger's encoder is shared between its current and target image.
``output_scale`` is fixed metadata (not learned) that puts the raw head output
in units of the sampled pose range.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

N_FINGERS = 3
N_TAXELS = 99
N_JOINTS = 6
N_OUT = 6

DEFAULT_SIZES = {
    "fingers": N_FINGERS, "taxels": N_TAXELS, "joints": N_JOINTS,
    "enc_hidden": 64, "enc_out": 32, "fusion": 128, "head": [64, 32], "out": N_OUT,
}
DEFAULT_OUTPUT_SCALE = (0.02, 0.02, 0.02, 0.15, 0.15, 0.15)

PARAM_MAGIC = b"TACP"
PARAM_VERSION = 1


class ParamFileError(ValueError):
    pass


def param_shapes(sizes=None):
    """Ordered mapping name -> shape for every learnable tensor."""
    s = dict(DEFAULT_SIZES if sizes is None else sizes)
    shapes = {}
    for i in range(s["fingers"]):
        shapes[f"enc{i}_W1"] = (s["taxels"], s["enc_hidden"])
        shapes[f"enc{i}_b1"] = (s["enc_hidden"],)
        shapes[f"enc{i}_W2"] = (s["enc_hidden"], s["enc_out"])
        shapes[f"enc{i}_b2"] = (s["enc_out"],)
        shapes[f"pe{i}"] = (s["enc_out"],)
    fused_in = 2 * s["fingers"] * s["enc_out"] + s["joints"]
    shapes["fuse_W"] = (fused_in, s["fusion"])
    shapes["fuse_b"] = (s["fusion"],)
    widths = [s["fusion"], *s["head"], s["out"]]
    for k in range(len(widths) - 1):
        shapes[f"head_W{k + 1}"] = (widths[k], widths[k + 1])
        shapes[f"head_b{k + 1}"] = (widths[k + 1],)
    return shapes


@dataclass(eq=False)
class PolicyParams:
    tensors: dict
    sizes: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_SIZES)))
    output_scale: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_OUTPUT_SCALE))
    seed: int = 0

    def __post_init__(self):
        self.output_scale = np.asarray(self.output_scale, dtype=np.float64)
        self.check()

    def check(self):
        expected = param_shapes(self.sizes)
        if list(self.tensors) != list(expected):
            raise ValueError("parameter names do not match the layer-size metadata")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape} != {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise ValueError(f"{name}: non-finite values")
        if self.output_scale.shape != (self.sizes["out"],):
            raise ValueError("output_scale must match the output width")

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.tensors.items()},
                            json.loads(json.dumps(self.sizes)), self.output_scale.copy(), self.seed)

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def __eq__(self, other):
        return (isinstance(other, PolicyParams) and self.sizes == other.sizes
                and self.seed == other.seed
                and np.array_equal(self.output_scale, other.output_scale)
                and list(self.tensors) == list(other.tensors)
                and all(np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors))

    __hash__ = None


def init_params(seed: int, sizes=None, output_scale=DEFAULT_OUTPUT_SCALE) -> PolicyParams:
    """Glorot-uniform weights, zero biases and zero positional vectors."""
    sizes = json.loads(json.dumps(DEFAULT_SIZES if sizes is None else sizes))
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(sizes).items():
        if len(shape) == 2:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-a, a, size=shape)
        else:
            tensors[name] = np.zeros(shape)
    return PolicyParams(tensors, sizes, np.array(output_scale, dtype=np.float64), int(seed))


# --------------------------------------------------------------------------
# inputs

@dataclass
class PolicyInput:
    current_images: np.ndarray   # (3, 11, 9) readings 0..255
    target_images: np.ndarray
    joints: np.ndarray           # (6,)


def normalize_images(images) -> np.ndarray:
    """uint8 readings -> float in [0, 1], flattened per finger: (..., 3, 99)."""
    images = np.asarray(images, dtype=np.float64)
    return images.reshape(images.shape[:-2] + (-1,)) / 255.0


def stack_inputs(inputs):
    cur = normalize_images(np.stack([x.current_images for x in inputs]))
    tgt = normalize_images(np.stack([x.target_images for x in inputs]))
    q = np.stack([np.asarray(x.joints, dtype=np.float64) for x in inputs])
    return cur, tgt, q


# --------------------------------------------------------------------------
# forward / backward

def _forward(params: PolicyParams, cur, tgt, joints, keep=False):
    """Batched forward. cur/tgt: (K, F, 99) in [0, 1]; joints: (K, 6)."""
    p = params.tensors
    n_f = params.sizes["fingers"]
    n_head = len(params.sizes["head"]) + 1
    k = cur.shape[0]
    cache = {"enc": []}
    feats_c, feats_t = [], []
    for i in range(n_f):
        x = np.concatenate([cur[:, i], tgt[:, i]], axis=0)       # (2K, 99)
        h1 = np.tanh(x @ p[f"enc{i}_W1"] + p[f"enc{i}_b1"])
        e = np.tanh(h1 @ p[f"enc{i}_W2"] + p[f"enc{i}_b2"])
        cache["enc"].append((x, h1, e))
        feats_c.append(e[:k] + p[f"pe{i}"])
        feats_t.append(e[k:] + p[f"pe{i}"])
    u = np.concatenate(feats_c + feats_t + [joints], axis=1)
    f = np.tanh(u @ p["fuse_W"] + p["fuse_b"])
    hs = [f]
    for j in range(1, n_head):
        hs.append(np.tanh(hs[-1] @ p[f"head_W{j}"] + p[f"head_b{j}"]))
    out = (hs[-1] @ p[f"head_W{n_head}"] + p[f"head_b{n_head}"]) * params.output_scale
    if keep:
        cache.update(u=u, hs=hs)
        return out, cache
    return out


def forward(params: PolicyParams, inp: PolicyInput) -> np.ndarray:
    """Predicted 6-DoF wrist increment for one input."""
    cur, tgt, q = stack_inputs([inp])
    if cur.shape[1:] != (params.sizes["fingers"], params.sizes["taxels"]) or q.shape[1] != params.sizes["joints"]:
        raise ValueError(f"input shape mismatch: images {cur.shape[1:]}, joints {q.shape[1:]}")
    return _forward(params, cur, tgt, q)[0]


def forward_batch(params: PolicyParams, cur, tgt, joints) -> np.ndarray:
    return _forward(params, cur, tgt, joints)


def mse_loss(pred, label) -> float:
    """Squared Euclidean residual for one example."""
    r = np.asarray(pred, dtype=np.float64) - np.asarray(label, dtype=np.float64)
    return float(r @ r)


def batch_loss(preds, labels) -> float:
    """Mean over the batch of the squared residual norm."""
    r = np.asarray(preds, dtype=np.float64) - np.asarray(labels, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] < 1:
        raise ValueError("batch_loss needs a non-empty (K, 6) batch")
    return float(np.mean(np.sum(r * r, axis=1)))


def backward(params: PolicyParams, batch, loss_weights=None):
    """Loss and exact gradients for ``batch = (cur, tgt, joints, labels)``.

    ``loss_weights`` (6,) optionally weights each squared residual component;
    ``None`` is the plain mean squared error.
    """
    cur, tgt, joints, labels = batch
    k = cur.shape[0]
    if k < 1:
        raise ValueError("empty batch")
    p = params.tensors
    n_f = params.sizes["fingers"]
    n_head = len(params.sizes["head"]) + 1
    width = params.sizes["enc_out"]
    out, cache = _forward(params, cur, tgt, joints, keep=True)
    resid = out - labels
    w = np.ones(resid.shape[1]) if loss_weights is None else np.asarray(loss_weights, dtype=np.float64)
    loss = float(np.mean(np.sum(w * resid * resid, axis=1)))
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    grads = {}
    hs = cache["hs"]
    d = (2.0 / k) * w * resid * params.output_scale
    for j in range(n_head, 0, -1):
        a = hs[j - 1]
        grads[f"head_W{j}"] = a.T @ d
        grads[f"head_b{j}"] = d.sum(axis=0)
        da = d @ p[f"head_W{j}"].T
        d = da * (1.0 - a * a)
    grads["fuse_W"] = cache["u"].T @ d
    grads["fuse_b"] = d.sum(axis=0)
    du = d @ p["fuse_W"].T
    for i in range(n_f):
        x, h1, e = cache["enc"][i]
        dc = du[:, i * width:(i + 1) * width]
        dt = du[:, (n_f + i) * width:(n_f + i + 1) * width]
        grads[f"pe{i}"] = dc.sum(axis=0) + dt.sum(axis=0)
        dz2 = np.concatenate([dc, dt], axis=0) * (1.0 - e * e)
        grads[f"enc{i}_W2"] = h1.T @ dz2
        grads[f"enc{i}_b2"] = dz2.sum(axis=0)
        dz1 = (dz2 @ p[f"enc{i}_W2"].T) * (1.0 - h1 * h1)
        grads[f"enc{i}_W1"] = x.T @ dz1
        grads[f"enc{i}_b1"] = dz1.sum(axis=0)
    return loss, {name: grads[name] for name in p}


# --------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: PolicyParams) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.tensors.items()},
                   {k: np.zeros_like(v) for k, v in params.tensors.items()}, 0)

    def copy(self) -> "AdamState":
        return AdamState({k: v.copy() for k, v in self.m.items()},
                         {k: v.copy() for k, v in self.v.items()}, self.t)


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_step(params: PolicyParams, grads: dict, state: AdamState, hyper=AdamHyper()):
    """One in-place Adam update; returns ``(params, state)``."""
    if set(grads) != set(params.tensors):
        raise ValueError("gradient set does not match parameters")
    state.t += 1
    bc1 = 1.0 - hyper.beta1 ** state.t
    bc2 = 1.0 - hyper.beta2 ** state.t
    for name, w in params.tensors.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {w.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * (g * g)
        w -= hyper.lr * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
    return params, state


# --------------------------------------------------------------------------
# persistence

def params_to_bytes(params: PolicyParams, extra_meta=None) -> bytes:
    meta = {"sizes": params.sizes, "output_scale": params.output_scale.tolist(),
            "seed": params.seed, "names": list(params.tensors)}
    if extra_meta:
        meta["extra"] = extra_meta
    meta_b = json.dumps(meta, sort_keys=True).encode()
    body = struct.pack("<I", len(meta_b)) + meta_b + b"".join(
        np.ascontiguousarray(params.tensors[k], dtype="<f8").tobytes() for k in params.tensors)
    head = PARAM_MAGIC + struct.pack("<H", PARAM_VERSION)
    return head + body + struct.pack("<I", zlib.crc32(body))


def params_from_bytes(blob: bytes, expect_sizes=None):
    """Parse a parameter blob; returns ``(params, extra_meta)``."""
    if len(blob) < 14 or blob[:4] != PARAM_MAGIC:
        raise ParamFileError("not a parameter file (bad magic)")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != PARAM_VERSION:
        raise ParamFileError(f"unsupported parameter file version {version}")
    body, (crc,) = blob[6:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ParamFileError("parameter file checksum mismatch")
    (n_meta,) = struct.unpack_from("<I", body, 0)
    meta = json.loads(body[4:4 + n_meta])
    shapes = param_shapes(meta["sizes"])
    if meta["names"] != list(shapes):
        raise ParamFileError("tensor names disagree with layer-size metadata")
    if expect_sizes is not None and meta["sizes"] != expect_sizes:
        raise ParamFileError(f"layer sizes {meta['sizes']} != expected {expect_sizes}")
    off = 4 + n_meta
    tensors = {}
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        if off + 8 * n > len(body):
            raise ParamFileError(f"truncated parameter file at tensor {name}")
        tensors[name] = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    if off != len(body):
        raise ParamFileError("trailing bytes after tensors")
    try:
        params = PolicyParams(tensors, meta["sizes"], np.array(meta["output_scale"]), int(meta["seed"]))
    except ValueError as exc:
        raise ParamFileError(str(exc)) from None
    return params, meta.get("extra")


def save_params(params: PolicyParams, path, extra_meta=None):
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(params, extra_meta))


def load_params(path, expect_sizes=None) -> PolicyParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read(), expect_sizes)[0]
