"""Dense-array network math for the hop estimator.

Fixed architecture: three 3x3 stride-1 pad-1 conv layers (ReLU) aggregate the
3x(2m+1)x(2m+1) feature maps into the search feature z (the flattened last
conv block); a three-layer MLP maps z to action logits and a softmax; a
separate linear head maps z to the auxiliary action logits.

Everything runs in float64 with exact reverse-mode gradients; convolutions
are im2col matrix products so batched calls hit BLAS.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

N_ACTIONS = 5
KERNEL = 3


def _param_shapes(m, channels, hidden):
    s = 2 * m + 1
    z_dim = channels[2] * s * s
    c_in = (3, channels[0], channels[1])
    shapes = {}
    for i in range(3):
        shapes["conv%d_w" % i] = (channels[i], c_in[i], KERNEL, KERNEL)
        shapes["conv%d_b" % i] = (channels[i],)
    dims = [(hidden, z_dim), (hidden, hidden), (N_ACTIONS, hidden)]
    for i, (rows, cols) in enumerate(dims):
        shapes["dense%d_w" % i] = (rows, cols)
        shapes["dense%d_b" % i] = (rows,)
    shapes["aux_w"] = (N_ACTIONS, z_dim)
    shapes["aux_b"] = (N_ACTIONS,)
    return shapes


@dataclass
class PolicyParams:
    """All weights plus Adam moment buffers and the update counter."""

    m: int
    channels: tuple
    hidden: int
    arrays: dict
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    t: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def input_side(self):
        return 2 * self.m + 1

    @property
    def z_dim(self):
        return self.channels[2] * self.input_side ** 2

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            self.m,
            tuple(self.channels),
            self.hidden,
            {k: v.copy() for k, v in self.arrays.items()},
            {k: v.copy() for k, v in self.adam_m.items()},
            {k: v.copy() for k, v in self.adam_v.items()},
            self.t,
            dict(self.extra),
        )

    def n_parameters(self):
        return sum(a.size for a in self.arrays.values())


def init_params(m, stream, channels=(16, 32, 64), hidden=128) -> PolicyParams:
    """Glorot-uniform weights, zero biases, zero Adam moments."""
    gen = stream.child("net-init").generator()
    shapes = _param_shapes(m, channels, hidden)
    arrays = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith("_b"):
            arrays[name] = np.zeros(shape)
        else:
            if len(shape) == 4:
                fan_in = shape[1] * KERNEL * KERNEL
                fan_out = shape[0] * KERNEL * KERNEL
            else:
                fan_in, fan_out = shape[1], shape[0]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = gen.uniform(-bound, bound, size=shape)
    adam_m = {k: np.zeros_like(v) for k, v in arrays.items()}
    adam_v = {k: np.zeros_like(v) for k, v in arrays.items()}
    return PolicyParams(m, tuple(channels), hidden, arrays, adam_m, adam_v, 0)


@dataclass
class ForwardTrace:
    x: np.ndarray
    conv_acts: list
    cols: list
    z: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    aux_logits: np.ndarray
    aux_probs: np.ndarray
    ws: Workspace = None


def softmax(logits):
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# Feature maps travel channels-last (B, S, S, C) internally so that im2col
# copies move contiguous channel runs and each conv is a single GEMM.

_OFFSETS = [(ky, kx) for ky in range(KERNEL) for kx in range(KERNEL)]


class Workspace:
    """Reusable scratch buffers for forward/backward calls.

    Large fresh allocations dominate the runtime on this workload (every
    call would otherwise fault in ~100 MB of pages), so batched training
    keeps one workspace per thread.  Buffers returned by :meth:`buf` are
    invalidated by the next call with the same key.
    """

    def __init__(self):
        self._bufs = {}

    def buf(self, key, shape):
        arr = self._bufs.get(key)
        if arr is None or arr.shape != shape:
            arr = np.empty(shape)
            self._bufs[key] = arr
        return arr


def _im2col(x, ws, key):
    # x: (B, S, S, C) -> (B*S*S, 9*C) with implicit zero padding of 1
    b, s, _, c = x.shape
    xp = ws.buf((key, "pad"), (b, s + 2, s + 2, c))
    xp[:, 0] = 0.0
    xp[:, -1] = 0.0
    xp[:, :, 0] = 0.0
    xp[:, :, -1] = 0.0
    xp[:, 1:-1, 1:-1, :] = x
    cols = ws.buf((key, "cols"), (b, s, s, KERNEL * KERNEL, c))
    for o, (ky, kx) in enumerate(_OFFSETS):
        cols[:, :, :, o, :] = xp[:, ky : ky + s, kx : kx + s, :]
    return cols.reshape(b * s * s, KERNEL * KERNEL * c)


def _w_flat(w):
    # (Cout, Cin, 3, 3) -> (9*Cin, Cout), offset-major to match _im2col
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(-1, w.shape[0]))


def _conv_forward(x, w, bias, ws, key):
    b, s, _, _ = x.shape
    cols = _im2col(x, ws, key)
    cout = w.shape[0]
    y = ws.buf((key, "act"), (b, s, s, cout))
    np.matmul(cols, _w_flat(w), out=y.reshape(b * s * s, cout))
    y += bias
    return y, cols


def _conv_backward(dy, cols, c, w, ws, key, need_dx=True):
    # dy: (B, S, S, Cout) gradient after this conv; cols: its input's im2col
    b, s, _, cout = dy.shape
    dyf = dy.reshape(b * s * s, cout)
    dw = (cols.T @ dyf).reshape(KERNEL, KERNEL, c, cout).transpose(3, 2, 0, 1)
    db = dyf.sum(axis=0)
    if not need_dx:
        return dw, db, None
    dcols = ws.buf((key, "dcols"), (b * s * s, KERNEL * KERNEL * c))
    np.matmul(dyf, _w_flat(w).T, out=dcols)
    dcols = dcols.reshape(b, s, s, KERNEL * KERNEL, c)
    dxp = ws.buf((key, "dxp"), (b, s + 2, s + 2, c))
    dxp[...] = 0.0
    for o, (ky, kx) in enumerate(_OFFSETS):
        dxp[:, ky : ky + s, kx : kx + s, :] += dcols[:, :, :, o, :]
    return dw, db, dxp[:, 1:-1, 1:-1, :]


def forward(params: PolicyParams, x, ws: Workspace = None) -> ForwardTrace:
    """Full forward pass; keeps every activation needed for backward.

    When a workspace is passed, the returned trace aliases its buffers and
    stays valid only until the next forward on that workspace.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    s = params.input_side
    if x.shape[1:] != (3, s, s):
        raise ValidationError(
            "input shape %s does not match model (3, %d, %d)" % (x.shape[1:], s, s)
        )
    if ws is None:
        ws = Workspace()
    x_cl = ws.buf("x_cl", (x.shape[0], s, s, 3))
    x_cl[...] = x.transpose(0, 2, 3, 1)
    acts, cols = [], []
    a = x_cl
    for i in range(3):
        a, col = _conv_forward(
            a, params.arrays["conv%d_w" % i], params.arrays["conv%d_b" % i], ws, ("f", i)
        )
        np.maximum(a, 0.0, out=a)
        acts.append(a)
        cols.append(col)
    z = acts[-1].reshape(x.shape[0], -1)
    w0, b0 = params.arrays["dense0_w"], params.arrays["dense0_b"]
    w1, b1 = params.arrays["dense1_w"], params.arrays["dense1_b"]
    w2, b2 = params.arrays["dense2_w"], params.arrays["dense2_b"]
    h1 = np.maximum(z @ w0.T + b0, 0.0)
    h2 = np.maximum(h1 @ w1.T + b1, 0.0)
    logits = h2 @ w2.T + b2
    aux_logits = z @ params.arrays["aux_w"].T + params.arrays["aux_b"]
    return ForwardTrace(
        x=x_cl,
        conv_acts=acts,
        cols=cols,
        z=z,
        h1=h1,
        h2=h2,
        logits=logits,
        probs=softmax(logits),
        aux_logits=aux_logits,
        aux_probs=softmax(aux_logits),
        ws=ws,
    )


def forward_z(params: PolicyParams, x, ws: Workspace = None) -> np.ndarray:
    """Conv stack only: the search feature z, no action heads."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if ws is None:
        ws = Workspace()
    s = params.input_side
    a = ws.buf("xz_cl", (x.shape[0], s, s, 3))
    a[...] = x.transpose(0, 2, 3, 1)
    for i in range(3):
        a, _ = _conv_forward(
            a, params.arrays["conv%d_w" % i], params.arrays["conv%d_b" % i], ws, ("fz", i)
        )
        np.maximum(a, 0.0, out=a)
    return a.reshape(x.shape[0], -1)


def backward(trace: ForwardTrace, params: PolicyParams, d_logits=None, d_z=None, d_aux_logits=None):
    """Exact gradients of all parameters for upstream gradients supplied on the
    action logits, on z directly, and/or on the auxiliary logits.

    The three contributions may be combined in one call; z gradients from the
    auxiliary head flow into the conv stack only (the dense head never sees
    them, matching the loss layout).
    """
    b = trace.x.shape[0]
    ws = trace.ws if trace.ws is not None else Workspace()
    grads = {}

    dz = ws.buf("dz", (b, params.z_dim))
    if d_logits is not None:
        dh2 = d_logits @ params.arrays["dense2_w"]
        dh2 *= trace.h2 > 0
        dh1 = dh2 @ params.arrays["dense1_w"]
        dh1 *= trace.h1 > 0
        grads["dense2_w"] = d_logits.T @ trace.h2
        grads["dense2_b"] = d_logits.sum(axis=0)
        grads["dense1_w"] = dh2.T @ trace.h1
        grads["dense1_b"] = dh2.sum(axis=0)
        grads["dense0_w"] = dh1.T @ trace.z
        grads["dense0_b"] = dh1.sum(axis=0)
        np.matmul(dh1, params.arrays["dense0_w"], out=dz)
    else:
        for i in range(3):
            grads["dense%d_w" % i] = np.zeros_like(params.arrays["dense%d_w" % i])
            grads["dense%d_b" % i] = np.zeros_like(params.arrays["dense%d_b" % i])
        dz[...] = 0.0

    if d_aux_logits is not None:
        grads["aux_w"] = d_aux_logits.T @ trace.z
        grads["aux_b"] = d_aux_logits.sum(axis=0)
        tmp = ws.buf("dz_aux", (b, params.z_dim))
        np.matmul(d_aux_logits, params.arrays["aux_w"], out=tmp)
        dz += tmp
    else:
        grads["aux_w"] = np.zeros_like(params.arrays["aux_w"])
        grads["aux_b"] = np.zeros_like(params.arrays["aux_b"])

    if d_z is not None:
        dz += d_z

    s = params.input_side
    da = dz.reshape(b, s, s, params.channels[2])
    c_ins = (3, params.channels[0], params.channels[1])
    for i in (2, 1, 0):
        da *= trace.conv_acts[i] > 0
        dw, db, da_prev = _conv_backward(
            da, trace.cols[i], c_ins[i], params.arrays["conv%d_w" % i], ws, ("b", i), need_dx=i > 0
        )
        grads["conv%d_w" % i] = dw
        grads["conv%d_b" % i] = db
        da = da_prev
    return grads


def zero_grads(params: PolicyParams):
    return {k: np.zeros_like(v) for k, v in params.arrays.items()}


def accumulate(acc, grads):
    for k, g in grads.items():
        acc[k] += g
    return acc


def adam_step(params: PolicyParams, grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard bias-corrected Adam update, in place; returns params."""
    params.t += 1
    t = params.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in params.arrays.items():
        g = grads[k]
        m = params.adam_m[k]
        v = params.adam_v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


# -- checkpoint container ------------------------------------------------------

_MAGIC = b"LCNET1\n"


def save_checkpoint(params: PolicyParams, path):
    """Write a deterministic flat container: JSON manifest + raw array bytes."""
    names = sorted(params.arrays) + ["adam_m." + k for k in sorted(params.adam_m)] + [
        "adam_v." + k for k in sorted(params.adam_v)
    ]
    blobs, manifest, offset = [], [], 0
    for name in names:
        if name.startswith("adam_m."):
            arr = params.adam_m[name[7:]]
        elif name.startswith("adam_v."):
            arr = params.adam_v[name[7:]]
        else:
            arr = params.arrays[name]
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = {
        "m": params.m,
        "channels": list(params.channels),
        "hidden": params.hidden,
        "adam_t": params.t,
        "extra": params.extra,
        "arrays": manifest,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> PolicyParams:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValidationError("not a checkpoint file: %s" % path)
        n = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(n).decode("utf8"))
        payload = fh.read()
    m = int(header["m"])
    channels = tuple(header["channels"])
    hidden = int(header["hidden"])
    expected = _param_shapes(m, channels, hidden)
    arrays, adam_m, adam_v = {}, {}, {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()
        name = entry["name"]
        base = name.split(".", 1)[-1]
        if base not in expected:
            raise ValidationError("unexpected array %r in checkpoint" % name)
        if tuple(arr.shape) != expected[base]:
            raise ValidationError(
                "checkpoint array %s has shape %s, model expects %s"
                % (name, tuple(arr.shape), expected[base])
            )
        if name.startswith("adam_m."):
            adam_m[base] = arr
        elif name.startswith("adam_v."):
            adam_v[base] = arr
        else:
            arrays[base] = arr
    missing = set(expected) - set(arrays)
    if missing:
        raise ValidationError("checkpoint is missing arrays: %s" % sorted(missing))
    return PolicyParams(
        m, channels, hidden, arrays, adam_m, adam_v, int(header["adam_t"]), dict(header["extra"])
    )
