"""Small MLP radiance field with a hand-written backward pass."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class FieldArch:
    """Layer layout of the field network.

    The trunk is ``depth`` ReLU layers of ``width`` units; the encoded
    position is concatenated back in at trunk layer ``skip``. Density comes
    straight off the trunk. The radiance head sees the trunk output
    concatenated with the encoded direction, optionally through one hidden
    ReLU layer of ``radiance_hidden`` units.
    """

    pos_freqs: int = 16
    dir_freqs: int = 4
    depth: int = 4
    width: int = 64
    skip: int = 2
    radiance_hidden: int = 0

    @property
    def pos_dim(self) -> int:
        return 6 * self.pos_freqs

    @property
    def dir_dim(self) -> int:
        return 6 * self.dir_freqs

    def layer_shapes(self) -> list[tuple[str, int, int]]:
        """``(name, out_dim, in_dim)`` for every layer in declaration order."""
        shapes = []
        for i in range(self.depth):
            fan_in = self.pos_dim if i == 0 else self.width
            if i == self.skip and i > 0:
                fan_in += self.pos_dim
            shapes.append((f"trunk{i}", self.width, fan_in))
        shapes.append(("density", 1, self.width))
        head_in = self.width + self.dir_dim
        if self.radiance_hidden:
            shapes.append(("radiance_hidden", self.radiance_hidden, head_in))
            head_in = self.radiance_hidden
        shapes.append(("radiance", 3, head_in))
        return shapes


DESK_ARCH = FieldArch()
FULL_ARCH = FieldArch(depth=8, width=256, skip=4, radiance_hidden=128)


@dataclass
class FieldParams:
    arch: FieldArch
    weights: list
    biases: list
    seed: int = 0

    @classmethod
    def init(cls, arch: FieldArch = DESK_ARCH, seed: int = 0, dtype=np.float32) -> "FieldParams":
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for _, n_out, n_in in arch.layer_shapes():
            bound = np.sqrt(6.0 / n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype))
            biases.append(np.zeros(n_out, dtype=dtype))
        return cls(arch, weights, biases, seed)

    @classmethod
    def zeros(cls, arch: FieldArch = DESK_ARCH, dtype=np.float32) -> "FieldParams":
        shapes = arch.layer_shapes()
        return cls(
            arch,
            [np.zeros((o, i), dtype=dtype) for _, o, i in shapes],
            [np.zeros(o, dtype=dtype) for _, o, _ in shapes],
        )

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "FieldParams":
        return FieldParams(
            self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed
        )

    def astype(self, dtype) -> "FieldParams":
        return FieldParams(
            self.arch,
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
            self.seed,
        )

    def zeros_like(self) -> "FieldParams":
        return FieldParams(
            self.arch,
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
            self.seed,
        )

    def __iadd__(self, other: "FieldParams"):
        for a, b in zip(self.arrays(), other.arrays()):
            a += b
        return self


# gradients share the parameter layout
Gradients = FieldParams


@dataclass
class FieldOutput:
    density: np.ndarray
    radiance: np.ndarray


@dataclass
class Activations:
    """Values saved by :func:`forward` for :func:`backward`."""

    params_id: int
    layer_inputs: list
    masks: list
    density_raw: np.ndarray
    radiance: np.ndarray
    hidden_mask: np.ndarray | None = None


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    # tanh form avoids overflow warnings for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def forward(params: FieldParams, pos_feat, dir_feat) -> tuple[FieldOutput, Activations]:
    """Evaluate the field for ``n`` rows of encoded position/direction.

    ``pos_feat`` is ``(n, 6L)`` and ``dir_feat`` ``(n, 6M)``. Returns the
    density ``(n,)`` (softplus) and radiance ``(n, 3)`` (logistic), plus the
    activations needed by :func:`backward`.
    """
    arch = params.arch
    dtype = params.weights[0].dtype
    pos_feat = np.asarray(pos_feat, dtype=dtype)
    dir_feat = np.asarray(dir_feat, dtype=dtype)
    if pos_feat.ndim != 2 or pos_feat.shape[1] != arch.pos_dim:
        raise ValueError(f"pos_feat must be (n, {arch.pos_dim}), got {pos_feat.shape}")
    if dir_feat.shape != (pos_feat.shape[0], arch.dir_dim):
        raise ValueError(f"dir_feat must be ({pos_feat.shape[0]}, {arch.dir_dim}), got {dir_feat.shape}")

    inputs, masks = [], []
    h = pos_feat
    for i in range(arch.depth):
        if i == arch.skip and i > 0:
            h = np.concatenate([h, pos_feat], axis=1)
        inputs.append(h)
        pre = h @ params.weights[i].T
        pre += params.biases[i]
        h = np.maximum(pre, 0, out=pre)
        masks.append(h > 0)

    k = arch.depth
    density_raw = h @ params.weights[k][0] + params.biases[k][0]
    inputs.append(h)

    x = np.concatenate([h, dir_feat], axis=1)
    hidden_mask = None
    k += 1
    if arch.radiance_hidden:
        inputs.append(x)
        pre = x @ params.weights[k].T + params.biases[k]
        x = np.maximum(pre, 0, out=pre)
        hidden_mask = x > 0
        k += 1
    inputs.append(x)
    rgb = sigmoid(x @ params.weights[k].T + params.biases[k])
    out = FieldOutput(softplus(density_raw), rgb)
    return out, Activations(id(params), inputs, masks, density_raw, rgb, hidden_mask)


def _colsum(g):
    return np.ones(g.shape[0], dtype=g.dtype) @ g


def backward(params: FieldParams, acts: Activations, d_density, d_radiance) -> Gradients:
    """Gradient of ``sum(d_density*density) + sum(d_radiance*radiance)`` w.r.t. params."""
    if acts.params_id != id(params):
        raise RuntimeError("activations were produced by a different parameter set")
    arch = params.arch
    dtype = params.weights[0].dtype
    grads = params.zeros_like()
    gw, gb = grads.weights, grads.biases
    d_density = np.asarray(d_density, dtype=dtype)
    d_radiance = np.asarray(d_radiance, dtype=dtype)

    n_layers = len(params.weights)
    k = n_layers - 1
    # radiance output layer
    g = d_radiance * acts.radiance * (1.0 - acts.radiance)
    x_in = acts.layer_inputs[-1]
    gw[k][...] = g.T @ x_in
    gb[k][...] = _colsum(g)
    dx = g @ params.weights[k]
    k -= 1
    if arch.radiance_hidden:
        g = dx * acts.hidden_mask
        x_in = acts.layer_inputs[-2]
        gw[k][...] = g.T @ x_in
        gb[k][...] = _colsum(g)
        dx = g @ params.weights[k]
        k -= 1
    dh = dx[:, : arch.width]

    # density head
    g_den = d_density * sigmoid(acts.density_raw)
    h_last = acts.layer_inputs[arch.depth]
    gw[k][0] = g_den @ h_last
    gb[k][0] = g_den.sum()
    dh = dh + np.outer(g_den, params.weights[k][0])

    for i in range(arch.depth - 1, -1, -1):
        g = dh * acts.masks[i]
        gw[i][...] = g.T @ acts.layer_inputs[i]
        gb[i][...] = _colsum(g)
        if i == 0:
            break
        dx = g @ params.weights[i]
        dh = dx[:, : arch.width]
    return grads


def learning_rate(step: int, total_steps: int, lr_init: float = 5e-4, lr_final: float = 5e-5) -> float:
    """Log-linear decay from ``lr_init`` at step 0 to ``lr_final`` at ``total_steps``."""
    if total_steps <= 0:
        return lr_init
    frac = min(max(step / total_steps, 0.0), 1.0)
    return float(np.exp((1.0 - frac) * np.log(lr_init) + frac * np.log(lr_final)))


@dataclass
class AdamState:
    m: list
    v: list
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def like(cls, params: FieldParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()])


def adam_step(params: FieldParams, grads: Gradients, state: AdamState, lr: float) -> None:
    """In-place Adam update of ``params``."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)


# -- checkpoint -------------------------------------------------------------

MAGIC = b"LENSFLD\x00"
FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(path, params: FieldParams, step: int = 0, meta: dict | None = None) -> None:
    """Write a self-describing checkpoint.

    Layout: 8-byte magic, little-endian u32 header length, UTF-8 JSON header,
    then every weight and bias as little-endian float32 in declaration order.
    """
    header = {
        "version": FORMAT_VERSION,
        "arch": asdict(params.arch),
        "pos_freqs": params.arch.pos_freqs,
        "dir_freqs": params.arch.dir_freqs,
        "seed": int(params.seed),
        "step": int(step),
        "layers": [[n, o, i] for n, o, i in params.arch.layer_shapes()],
        "num_params": params.num_params,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in params.arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[FieldParams, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a field checkpoint (bad magic)")
    (n,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12 : 12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt header") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {header.get('version')}")
    arch = FieldArch(**header["arch"])
    params = FieldParams.zeros(arch)
    params.seed = header["seed"]
    offset = 12 + n
    for a in params.arrays():
        nbytes = a.size * 4
        chunk = data[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointFormatError(f"{path}: truncated parameter data")
        a[...] = np.frombuffer(chunk, dtype="<f4").reshape(a.shape)
        offset += nbytes
    if offset != len(data):
        raise CheckpointFormatError(f"{path}: trailing bytes after parameters")
    return params, header
