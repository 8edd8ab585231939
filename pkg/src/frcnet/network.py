"""Feedforward operator networks approximating the oscillator's gradient field.

Three architectures share one container:

``V1``
    branch net over normalised ``(q, qdot, u)`` and trunk net over normalised
    time; outputs ``G_i = sum_l b[l, i] * t[l] + c_i``.
``V2``
    a single net over ``(q, qdot)`` returning the two gradient components.
``V3``
    an amplitude branch ``a(x)`` in R^p and a phase branch ``phi(x)`` in
    R^{p x 2}; outputs ``G_i = sum_l a[l] * phi[l, i]``.

All evaluation is batched over rows. The state Jacobian is computed exactly by
pushing the two input tangent directions through the layers.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
VARIANTS = ("V1", "V2", "V3")
BRANCH_NAMES = {"V1": ("branch", "trunk"), "V2": ("body",), "V3": ("amplitude", "phase")}


class ModelFormatError(ValueError):
    """Model file is malformed or incompatible."""


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: bool = True

    @property
    def shape(self):
        return self.weight.shape


@dataclass
class Normalization:
    """Frozen affine input normalisation and per-component output scale."""

    state_shift: np.ndarray = field(default_factory=lambda: np.zeros(2))
    state_scale: np.ndarray = field(default_factory=lambda: np.ones(2))
    u_shift: float = 0.0
    u_scale: float = 1.0
    t_shift: float = 0.0
    t_scale: float = 1.0
    out_scale: np.ndarray = field(default_factory=lambda: np.ones(2))

    def __post_init__(self):
        self.state_shift = np.asarray(self.state_shift, dtype=np.float64).reshape(2)
        self.state_scale = np.asarray(self.state_scale, dtype=np.float64).reshape(2)
        self.out_scale = np.asarray(self.out_scale, dtype=np.float64).reshape(2)
        if np.any(self.state_scale <= 0) or self.u_scale <= 0 or self.t_scale <= 0:
            raise ValueError("normalisation scales must be positive")

    def as_dict(self):
        return {
            "state_shift": [float(v) for v in self.state_shift],
            "state_scale": [float(v) for v in self.state_scale],
            "u_shift": float(self.u_shift),
            "u_scale": float(self.u_scale),
            "t_shift": float(self.t_shift),
            "t_scale": float(self.t_scale),
            "out_scale": [float(v) for v in self.out_scale],
        }


@dataclass
class OperatorNetwork:
    variant: str
    branches: dict[str, list[Layer]]
    latent_dim: int
    norm: Normalization = field(default_factory=Normalization)
    combine_bias: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        expected = BRANCH_NAMES[self.variant]
        if tuple(self.branches) != expected:
            raise ValueError(f"{self.variant} needs branches {expected}, got {tuple(self.branches)}")
        self.combine_bias = np.asarray(self.combine_bias, dtype=np.float64).reshape(2)
        p = self.latent_dim
        in_widths = {"branch": 3, "trunk": 1, "body": 2, "amplitude": 2, "phase": 2}
        out_widths = {"branch": 2 * p, "trunk": p, "body": 2, "amplitude": p, "phase": 2 * p}
        for name, layers in self.branches.items():
            if not layers:
                raise ValueError(f"branch {name!r} has no layers")
            width = in_widths[name]
            for i, layer in enumerate(layers):
                if layer.weight.shape[1] != width or layer.bias.shape != (layer.weight.shape[0],):
                    raise ValueError(f"branch {name!r} layer {i}: dimensions do not chain")
                width = layer.weight.shape[0]
            if width != out_widths[name]:
                raise ValueError(f"branch {name!r} outputs {width}, expected {out_widths[name]}")

    @property
    def is_autonomous(self) -> bool:
        return self.variant != "V1"

    def parameters(self):
        """Yield the mutable parameter arrays in a fixed order."""
        for layers in self.branches.values():
            for layer in layers:
                yield layer.weight
                yield layer.bias
        if self.variant == "V1":
            yield self.combine_bias

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "OperatorNetwork":
        return OperatorNetwork(
            self.variant,
            {k: [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in v]
             for k, v in self.branches.items()},
            self.latent_dim,
            Normalization(**{k: (np.array(v) if isinstance(v, list) else v)
                             for k, v in self.norm.as_dict().items()}),
            self.combine_bias.copy(),
        )

    @classmethod
    def linear(cls, matrix) -> "OperatorNetwork":
        """V2 network that is exactly ``x -> matrix @ x`` (one linear layer)."""
        w = np.array(matrix, dtype=np.float64).reshape(2, 2)
        return cls("V2", {"body": [Layer(w, np.zeros(2), False)]}, latent_dim=1)

    @classmethod
    def zeros_like(cls, net: "OperatorNetwork") -> "OperatorNetwork":
        out = net.copy()
        for p in out.parameters():
            p[...] = 0.0
        return out


# --------------------------------------------------------------------------- init

def _hidden_flags(n_hidden: int, period: int) -> list[bool]:
    return [(k + 1) % period == 0 for k in range(n_hidden)]


def _make_branch(rng, widths, n_in, n_out, period, shrink=1.0):
    layers = []
    dims = [n_in, *widths, n_out]
    flags = _hidden_flags(len(widths), period) + [False]
    for k in range(len(dims) - 1):
        bound = 1.0 / math.sqrt(dims[k])
        w = rng.uniform(-bound, bound, size=(dims[k + 1], dims[k]))
        b = rng.uniform(-bound, bound, size=dims[k + 1])
        layers.append(Layer(w, b, flags[k]))
    layers[-1].weight *= shrink
    layers[-1].bias *= shrink
    return layers


def init_network(variant: str = "V3", latent_dim: int = 32, hidden_widths=(64,),
                 seed: int = 0, *, trunk_widths=(32, 32), activation_period=None,
                 trunk_activation_period: int = 2, final_shrink: float = 0.01,
                 norm: Normalization | None = None) -> OperatorNetwork:
    """Fan-in uniform initialisation with the output path shrunk by ``final_shrink``.

    The shrink keeps the fresh network's equilibrium eigenvalues close to the
    origin. For V3 only the phase branch is shrunk so the amplitude branch
    still passes gradient.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    hidden_widths = tuple(int(w) for w in hidden_widths)
    if latent_dim <= 0 or not hidden_widths or any(w <= 0 for w in hidden_widths):
        raise ValueError("latent_dim and all hidden widths must be positive")
    rng = np.random.default_rng(seed)
    p = latent_dim
    if variant == "V1":
        period = activation_period or 4
        if not trunk_widths or any(w <= 0 for w in trunk_widths):
            raise ValueError("trunk widths must be positive")
        branches = {
            "branch": _make_branch(rng, hidden_widths, 3, 2 * p, period, final_shrink),
            "trunk": _make_branch(rng, trunk_widths, 1, p, trunk_activation_period),
        }
    elif variant == "V2":
        branches = {"body": _make_branch(rng, hidden_widths, 2, 2, activation_period or 1,
                                         final_shrink)}
    else:
        period = activation_period or 1
        branches = {
            "amplitude": _make_branch(rng, hidden_widths, 2, p, period),
            "phase": _make_branch(rng, hidden_widths, 2, 2 * p, period, final_shrink),
        }
    return OperatorNetwork(variant, branches, p, norm or Normalization())


# --------------------------------------------------------------------- evaluation

def _as_rows(states):
    x = np.asarray(states, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[-1] != 2:
        raise ValueError(f"states must have trailing dimension 2, got {x.shape}")
    return x


def _branch_inputs(net: OperatorNetwork, x, u, t):
    nm = net.norm
    zs = (x - nm.state_shift) / nm.state_scale
    if net.variant != "V1":
        return {name: zs for name in net.branches}
    if u is None or t is None:
        raise ValueError("V1 networks need (t_norm, u) extras")
    n = len(x)
    zu = (np.broadcast_to(np.asarray(u, dtype=np.float64), (n,)) - nm.u_shift) / nm.u_scale
    zt = (np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)) - nm.t_shift) / nm.t_scale
    return {"branch": np.column_stack([zs, zu]), "trunk": zt.reshape(n, 1)}


def _run_branch(layers, z, dz=None):
    """Forward through one branch; optionally push tangents ``dz`` (n, k, in)."""
    h = z
    for layer in layers:
        h = h @ layer.weight.T + layer.bias
        if dz is not None:
            dz = dz @ layer.weight.T
        if layer.activation:
            h = np.tanh(h)
            if dz is not None:
                dz = dz * (1.0 - h * h)[:, None, :]
    return h, dz


def _combine(net, outs, douts=None):
    p = net.latent_dim
    if net.variant == "V2":
        y, dy = outs["body"], (douts["body"] if douts else None)
    elif net.variant == "V3":
        a, ph = outs["amplitude"], outs["phase"].reshape(-1, p, 2)
        y = np.einsum("nl,nli->ni", a, ph)
        dy = None
        if douts:
            da = douts["amplitude"]  # (n, 2, p)
            dph = douts["phase"].reshape(len(a), 2, p, 2)
            dy = (np.einsum("njl,nli->nij", da, ph)
                  + np.einsum("nl,njli->nij", a, dph))
            dy = dy.transpose(0, 2, 1)  # (n, j, i) to match tangent layout
    else:
        b, tr = outs["branch"].reshape(-1, p, 2), outs["trunk"]
        y = np.einsum("nli,nl->ni", b, tr) + net.combine_bias
        dy = None
        if douts:
            db = douts["branch"].reshape(len(b), 2, p, 2)
            dy = np.einsum("njli,nl->nji", db, tr)
    return y, dy


def forward_batch(net: OperatorNetwork, states, u=None, t=None) -> np.ndarray:
    """Gradient estimates for each row of ``states`` (shape ``(n, 2)``)."""
    x = _as_rows(states)
    ins = _branch_inputs(net, x, u, t)
    outs = {name: _run_branch(layers, ins[name])[0] for name, layers in net.branches.items()}
    y, _ = _combine(net, outs)
    return y * net.norm.out_scale


def forward_jacobian_batch(net: OperatorNetwork, states, u=None, t=None):
    """Return ``(G, J)`` with ``J[n, i, j] = dG_i / dx_j``."""
    x = _as_rows(states)
    n = len(x)
    ins = _branch_inputs(net, x, u, t)
    inv = 1.0 / net.norm.state_scale
    outs, douts = {}, {}
    for name, layers in net.branches.items():
        z = ins[name]
        if name == "trunk":
            outs[name] = _run_branch(layers, z)[0]
            continue
        seed = np.zeros((n, 2, z.shape[1]))
        seed[:, 0, 0] = inv[0]
        seed[:, 1, 1] = inv[1]
        outs[name], douts[name] = _run_branch(layers, z, seed)
    y, dy = _combine(net, outs, douts)  # dy: (n, j, i)
    s = net.norm.out_scale
    return y * s, dy.transpose(0, 2, 1) * s[None, :, None]


def forward(net: OperatorNetwork, state, extras=None) -> np.ndarray:
    """Gradient estimate at a single state; ``extras = (t_norm_input, u)`` for V1."""
    if net.variant == "V1":
        if extras is None:
            raise ValueError("V1 networks need (t, u) extras")
        t, u = extras
        return forward_batch(net, state, u=u, t=t)[0]
    return forward_batch(net, state)[0]


def jacobian(net: OperatorNetwork, state, extras=None) -> np.ndarray:
    """Exact 2x2 state Jacobian of ``forward``."""
    if net.variant == "V1":
        if extras is None:
            raise ValueError("V1 networks need (t, u) extras")
        t, u = extras
        return forward_jacobian_batch(net, state, u=u, t=t)[1][0]
    return forward_jacobian_batch(net, state)[1][0]


# ----------------------------------------------------------------- backprop

def loss_and_grad(net: OperatorNetwork, states, targets, u=None, t=None):
    """Mean L1 loss in normalised output units and its parameter gradients.

    Gradients come back as a list aligned with ``net.parameters()``.
    """
    x = _as_rows(states)
    n = len(x)
    ins = _branch_inputs(net, x, u, t)
    caches, outs = {}, {}
    for name, layers in net.branches.items():
        h = ins[name]
        acts = [h]
        for layer in layers:
            h = h @ layer.weight.T + layer.bias
            if layer.activation:
                h = np.tanh(h)
            acts.append(h)
        caches[name] = acts
        outs[name] = h
    y, _ = _combine(net, outs)
    diff = y - np.asarray(targets, dtype=np.float64) / net.norm.out_scale
    loss = float(np.mean(np.abs(diff)))
    gy = np.sign(diff) / diff.size  # dL/dy

    p = net.latent_dim
    gouts = {}
    if net.variant == "V2":
        gouts["body"] = gy
    elif net.variant == "V3":
        a, ph = outs["amplitude"], outs["phase"].reshape(n, p, 2)
        gouts["amplitude"] = np.einsum("ni,nli->nl", gy, ph)
        gouts["phase"] = (a[:, :, None] * gy[:, None, :]).reshape(n, 2 * p)
    else:
        b, tr = outs["branch"].reshape(n, p, 2), outs["trunk"]
        gouts["branch"] = (tr[:, :, None] * gy[:, None, :]).reshape(n, 2 * p)
        gouts["trunk"] = np.einsum("ni,nli->nl", gy, b)

    grads = []
    for name, layers in net.branches.items():
        acts = caches[name]
        g = gouts[name]
        branch_grads = []
        for k in range(len(layers) - 1, -1, -1):
            layer = layers[k]
            if layer.activation:
                g = g * (1.0 - acts[k + 1] ** 2)
            branch_grads.append((g.T @ acts[k], g.sum(axis=0)))
            if k:
                g = g @ layer.weight
        for gw, gb in reversed(branch_grads):
            grads.extend((gw, gb))
    if net.variant == "V1":
        grads.append(gy.sum(axis=0))
    return loss, grads


# ---------------------------------------------------------------- serialisation

def _to_dict(net: OperatorNetwork) -> dict:
    return {
        "format": "frcnet-operator",
        "format_version": FORMAT_VERSION,
        "variant": net.variant,
        "latent_dim": net.latent_dim,
        "normalization": net.norm.as_dict(),
        "combine_bias": [float(v) for v in net.combine_bias],
        "branches": {
            name: [{"rows": int(l.weight.shape[0]), "cols": int(l.weight.shape[1]),
                    "activation": bool(l.activation),
                    "weight": [float(v) for v in l.weight.ravel()],
                    "bias": [float(v) for v in l.bias]}
                   for l in layers]
            for name, layers in net.branches.items()
        },
    }


def dumps(net: OperatorNetwork) -> str:
    return json.dumps(_to_dict(net), indent=1)


def save(net: OperatorNetwork, path) -> None:
    Path(path).write_text(dumps(net))


def _field(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise ModelFormatError(f"missing field {where}{key!r}")
    return d[key]


def loads(text: str) -> OperatorNetwork:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid structured text: {exc}") from None
    version = _field(d, "format_version", "")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"incompatible model format_version {version!r} (this build reads {FORMAT_VERSION})")
    variant = _field(d, "variant", "")
    latent = _field(d, "latent_dim", "")
    nd = _field(d, "normalization", "")
    try:
        norm = Normalization(**{k: _field(nd, k, "normalization.") for k in
                                ("state_shift", "state_scale", "u_shift", "u_scale",
                                 "t_shift", "t_scale", "out_scale")})
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"bad field 'normalization': {exc}") from None
    branches = {}
    for name, layers in _field(d, "branches", "").items():
        parsed = []
        for i, ld in enumerate(layers):
            where = f"branches.{name}[{i}]."
            rows, cols = _field(ld, "rows", where), _field(ld, "cols", where)
            w = np.array(_field(ld, "weight", where), dtype=np.float64)
            b = np.array(_field(ld, "bias", where), dtype=np.float64)
            if w.size != rows * cols:
                raise ModelFormatError(f"field {where}weight has {w.size} values, expected {rows}x{cols}")
            if b.size != rows:
                raise ModelFormatError(f"field {where}bias has {b.size} values, expected {rows}")
            parsed.append(Layer(w.reshape(rows, cols), b, bool(_field(ld, "activation", where))))
        branches[name] = parsed
    try:
        return OperatorNetwork(variant, branches, int(latent), norm,
                               np.array(d.get("combine_bias", [0.0, 0.0]), dtype=np.float64))
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


def load(path) -> OperatorNetwork:
    return loads(Path(path).read_text())
