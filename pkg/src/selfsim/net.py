"""Small dense networks evaluated on jet inputs.

A network is tanh-activated, takes the compactified coordinate (a jet) as
its single input and produces a scalar jet.  Output heads:

* ``linear``      -- affine read-out, output spans both signs;
* ``exp``         -- exp of one pre-activation, output strictly positive;
* ``signed_exp``  -- s * exp(t) from two pre-activations, both signs with
                     exponential dynamic range.

An optional Fourier first block replaces the first tanh activation by
[cos(z), sin(z)] of the first layer's pre-activations; the first layer's
weights are then drawn from N(0, sigma) instead of the 1/sqrt(fan_in)
default.  Parameters live in one flat float64 vector; the layout is the
layer order, weights then bias per layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from .errors import ContractError, RangeError
from .jets import EXP_GUARD

HEADS = ("linear", "exp", "signed_exp")


@dataclass(frozen=True)
class NetworkSpec:
    widths: tuple = (32, 32, 32)
    head: str = "signed_exp"
    fourier: int = 0
    sigma: float = 1.0
    in_dim: int = 1

    def __post_init__(self):
        if self.head not in HEADS:
            raise ContractError(f"unknown head {self.head!r}")
        if len(self.widths) < 1:
            raise ContractError("need at least one hidden layer")

    @property
    def out_units(self) -> int:
        return 2 if self.head == "signed_exp" else 1

    def layer_dims(self) -> list:
        """(fan_in, fan_out) per layer, in parameter-vector order."""
        dims = []
        prev = self.in_dim
        if self.fourier > 0:
            dims.append((prev, self.fourier))
            prev = 2 * self.fourier
        for w in self.widths:
            dims.append((prev, w))
            prev = w
        dims.append((prev, self.out_units))
        return dims

    def param_count(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims())


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
    """Weights scaled by 1/sqrt(fan_in), zero biases; Fourier block N(0, sigma).

    For signed_exp heads the sign-unit bias starts at -1 instead of 0.
    The head's output and its whole gradient scale with s * exp(t), so a
    network born at s ~ 0 sits on the edge of a stationary well where the
    optimizer cannot move; starting near -1 also matches the slope pin the
    transport systems place at the origin.
    """
    dims = spec.layer_dims()
    chunks = []
    for li, (fi, fo) in enumerate(dims):
        if spec.fourier > 0 and li == 0:
            w = rng.normal(0.0, spec.sigma, size=(fo, fi))
        else:
            w = rng.normal(0.0, 1.0, size=(fo, fi)) / np.sqrt(fi)
        chunks.append(w.ravel())
        b = np.zeros(fo)
        if li == len(dims) - 1 and spec.head == "signed_exp":
            b[0] = -1.0
        chunks.append(b)
    return np.concatenate(chunks)


def forward(theta, spec: NetworkSpec, x, offset: int = 0):
    """Evaluate the network on a batch of input jets.

    ``theta`` is a Var or flat array; ``x`` has shape (..., in_dim, K).
    Returns jets of shape (..., K).  Raises RangeError if an exponential
    head sees |pre-activation| > 700.
    """
    xv = x.value if isinstance(x, T.Var) else np.asarray(x)
    batch = xv.shape[:-2]
    K = xv.shape[-1]
    h = x
    pos = offset
    dims = spec.layer_dims()
    for li, (fi, fo) in enumerate(dims):
        W = T.reshape(T.slice_axis(theta, 0, pos, pos + fi * fo), (fo, fi))
        pos += fi * fo
        b = T.slice_axis(theta, 0, pos, pos + fo)
        pos += fo
        z = T.dense(h, W, b)
        last = li == len(dims) - 1
        if last:
            h = z
        elif spec.fourier > 0 and li == 0:
            h = T.concat([T.jcos(z), T.jsin(z)], axis=-2)
        else:
            h = T.jtanh(z)
    zv = h.value if isinstance(h, T.Var) else h
    if spec.head == "linear":
        out = T.slice_axis(h, -2, 0, 1)
        return T.reshape(out, batch + (K,))
    if spec.head == "exp":
        _guard_exp(zv[..., 0, 0])
        out = T.jexp(T.slice_axis(h, -2, 0, 1))
        return T.reshape(out, batch + (K,))
    # signed_exp: s * exp(t)
    _guard_exp(zv[..., 1, 0])
    s = T.slice_axis(h, -2, 0, 1)
    t = T.slice_axis(h, -2, 1, 2)
    out = T.jmul(s, T.jexp(t))
    return T.reshape(out, batch + (K,))


def _guard_exp(pre: np.ndarray) -> None:
    if np.any(np.abs(pre) > EXP_GUARD):
        raise RangeError("exponential head pre-activation beyond +-700")
