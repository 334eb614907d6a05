"""Bidirectional GRU encoders for passages and questions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class GruDirectionParams:
    """One GRU direction with gate blocks stacked as [update, reset, candidate].

    ``w_x`` is (in, 3h), ``w_h`` is (h, 3h), ``b`` is (3h,).
    """

    w_x: Tensor
    w_h: Tensor
    b: Tensor

    def __post_init__(self):
        h = self.w_h.shape[0]
        if self.w_h.shape != (h, 3 * h) or self.w_x.shape[1:] != (3 * h,) or self.b.shape != (3 * h,):
            raise ShapeError(
                f"GRU params do not conform: w_x {self.w_x.shape}, w_h {self.w_h.shape}, b {self.b.shape}"
            )

    @property
    def input_size(self) -> int:
        return self.w_x.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.b}

    @classmethod
    def zeros(cls, n_in: int, h: int) -> "GruDirectionParams":
        return cls(
            Tensor(np.zeros((n_in, 3 * h)), requires_grad=True),
            Tensor(np.zeros((h, 3 * h)), requires_grad=True),
            Tensor(np.zeros(3 * h), requires_grad=True),
        )

    @classmethod
    def init(cls, n_in: int, h: int, rng: np.random.Generator, std: float = 0.1) -> "GruDirectionParams":
        return cls(
            Tensor(rng.normal(0.0, std, (n_in, 3 * h)), requires_grad=True),
            Tensor(rng.normal(0.0, std, (h, 3 * h)), requires_grad=True),
            Tensor(np.zeros(3 * h), requires_grad=True),
        )


@dataclass
class BiGruLayer:
    forward: GruDirectionParams
    backward: GruDirectionParams

    def __post_init__(self):
        f, b = self.forward, self.backward
        if (f.input_size, f.hidden_size) != (b.input_size, b.hidden_size):
            raise ShapeError("forward and backward directions must share input and hidden sizes")

    @property
    def input_size(self) -> int:
        return self.forward.input_size

    @property
    def hidden_size(self) -> int:
        return self.forward.hidden_size

    @property
    def output_size(self) -> int:
        return 2 * self.hidden_size

    def tensors(self) -> dict[str, Tensor]:
        out = {f"fwd.{k}": v for k, v in self.forward.tensors().items()}
        out.update({f"bwd.{k}": v for k, v in self.backward.tensors().items()})
        return out

    @classmethod
    def zeros(cls, n_in: int, h: int) -> "BiGruLayer":
        return cls(GruDirectionParams.zeros(n_in, h), GruDirectionParams.zeros(n_in, h))

    @classmethod
    def init(cls, n_in: int, h: int, rng: np.random.Generator, std: float = 0.1) -> "BiGruLayer":
        return cls(GruDirectionParams.init(n_in, h, rng, std), GruDirectionParams.init(n_in, h, rng, std))


def gru_step(params: GruDirectionParams, prev_hidden: Tensor, x: Tensor) -> Tensor:
    """A single GRU update built from tensor primitives.

    Works on a single vector or a batch of row vectors.  This is the plain
    composition of the gate equations; sequences go through the fused
    :func:`tensor.gru_scan`, which must agree with it.
    """
    prev_hidden, x = T.as_tensor(prev_hidden), T.as_tensor(x)
    h = params.hidden_size
    if x.shape[-1] != params.input_size or prev_hidden.shape[-1] != h:
        raise ShapeError(
            f"gru_step: input {x.shape} / hidden {prev_hidden.shape} vs params ({params.input_size}->{h})"
        )
    w_x, w_h, b = params.w_x, params.w_h, params.b

    def block(k):
        sl = slice(k * h, (k + 1) * h)
        return w_x[:, sl], w_h[:, sl], b[sl]

    def bias(v, like):
        return T.expand(v, like.shape[0], axis=0) if like.ndim == 2 else v

    (wz, uz, bz), (wr, ur, br), (wc, uc, bc) = block(0), block(1), block(2)
    z = T.sigmoid(T.matmul(x, wz) + T.matmul(prev_hidden, uz) + bias(bz, x))
    r = T.sigmoid(T.matmul(x, wr) + T.matmul(prev_hidden, ur) + bias(br, x))
    cand = T.tanh(T.matmul(x, wc) + T.matmul(r * prev_hidden, uc) + bias(bc, x))
    return (1.0 - z) * prev_hidden + z * cand


def _batched(inputs: Tensor, mask):
    inputs = T.as_tensor(inputs)
    if inputs.ndim == 2:
        if inputs.shape[0] == 0:
            raise ShapeError("cannot encode an empty sequence")
        m = None if mask is None else np.asarray(mask, dtype=bool)[None, :]
        return T.reshape(inputs, (1,) + inputs.shape), m, True
    if inputs.ndim != 3:
        raise ShapeError(f"expected (time, features) or (batch, time, features), got {inputs.shape}")
    if inputs.shape[1] == 0:
        raise ShapeError("cannot encode an empty sequence")
    return inputs, mask, False


def _directions(layer: BiGruLayer, x: Tensor, mask):
    f, b = layer.forward, layer.backward
    fwd = T.gru_scan(x, f.w_x, f.w_h, f.b, mask=mask, reverse=False)
    bwd = T.gru_scan(x, b.w_x, b.w_h, b.b, mask=mask, reverse=True)
    return fwd, bwd


def bigru_encode(layer: BiGruLayer, inputs: Tensor, mask=None) -> Tensor:
    """Encode a sequence (or padded batch) into concat(forward, backward) states.

    Padding must sit at the end of each row; padded positions carry the
    previous state and are left for downstream masks to exclude.
    """
    x, m, single = _batched(inputs, mask)
    fwd, bwd = _directions(layer, x, m)
    out = T.concat([fwd, bwd], axis=-1)
    return T.reshape(out, out.shape[1:]) if single else out


def stack_layers(
    layers: Sequence[BiGruLayer],
    inputs: Tensor,
    mask=None,
    rate: float = 0.0,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    final_states: bool = False,
):
    """Run stacked BiGRU layers, applying dropout to every layer's input.

    With ``final_states`` the top layer's endpoint states (last forward and
    first backward) are returned alongside the sequence output.
    """
    for lower, upper in zip(layers, layers[1:]):
        if upper.input_size != lower.output_size:
            raise ShapeError(
                f"layer chain mismatch: {lower.output_size} outputs feed {upper.input_size} inputs"
            )
    x, m, single = _batched(inputs, mask)
    for k, layer in enumerate(layers):
        x = T.dropout(x, rate, mode, rng)
        fwd, bwd = _directions(layer, x, m)
        x = T.concat([fwd, bwd], axis=-1)
    out = T.reshape(x, x.shape[1:]) if single else x
    if not final_states:
        return out
    # padding carries forward states to the last column and leaves the
    # backward state at column 0 untouched by padding
    j = T.concat([fwd[:, -1, :], bwd[:, 0, :]], axis=-1)
    if single:
        j = T.reshape(j, j.shape[1:])
    return out, j


def encode_question(layers, embedded: Tensor, mask=None, rate: float = 0.0, mode: str = "eval", rng=None) -> Tensor:
    """Question vector: final forward state concatenated with first backward state."""
    if isinstance(layers, BiGruLayer):
        layers = [layers]
    _, j = stack_layers(layers, embedded, mask, rate, mode, rng, final_states=True)
    return j
