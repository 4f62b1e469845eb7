"""The three concrete networks: im2col CNN teacher, two-layer GNN student.

Convolution is expressed as patch extraction (im2col) followed by a matrix
multiply with the flattened kernel bank, so the whole teacher runs on the
same primitive ops as everything else. The student is the bilinear model
Z = relu(P X W1) W2: one propagation factor from the graph, one projection
factor per layer, no biases.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .graph import GraphBatch
from .optim import ModelParams, glorot_uniform
from .tensor import ShapeError, Tensor, matmul, relu

__all__ = [
    "ConvSpec",
    "CnnTeacher",
    "GnnStudent",
    "im2col",
    "conv_output_size",
    "teacher_forward",
    "make_teacher",
    "gnn_layer",
    "student_forward",
    "make_student",
]


def _pair(value) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        return int(value[0]), int(value[1])
    return int(value), int(value)


def conv_output_size(h: int, w: int, kernel, stride=1, padding=0) -> tuple[int, int]:
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    return oh, ow


def im2col(x: Tensor, kernel, stride=1, padding=0) -> Tensor:
    """Flatten every receptive-field patch of a (b, c, h, w) tensor into a row.

    Output shape is (b*oh*ow, c*kh*kw) with rows ordered batch-major, then
    row-major over output positions. Convolution follows as a single matmul
    against the flattened kernel bank.
    """
    x = Tensor._lift(x)
    if x.data.ndim != 4:
        raise ShapeError(f"im2col expects (b, c, h, w), got {x.shape}")
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    b, c, h, w = x.shape
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeError(
            f"kernel ({kh}x{kw}) larger than padded input ({h + 2 * ph}x{w + 2 * pw})"
        )
    oh, ow = conv_output_size(h, w, (kh, kw), (sh, sw), (ph, pw))
    padded = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    col = np.empty((b, c, kh, kw, oh, ow))
    for i in range(kh):
        for j in range(kw):
            col[:, :, i, j] = padded[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw]
    out = col.transpose(0, 4, 5, 1, 2, 3).reshape(b * oh * ow, c * kh * kw)

    def backward(g):
        gcol = g.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gpad = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                gpad[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += gcol[:, :, i, j]
        if ph or pw:
            gpad = gpad[:, :, ph : ph + h, pw : pw + w]
        return (gpad,)

    return Tensor._from_op(out, (x,), backward)


@dataclass
class ConvSpec:
    in_ch: int
    out_ch: int
    kernel: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)


class CnnTeacher:
    """Small convolutional classifier: conv+relu stages, then dense layers."""

    def __init__(
        self,
        input_shape: tuple[int, int, int],
        conv_specs: Sequence[ConvSpec],
        fc_widths: Sequence[int],
        params: ModelParams,
    ):
        self.input_shape = tuple(input_shape)
        self.conv_specs = list(conv_specs)
        self.fc_widths = list(fc_widths)
        self.params = params
        self._check_chain()

    def _check_chain(self) -> None:
        c, h, w = self.input_shape
        for spec in self.conv_specs:
            if spec.in_ch != c:
                raise ValueError(f"conv expects {spec.in_ch} channels, previous stage emits {c}")
            h, w = conv_output_size(h, w, spec.kernel, spec.stride, spec.padding)
            if h <= 0 or w <= 0:
                raise ValueError("convolution stack collapses the spatial extent")
            c = spec.out_ch
        if self.fc_widths[0] != c * h * w:
            raise ValueError(
                f"first dense layer expects width {self.fc_widths[0]}, conv stack emits {c * h * w}"
            )

    @property
    def class_count(self) -> int:
        return self.fc_widths[-1]

    def forward(self, x: Tensor) -> Tensor:
        x = Tensor._lift(x)
        b = x.shape[0]
        if x.data.ndim == 2:
            x = x.reshape(b, *self.input_shape)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"teacher expects {self.input_shape} inputs, got {x.shape[1:]}")
        c, h, w = self.input_shape
        for i, spec in enumerate(self.conv_specs):
            cols = im2col(x, spec.kernel, spec.stride, spec.padding)
            oh, ow = conv_output_size(h, w, spec.kernel, spec.stride, spec.padding)
            z = matmul(cols, self.params[f"conv{i}.w"]) + self.params[f"conv{i}.b"]
            x = relu(z.reshape(b, oh, ow, spec.out_ch).permute((0, 3, 1, 2)))
            c, h, w = spec.out_ch, oh, ow
        x = x.reshape(b, c * h * w)
        n_fc = len(self.fc_widths) - 1
        for i in range(n_fc):
            x = matmul(x, self.params[f"fc{i}.w"]) + self.params[f"fc{i}.b"]
            if i < n_fc - 1:
                x = relu(x)
        return x


def make_teacher(
    rng: np.random.Generator,
    input_shape: tuple[int, int, int],
    classes: int,
    conv_channels: Sequence[int] = (8, 16),
    kernel: Optional[tuple[int, int]] = None,
    fc_hidden: int = 64,
) -> CnnTeacher:
    """Desk-scale teacher: two im2col conv stages plus two dense layers.

    The kernel defaults to 3x3, shrunk to fit flat inputs viewed as 1-pixel-
    tall images.
    """
    c, h, w = input_shape
    if kernel is None:
        kernel = (min(3, h), min(3, w))
    params = ModelParams()
    specs = []
    in_ch, ch, cw = c, h, w
    for i, out_ch in enumerate(conv_channels):
        spec = ConvSpec(in_ch, out_ch, kernel)
        fan_in = in_ch * kernel[0] * kernel[1]
        params.add(f"conv{i}.w", glorot_uniform(rng, fan_in, out_ch))
        params.add(f"conv{i}.b", np.zeros(out_ch))
        ch, cw = conv_output_size(ch, cw, spec.kernel, spec.stride, spec.padding)
        specs.append(spec)
        in_ch = out_ch
    flat = in_ch * ch * cw
    fc_widths = [flat, fc_hidden, classes]
    for i in range(len(fc_widths) - 1):
        params.add(f"fc{i}.w", glorot_uniform(rng, fc_widths[i], fc_widths[i + 1]))
        params.add(f"fc{i}.b", np.zeros(fc_widths[i + 1]))
    return CnnTeacher(input_shape, specs, fc_widths, params)


def teacher_forward(teacher: CnnTeacher, x) -> Tensor:
    """Teacher logits (pre-softmax), deterministic given parameters."""
    return teacher.forward(Tensor._lift(x))


class GnnStudent:
    """Two graph layers: relu(P X W1) then P H W2, emitting raw logits."""

    def __init__(self, params: ModelParams, layer_widths: Sequence[int]):
        if len(layer_widths) != 3:
            raise ValueError(f"student takes [in, hidden, classes] widths, got {layer_widths}")
        self.params = params
        self.layer_widths = list(layer_widths)

    @property
    def class_count(self) -> int:
        return self.layer_widths[-1]


def make_student(rng: np.random.Generator, in_dim: int, hidden: int, classes: int) -> GnnStudent:
    params = ModelParams()
    params.add("w1", glorot_uniform(rng, in_dim, hidden))
    params.add("w2", glorot_uniform(rng, hidden, classes))
    return GnnStudent(params, [in_dim, hidden, classes])


def gnn_layer(propagation: Tensor, x: Tensor, weight: Tensor, activate: bool) -> Tensor:
    """One bilinear graph layer: (optionally rectified) P @ X @ W."""
    z = matmul(matmul(propagation, x), weight)
    return relu(z) if activate else z


def student_forward(student: GnnStudent, batch: GraphBatch) -> Tensor:
    p = batch.propagation
    hidden = gnn_layer(p, batch.features, student.params["w1"], activate=True)
    return gnn_layer(p, hidden, student.params["w2"], activate=False)
