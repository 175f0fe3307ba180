"""
Dense tensors and a reverse-mode differentiation tape
Covers exactly the operations the unrolled network needs

Complex quantities are differentiated by treating real and imaginary parts as
independent real variables. The cotangent of a complex tensor z is stored as
dL/dRe(z) + i dL/dIm(z), so a complex-linear map A propagates cotangents by A^H.
"""
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view

from execution.errors import DimensionError, UsageError


KIND_BY_DTYPE = {
    np.dtype(np.float64): "real64",
    np.dtype(np.float32): "real32",
    np.dtype(np.complex64): "complex64",
    np.dtype(np.complex128): "complex128",
}

COMPLEX_OF = {
    np.dtype(np.float64): np.dtype(np.complex128),
    np.dtype(np.float32): np.dtype(np.complex64),
}

REAL_OF = {
    np.dtype(np.complex128): np.dtype(np.float64),
    np.dtype(np.complex64): np.dtype(np.float32),
}


class Tensor:
    """Immutable N-d array, optionally recorded on a tape"""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data: Any, tape: Optional["Tape"] = None, node_id: Optional[int] = None):
        arr = np.asarray(data)
        if arr.dtype not in KIND_BY_DTYPE:
            arr = arr.astype(np.complex128 if np.iscomplexobj(arr) else np.float64)
        self.data = arr if arr.flags.c_contiguous else np.array(arr, order="C")
        self.tape = tape
        self.node_id = node_id

    def __repr__(self) -> str:
        tracked = f", node={self.node_id}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}, kind={self.kind}{tracked})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def kind(self) -> str:
        return KIND_BY_DTYPE[self.data.dtype]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> Union[float, complex]:
        return self.data.item()

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __mul__(self, other: Union["Tensor", float, int]) -> "Tensor":
        if isinstance(other, Tensor):
            if other.shape == ():
                return mul_scalar(self, other)
            if self.shape == ():
                return mul_scalar(other, self)
            raise DimensionError("Tensor * Tensor is only defined with a real scalar operand")
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: "Tensor") -> "Tensor":
        return div(self, other)


def as_tensor(value: Any) -> Tensor:
    """Wrap arrays/numbers as untracked tensors, pass tensors through"""
    return value if isinstance(value, Tensor) else Tensor(value)


# ============================================
# TAPE
# ============================================

@dataclass
class TapeNode:
    """One recorded operation"""

    node_id: int
    op: str
    inputs: Tuple[Optional[int], ...]
    saved: Dict[str, Any]
    value: np.ndarray
    name: Optional[str] = None


class GradientSink(Protocol):
    def accumulate_grad(self, name: str, grad: np.ndarray) -> None:
        ...


class Tape:
    """
    Single-writer record of operations in creation order

    Node ids are indices into `nodes`, so creation order is a topological order.
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, data: Any, name: str) -> Tensor:
        """Register a named trainable leaf"""
        arr = Tensor(data).data
        node = TapeNode(node_id=len(self.nodes), op="leaf", inputs=(), saved={}, value=arr, name=name)
        self.nodes.append(node)
        return Tensor(arr, tape=self, node_id=node.node_id)

    def record(self, op: str, inputs: Sequence[Tensor], value: np.ndarray, saved: Dict[str, Any]) -> Tensor:
        ids = []
        for t in inputs:
            if t.tape is None:
                ids.append(None)
            elif t.tape is self:
                ids.append(t.node_id)
            else:
                raise UsageError(f"{op}: operand recorded on a different tape")
        node = TapeNode(node_id=len(self.nodes), op=op, inputs=tuple(ids), saved=saved, value=value)
        self.nodes.append(node)
        return Tensor(value, tape=self, node_id=node.node_id)

    def gradients(self, loss: Tensor) -> Dict[str, np.ndarray]:
        """
        Reverse sweep from a real scalar loss

        Args:
            loss: Real scalar tensor recorded on this tape

        Returns:
            Gradient for every named leaf reachable from the loss

        Raises:
            UsageError: Loss is not a real scalar on this tape
        """
        if loss.tape is not self:
            raise UsageError("loss is not recorded on this tape")
        if loss.shape != () or loss.is_complex:
            raise UsageError(f"loss must be a real scalar, got shape {loss.shape} kind {loss.kind}")

        cotangents: Dict[int, np.ndarray] = {loss.node_id: np.ones((), dtype=loss.dtype)}
        grads: Dict[str, np.ndarray] = {}

        for node in reversed(self.nodes[: loss.node_id + 1]):
            g = cotangents.pop(node.node_id, None)
            if g is None:
                continue
            if node.op == "leaf":
                grads[node.name] = grads[node.name] + g if node.name in grads else g
                continue
            rule = _BACKWARD[node.op]
            for input_id, g_in in zip(node.inputs, rule(node, g)):
                if input_id is None or g_in is None:
                    continue
                if input_id in cotangents:
                    cotangents[input_id] = cotangents[input_id] + g_in
                else:
                    cotangents[input_id] = g_in

        return grads


def backward(loss: Tensor, params: GradientSink) -> None:
    """
    Accumulate d(loss)/d(leaf) into the parameter store

    Args:
        loss: Real scalar tensor
        params: Object receiving gradients by leaf name (a ParamStore)
    """
    if loss.tape is None:
        raise UsageError("loss does not depend on any trainable leaf")
    for name, grad in loss.tape.gradients(loss).items():
        params.accumulate_grad(name, grad)


# ============================================
# OP PLUMBING
# ============================================

BackwardRule = Callable[[TapeNode, np.ndarray], Sequence[Optional[np.ndarray]]]
_BACKWARD: Dict[str, BackwardRule] = {}


def backward_rule(op: str) -> Callable[[BackwardRule], BackwardRule]:
    """Register the cotangent rule of an op"""
    def register(fn: BackwardRule) -> BackwardRule:
        _BACKWARD[op] = fn
        return fn
    return register


def registered_ops() -> List[str]:
    return sorted(_BACKWARD)


def _emit(op: str, inputs: Sequence[Tensor], value: np.ndarray, **saved) -> Tensor:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise UsageError(f"{op}: operands recorded on different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(value)
    return tape.record(op, inputs, value, saved)


def _like(g: np.ndarray, dtype: np.dtype) -> np.ndarray:
    """Project a cotangent onto the input's real/complex kind"""
    if np.iscomplexobj(g) and not np.issubdtype(dtype, np.complexfloating):
        return np.real(g).astype(dtype, copy=False)
    return g.astype(dtype, copy=False)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _require_real(op: str, t: Tensor) -> None:
    if t.is_complex:
        raise UsageError(f"{op}: expects a real tensor")


def _require_scalar(op: str, t: Tensor) -> None:
    if t.shape != () or t.is_complex:
        raise DimensionError(f"{op}: expects a real scalar, got shape {t.shape} kind {t.kind}")


def complex_dtype_for(dtype: np.dtype) -> np.dtype:
    dtype = np.dtype(dtype)
    return dtype if np.issubdtype(dtype, np.complexfloating) else COMPLEX_OF[dtype]


def real_dtype_for(dtype: np.dtype) -> np.dtype:
    dtype = np.dtype(dtype)
    return REAL_OF[dtype] if np.issubdtype(dtype, np.complexfloating) else dtype


# ============================================
# ELEMENTWISE AND SCALAR OPS
# ============================================

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, dtypes=(a.dtype, b.dtype))


@backward_rule("add")
def _add_backward(node: TapeNode, g: np.ndarray):
    da, db = node.saved["dtypes"]
    return _like(g, da), _like(g, db)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, dtypes=(a.dtype, b.dtype))


@backward_rule("sub")
def _sub_backward(node: TapeNode, g: np.ndarray):
    da, db = node.saved["dtypes"]
    return _like(g, da), _like(-g, db)


def scale(t: Tensor, c: float) -> Tensor:
    """Multiply by a fixed real constant"""
    t = as_tensor(t)
    c = float(c)
    return _emit("scale", (t,), t.data * t.data.dtype.type(c), c=c)


@backward_rule("scale")
def _scale_backward(node: TapeNode, g: np.ndarray):
    return (g * g.dtype.type(node.saved["c"]),)


def mul_scalar(t: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a real scalar tensor"""
    t, s = as_tensor(t), as_tensor(s)
    _require_scalar("mul_scalar", s)
    value = t.data * s.data.astype(real_dtype_for(t.dtype))
    return _emit("mul_scalar", (t, s), value, t=t.data, s=s.data)


@backward_rule("mul_scalar")
def _mul_scalar_backward(node: TapeNode, g: np.ndarray):
    t, s = node.saved["t"], node.saved["s"]
    g_t = g * s.astype(real_dtype_for(g.dtype))
    g_s = np.asarray(np.real(np.vdot(t, g)), dtype=s.dtype)
    return g_t, g_s


def div(a: Tensor, b: Tensor) -> Tensor:
    """Quotient of two real scalars"""
    a, b = as_tensor(a), as_tensor(b)
    _require_scalar("div", a)
    _require_scalar("div", b)
    return _emit("div", (a, b), a.data / b.data, a=a.data, b=b.data)


@backward_rule("div")
def _div_backward(node: TapeNode, g: np.ndarray):
    a, b = node.saved["a"], node.saved["b"]
    return g / b, -g * a / (b * b)


def exp(t: Tensor) -> Tensor:
    t = as_tensor(t)
    _require_real("exp", t)
    value = np.exp(t.data)
    return _emit("exp", (t,), value, out=value)


@backward_rule("exp")
def _exp_backward(node: TapeNode, g: np.ndarray):
    return (g * node.saved["out"],)


def relu(t: Tensor) -> Tensor:
    t = as_tensor(t)
    _require_real("relu", t)
    positive = t.data > 0
    return _emit("relu", (t,), np.where(positive, t.data, 0).astype(t.dtype), positive=positive)


@backward_rule("relu")
def _relu_backward(node: TapeNode, g: np.ndarray):
    return (np.where(node.saved["positive"], g, 0).astype(g.dtype),)


# ============================================
# REDUCTIONS
# ============================================

def sum_all(t: Tensor) -> Tensor:
    t = as_tensor(t)
    _require_real("sum_all", t)
    return _emit("sum_all", (t,), np.asarray(t.data.sum(), dtype=t.dtype), shape=t.shape)


@backward_rule("sum_all")
def _sum_all_backward(node: TapeNode, g: np.ndarray):
    return (np.full(node.saved["shape"], g, dtype=g.dtype),)


def vdot_real(a: Tensor, b: Tensor) -> Tensor:
    """Re(sum(conj(a) * b)) as a real scalar"""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("vdot_real", a, b)
    value = np.asarray(np.real(np.vdot(a.data, b.data)), dtype=real_dtype_for(np.result_type(a.dtype, b.dtype)))
    return _emit("vdot_real", (a, b), value, a=a.data, b=b.data)


@backward_rule("vdot_real")
def _vdot_real_backward(node: TapeNode, g: np.ndarray):
    a, b = node.saved["a"], node.saved["b"]
    return _like(g * b, a.dtype), _like(g * a, b.dtype)


def norm2(t: Tensor) -> Tensor:
    """Euclidean norm over complex moduli"""
    t = as_tensor(t)
    n = np.sqrt(np.real(np.vdot(t.data, t.data)))
    return _emit("norm2", (t,), np.asarray(n, dtype=real_dtype_for(t.dtype)), t=t.data, n=n)


@backward_rule("norm2")
def _norm2_backward(node: TapeNode, g: np.ndarray):
    t, n = node.saved["t"], node.saved["n"]
    if n == 0:
        return (np.zeros_like(t),)
    return (t * (g / n),)


def norm1(t: Tensor) -> Tensor:
    """Sum of complex moduli"""
    t = as_tensor(t)
    mod = np.abs(t.data)
    return _emit("norm1", (t,), np.asarray(mod.sum(), dtype=real_dtype_for(t.dtype)), t=t.data, mod=mod)


@backward_rule("norm1")
def _norm1_backward(node: TapeNode, g: np.ndarray):
    t, mod = node.saved["t"], node.saved["mod"]
    safe = np.where(mod > 0, mod, 1)
    return (np.where(mod > 0, t / safe, 0).astype(t.dtype) * g,)


def matmul_const(a: np.ndarray, p: Tensor) -> Tensor:
    """Fixed matrix times a tracked vector"""
    p = as_tensor(p)
    a = np.asarray(a)
    if a.ndim != 2 or p.data.ndim != 1 or a.shape[1] != p.shape[0]:
        raise DimensionError(f"matmul_const: {a.shape} @ {p.shape}")
    return _emit("matmul_const", (p,), a @ p.data, a=a, dtype=p.dtype)


@backward_rule("matmul_const")
def _matmul_const_backward(node: TapeNode, g: np.ndarray):
    return (_like(node.saved["a"].conj().T @ g, node.saved["dtype"]),)


# ============================================
# COMPLEX <-> CHANNELS
# ============================================

def to_channels(z: Tensor) -> Tensor:
    """Complex [H,W] -> real [2,H,W] (real, imag)"""
    z = as_tensor(z)
    if not z.is_complex or z.data.ndim != 2:
        raise DimensionError(f"to_channels: expects complex [H,W], got {z.shape} {z.kind}")
    return _emit("to_channels", (z,), np.stack([z.data.real, z.data.imag]), dtype=z.dtype)


@backward_rule("to_channels")
def _to_channels_backward(node: TapeNode, g: np.ndarray):
    out = np.empty(g.shape[1:], dtype=node.saved["dtype"])
    out.real = g[0]
    out.imag = g[1]
    return (out,)


def from_channels(h: Tensor) -> Tensor:
    """Real [2,H,W] -> complex [H,W]"""
    h = as_tensor(h)
    if h.is_complex or h.data.ndim != 3 or h.shape[0] != 2:
        raise DimensionError(f"from_channels: expects real [2,H,W], got {h.shape} {h.kind}")
    out = np.empty(h.shape[1:], dtype=complex_dtype_for(h.dtype))
    out.real = h.data[0]
    out.imag = h.data[1]
    return _emit("from_channels", (h,), out)


@backward_rule("from_channels")
def _from_channels_backward(node: TapeNode, g: np.ndarray):
    return (np.stack([g.real, g.imag]),)


# ============================================
# CENTERED ORTHONORMAL FFT
# ============================================

_AXES = (-2, -1)


def _fft2c(x: np.ndarray) -> np.ndarray:
    return scipy.fft.fftshift(scipy.fft.fft2(scipy.fft.ifftshift(x, axes=_AXES), axes=_AXES, norm="ortho"), axes=_AXES)


def _ifft2c(x: np.ndarray) -> np.ndarray:
    return scipy.fft.fftshift(scipy.fft.ifft2(scipy.fft.ifftshift(x, axes=_AXES), axes=_AXES, norm="ortho"), axes=_AXES)


def fft2_centered(t: Tensor) -> Tensor:
    """Unitary 2-D DFT over the last two axes, DC at the center"""
    t = as_tensor(t)
    if t.data.ndim < 2:
        raise DimensionError(f"fft2_centered: needs at least 2 axes, got {t.shape}")
    return _emit("fft2c", (t,), _fft2c(t.data.astype(complex_dtype_for(t.dtype), copy=False)))


def ifft2_centered(t: Tensor) -> Tensor:
    t = as_tensor(t)
    if t.data.ndim < 2:
        raise DimensionError(f"ifft2_centered: needs at least 2 axes, got {t.shape}")
    return _emit("ifft2c", (t,), _ifft2c(t.data.astype(complex_dtype_for(t.dtype), copy=False)))


@backward_rule("fft2c")
def _fft2c_backward(node: TapeNode, g: np.ndarray):
    return (_ifft2c(g),)


@backward_rule("ifft2c")
def _ifft2c_backward(node: TapeNode, g: np.ndarray):
    return (_fft2c(g),)


# ============================================
# COIL / MASK OPS (constant operands)
# ============================================

def coil_expand(x: Tensor, maps: np.ndarray) -> Tensor:
    """[H,W] image -> [C,H,W] coil images maps_c * x"""
    x = as_tensor(x)
    if maps.ndim != 3 or maps.shape[1:] != x.shape:
        raise DimensionError(f"coil_expand: maps {maps.shape} vs image {x.shape}")
    maps = maps.astype(complex_dtype_for(x.dtype), copy=False)
    return _emit("coil_expand", (x,), maps * x.data[None], maps=maps)


@backward_rule("coil_expand")
def _coil_expand_backward(node: TapeNode, g: np.ndarray):
    return (np.sum(np.conj(node.saved["maps"]) * g, axis=0),)


def coil_combine(xs: Tensor, maps: np.ndarray) -> Tensor:
    """[C,H,W] coil images -> sum_c conj(maps_c) * xs_c"""
    xs = as_tensor(xs)
    if maps.shape != xs.shape:
        raise DimensionError(f"coil_combine: maps {maps.shape} vs coil images {xs.shape}")
    maps = maps.astype(complex_dtype_for(xs.dtype), copy=False)
    return _emit("coil_combine", (xs,), np.sum(np.conj(maps) * xs.data, axis=0), maps=maps)


@backward_rule("coil_combine")
def _coil_combine_backward(node: TapeNode, g: np.ndarray):
    return (node.saved["maps"] * g[None],)


def apply_mask(t: Tensor, mask: np.ndarray) -> Tensor:
    """Zero entries outside a boolean [H,W] grid (applied to every leading index)"""
    t = as_tensor(t)
    if mask.shape != t.shape[-2:]:
        raise DimensionError(f"apply_mask: mask {mask.shape} vs tensor {t.shape}")
    return _emit("apply_mask", (t,), np.where(mask, t.data, 0).astype(t.dtype), mask=mask)


@backward_rule("apply_mask")
def _apply_mask_backward(node: TapeNode, g: np.ndarray):
    return (np.where(node.saved["mask"], g, 0).astype(g.dtype),)


# ============================================
# CONVOLUTION
# ============================================

def _correlate(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """'Same' zero-padded cross-correlation, x [C,H,W], w [O,C,k,k] -> [O,H,W]"""
    pad = w.shape[-1] // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, w.shape[-2:], axis=(1, 2))  # [C,H,W,k,k]
    return np.tensordot(w, windows, axes=([1, 2, 3], [0, 3, 4]))


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    2-D cross-correlation with zero "same" padding

    Args:
        x: real [C_in, H, W]
        kernel: real [C_out, C_in, k, k], k odd
        bias: optional real [C_out]

    Returns:
        real [C_out, H, W]
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _require_real("conv2d", x)
    _require_real("conv2d", kernel)
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise DimensionError(f"conv2d: input {x.shape}, kernel {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if c_in != x.shape[0]:
        raise DimensionError(f"conv2d: kernel expects {c_in} input channels, got {x.shape[0]}")
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")

    out = _correlate(x.data, kernel.data)
    inputs: List[Tensor] = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise DimensionError(f"conv2d: bias {bias.shape} vs {c_out} output channels")
        out = out + bias.data[:, None, None]
        inputs.append(bias)
    return _emit("conv2d", inputs, out.astype(x.dtype, copy=False), x=x.data, kernel=kernel.data)


@backward_rule("conv2d")
def _conv2d_backward(node: TapeNode, g: np.ndarray):
    x, w = node.saved["x"], node.saved["kernel"]
    pad = w.shape[-1] // 2

    # full correlation with the flipped, channel-swapped kernel
    w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    g_x = _correlate(g, w_t)

    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, w.shape[-2:], axis=(1, 2))
    g_w = np.tensordot(g, windows, axes=([1, 2], [1, 2]))

    grads = [g_x, g_w]
    if len(node.inputs) == 3:
        grads.append(g.sum(axis=(1, 2)))
    return grads
