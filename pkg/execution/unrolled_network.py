"""
Unrolled physics-guided network
Residual CNN regularizer alternating with CG data consistency, weights shared across unrolls
"""
import math
from collections import OrderedDict
from typing import Dict, Mapping, Optional, Set, Tuple, Union

import numpy as np
from loguru import logger

from execution.config import ResNetConfig, UnrollConfig
from execution.errors import ConsistencyError, UsageError
from execution.mri_operators import CoilMaps, KSpaceVolume, SamplingMask, zero_filled_init
from execution.solvers import dc_solve
from execution.tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    conv2d,
    exp,
    from_channels,
    relu,
    scale,
    to_channels,
)


PUBLISHED_PARAMETER_COUNT = 592_129
MU_PARAM = "log_mu"


# ============================================
# PARAMETERS
# ============================================

def parameter_shapes(cfg: ResNetConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Name -> shape of every trainable tensor; a pure function of the config"""
    k, ch, io = cfg.kernel_size, cfg.n_channels, cfg.io_channels
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    shapes["conv_in.weight"] = (ch, io, k, k)
    if cfg.io_bias:
        shapes["conv_in.bias"] = (ch,)
    for b in range(cfg.n_res_blocks):
        for j in (1, 2):
            shapes[f"rb{b}.conv{j}.weight"] = (ch, ch, k, k)
            if cfg.rb_bias:
                shapes[f"rb{b}.conv{j}.bias"] = (ch,)
    shapes["conv_out.weight"] = (io, ch, k, k)
    if cfg.io_bias:
        shapes["conv_out.bias"] = (io,)
    shapes[MU_PARAM] = ()
    return shapes


def parameter_count(cfg: ResNetConfig) -> int:
    return sum(int(np.prod(shape)) for shape in parameter_shapes(cfg).values())


def published_parameter_report() -> Dict[str, int]:
    """
    Parameter counts of the published architecture variants

    The published total (592,129) is reproduced by 8 bias-free residual blocks plus
    the penalty scalar; 15 blocks at 64 channels give about 1.1M.
    """
    return {
        "published": PUBLISHED_PARAMETER_COUNT,
        "15rb_64ch_io_bias": parameter_count(ResNetConfig.full_scale()),
        "15rb_64ch_no_bias": parameter_count(ResNetConfig.full_scale(io_bias=False)),
        "8rb_64ch_no_bias": parameter_count(ResNetConfig.full_scale(n_res_blocks=8, io_bias=False)),
    }


class ParamStore:
    """Named real trainable tensors with gradient and Adam moment buffers"""

    def __init__(self, config: ResNetConfig, values: Mapping[str, np.ndarray]):
        expected = parameter_shapes(config)
        if list(values) != list(expected):
            raise UsageError(f"parameter names {list(values)} do not match config {list(expected)}")
        for name, shape in expected.items():
            if np.shape(values[name]) != shape:
                raise UsageError(f"parameter {name}: shape {np.shape(values[name])} != {shape}")

        self.config = config
        self.values: "OrderedDict[str, np.ndarray]" = OrderedDict(
            (name, np.array(v, dtype=np.asarray(v).dtype)) for name, v in values.items()
        )
        self.grads: Dict[str, np.ndarray] = {}
        self.adam_m: Dict[str, np.ndarray] = {}
        self.adam_v: Dict[str, np.ndarray] = {}
        self.step = 0
        self.frozen: Set[str] = set()
        self.zero_grad()

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self):
        return list(self.values)

    def count(self) -> int:
        return sum(v.size for v in self.values.values())

    @property
    def dtype(self) -> np.dtype:
        return self.values[MU_PARAM].dtype

    @property
    def mu(self) -> float:
        return float(np.exp(self.values[MU_PARAM]))

    def zero_grad(self) -> None:
        self.grads = {name: np.zeros_like(v) for name, v in self.values.items()}

    def accumulate_grad(self, name: str, grad: np.ndarray) -> None:
        if name not in self.values:
            raise UsageError(f"gradient for unknown parameter {name}")
        self.grads[name] = self.grads[name] + np.asarray(grad, dtype=self.values[name].dtype)

    def bind(self, tape: Optional[Tape] = None) -> Dict[str, Tensor]:
        """Tensors for a forward pass; trainable leaves on `tape` unless frozen"""
        bound = {}
        for name, value in self.values.items():
            if tape is not None and name not in self.frozen:
                bound[name] = tape.leaf(value, name)
            else:
                bound[name] = Tensor(value)
        return bound

    def astype(self, dtype: np.dtype) -> "ParamStore":
        store = ParamStore(self.config, {n: v.astype(dtype) for n, v in self.values.items()})
        store.frozen = set(self.frozen)
        return store

    def copy(self) -> "ParamStore":
        store = ParamStore(self.config, {n: v.copy() for n, v in self.values.items()})
        store.adam_m = {n: m.copy() for n, m in self.adam_m.items()}
        store.adam_v = {n: v.copy() for n, v in self.adam_v.items()}
        store.step = self.step
        store.frozen = set(self.frozen)
        return store


def init_params(
    cfg: ResNetConfig,
    seed: int = 0,
    mu_init: float = 0.05,
    dtype: Union[str, np.dtype] = np.float64,
) -> ParamStore:
    """
    Seeded Glorot-uniform initialization

    Kernels ~ U[-a, a], a = sqrt(6 / (fan_in + fan_out)); biases zero; log_mu = log(mu_init).
    """
    if mu_init <= 0:
        raise UsageError(f"mu_init must be positive, got {mu_init}")
    rng = np.random.default_rng(seed)
    values = OrderedDict()
    for name, shape in parameter_shapes(cfg).items():
        if name == MU_PARAM:
            values[name] = np.asarray(math.log(mu_init), dtype=dtype)
        elif name.endswith(".bias"):
            values[name] = np.zeros(shape, dtype=dtype)
        else:
            c_out, c_in, kh, kw = shape
            a = math.sqrt(6.0 / ((c_in + c_out) * kh * kw))
            values[name] = rng.uniform(-a, a, size=shape).astype(dtype)
    store = ParamStore(cfg, values)
    logger.debug(f"Initialized {store.count()} parameters (seed {seed})")
    return store


def report_parameter_count(params: ParamStore) -> int:
    """Log the trainable parameter count next to the published figure"""
    n = params.count()
    logger.info(f"Trainable parameters: {n:,} ({params.config.n_res_blocks} RB, {params.config.n_channels} ch)")
    report = published_parameter_report()
    if params.config.n_res_blocks == 15 and params.config.n_channels == 64 and n != PUBLISHED_PARAMETER_COUNT:
        logger.warning(
            f"Paper-scale count {n:,} differs from the published {PUBLISHED_PARAMETER_COUNT:,}; "
            f"8 bias-free blocks give {report['8rb_64ch_no_bias']:,}"
        )
    return n


# ============================================
# FORWARD PASSES
# ============================================

def _weights(params: Union[ParamStore, Dict[str, Tensor]]) -> Dict[str, Tensor]:
    return params.bind(None) if isinstance(params, ParamStore) else params


def resnet_forward(x: Tensor, params: Union[ParamStore, Dict[str, Tensor]], cfg: ResNetConfig) -> Tensor:
    """
    Residual CNN regularizer on a complex image

    complex -> 2 channels -> input conv -> RBs [conv, ReLU, conv, scale C, skip] -> output conv -> complex

    Args:
        x: complex [H, W]
        params: ParamStore (constants) or bound tensors from ParamStore.bind
        cfg: architecture

    Returns:
        complex [H, W]
    """
    w = _weights(params)
    h = conv2d(to_channels(as_tensor(x)), w["conv_in.weight"], w.get("conv_in.bias"))
    for b in range(cfg.n_res_blocks):
        r = conv2d(h, w[f"rb{b}.conv1.weight"], w.get(f"rb{b}.conv1.bias"))
        r = relu(r)
        r = conv2d(r, w[f"rb{b}.conv2.weight"], w.get(f"rb{b}.conv2.bias"))
        h = add(h, scale(r, cfg.scale_c))
    h = conv2d(h, w["conv_out.weight"], w.get("conv_out.bias"))
    return from_channels(h)


def unrolled_forward(
    y: KSpaceVolume,
    maps: CoilMaps,
    dc_mask: SamplingMask,
    params: ParamStore,
    cfg: UnrollConfig,
    tape: Optional[Tape] = None,
) -> Tensor:
    """
    T alternations of regularizer and data consistency

    x0 = E^H y on dc_mask; z = resnet(x); x = dc_solve(z, mu = exp(log_mu)).
    Training passes Theta as dc_mask, inference passes the full acquired Omega.

    Args:
        y: measured k-space
        maps: coil sensitivities
        dc_mask: locations enforced in the DC units
        params: shared weights for all unrolls
        cfg: unroll count and CG settings
        tape: record for reverse-mode differentiation (None for inference)

    Returns:
        x^(T) [H, W]

    Raises:
        ConsistencyError: dc_mask not a subset of the acquired indices
    """
    if not dc_mask.is_subset_of(y.acquired_mask):
        raise ConsistencyError(f"slice {y.slice_id}: DC mask is not a subset of the acquired indices")

    w = params.bind(tape)
    mu = exp(w[MU_PARAM])

    x = zero_filled_init(y, maps, dc_mask)
    for _ in range(cfg.n_unrolls):
        z = resnet_forward(x, w, params.config)
        x = dc_solve(z, y, maps, dc_mask, cfg.dc, mu=mu)
    return x


def reconstruct(y: KSpaceVolume, maps: CoilMaps, params: ParamStore, cfg: UnrollConfig) -> np.ndarray:
    """Inference with the full acquired mask in DC, returned in physical units"""
    y = y.normalized()
    x = unrolled_forward(y, maps, y.acquired_mask, params, cfg)
    return x.data * y.scale
