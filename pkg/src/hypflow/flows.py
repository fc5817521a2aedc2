"""Coupling flows on the hyperboloid and their Euclidean counterpart.

Tangent coupling (TC) runs a RealNVP-style affine coupling on the spatial
coordinates of log_o(x) and maps back with exp_o. Wrapped hyperboloid
coupling (WHC) instead scales the transformed block, parallel transports it
from the origin to a point t predicted from the kept block, and pushes it
through exp_t before returning to T_o.

Both hyperbolic layers use the scale ``2 * logistic(s)``: bounded in (0, 2)
and equal to 1 at s = 0, so zero-initialised scale nets start as identity.

Log-determinants are with respect to the Riemannian volume on H^n, so a
stack's density composes directly with the wrapped normal base density.
For WHC, the volume change of exp_t and log_o inside the coupling is taken on
the (n-d)-dimensional totally geodesic slice spanned by the transformed
coordinates, which contributes the power (n-d-1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diffnet as D
from . import lorentz as L
from . import wrapped_normal as wn
from .diffnet import Mlp
from .errors import DimensionError, NumericError
from .rng import make_rng

KINDS = ("tc", "whc", "euclidean")
_LOG2 = math.log(2.0)


@dataclass(frozen=True)
class BinaryMask:
    """Bits over the n+1 ambient coordinates; 1 marks a passed-through slot.

    The zeroth bit is always set (the time coordinate of a tangent vector at
    the origin stays 0). Euclidean layers use ``bits[1:]``.
    """

    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) < 3 or self.bits[0] != 1:
            raise DimensionError(f"invalid mask {self.bits}")
        kept = sum(self.bits[1:])
        if not 1 <= kept < len(self.bits) - 1:
            raise DimensionError(f"mask must keep between 1 and n-1 coordinates: {self.bits}")

    @classmethod
    def alternating(cls, n: int, layer_index: int) -> BinaryMask:
        """First layer keeps the leading ceil(n/2) spatial coordinates; parity flips it."""
        if n < 2:
            raise DimensionError("coupling layers need n >= 2")
        d = math.ceil(n / 2)
        spatial = [1] * d + [0] * (n - d)
        if layer_index % 2 == 1:
            spatial = [1 - b for b in spatial]
        return cls((1, *spatial))

    @property
    def n(self) -> int:
        return len(self.bits) - 1

    @property
    def keep(self) -> np.ndarray:
        """0-based spatial indices passed through unchanged."""
        return np.flatnonzero(np.array(self.bits[1:]) == 1)

    @property
    def transform(self) -> np.ndarray:
        return np.flatnonzero(np.array(self.bits[1:]) == 0)


@dataclass
class CouplingLayer:
    kind: str
    mask: BinaryMask
    s_net: Mlp
    t_net: Mlp
    index: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        d, l = len(self.mask.keep), len(self.mask.transform)
        for net in (self.s_net, self.t_net):
            if net.layer_dims[0] != d or net.layer_dims[-1] != l:
                raise DimensionError(
                    f"net dims {net.layer_dims} do not map {d} -> {l} coordinates")

    @classmethod
    def create(cls, kind: str, n: int, layer_index: int, rng: np.random.Generator,
               hidden: Sequence[int] = (128,)) -> CouplingLayer:
        mask = BinaryMask.alternating(n, layer_index)
        d, l = len(mask.keep), len(mask.transform)
        dims = [d, *hidden, l]
        return cls(kind, mask, Mlp.init(dims, rng), Mlp.init(dims, rng), layer_index)

    def parameters(self) -> list[np.ndarray]:
        return self.s_net.parameters() + self.t_net.parameters()

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        k = len(self.s_net.parameters())
        self.s_net.set_parameters(params[:k])
        self.t_net.set_parameters(params[k:])

    def _nets(self, x1, params):
        if params is None:
            return self.s_net(x1), self.t_net(x1)
        k = len(self.s_net.parameters())
        return self.s_net(x1, params[:k]), self.t_net(x1, params[k:])


# -- helpers ---------------------------------------------------------------

def _merge(a, b, mask: BinaryMask):
    """Place kept block ``a`` and transformed block ``b`` back in spatial order."""
    perm = np.concatenate([mask.keep, mask.transform])
    return D.getitem(D.concat([a, b]), (..., np.argsort(perm)))


def _split(spatial, mask: BinaryMask):
    return (D.getitem(spatial, (..., mask.keep)),
            D.getitem(spatial, (..., mask.transform)))


def _tangent(spatial):
    """Tangent vector at the origin from its spatial coordinates."""
    rows = D.value_of(spatial).shape[:-1]
    return D.concat([np.zeros(rows + (1,)), spatial])


def _spatial(v):
    return D.getitem(v, (..., slice(1, None)))


def _scale(s, layer: CouplingLayer):
    log_scale = D.add(_LOG2, D.log_logistic(s))
    scale = D.exp(log_scale)
    if np.any(D.value_of(scale) == 0.0):
        raise NumericError(f"scale underflow in layer {layer.index}")
    return scale, D.reduce_sum(log_scale, axis=-1)


def _t_point(t_out, mask: BinaryMask, radius):
    """Manifold point with zeros on the kept coordinates and t0 from the lift."""
    rows = D.value_of(t_out).shape[:-1]
    zeros = np.zeros(rows + (len(mask.keep),))
    return L.lift_to_hyperboloid(_merge(zeros, t_out, mask), radius)


def _as_batch(x):
    xv = D.value_of(x)
    if xv.ndim == 1 and not isinstance(x, D.Tensor):
        return np.asarray(xv)[None, :], True
    return x, False


def _unbatch(result, squeeze):
    if not squeeze:
        return result
    y, ld = result
    return y[0], ld[0]


# -- hyperbolic layers -------------------------------------------------------

def tc_forward(layer: CouplingLayer, x, radius=1.0, params=None,
               max_norm: float | None = L.MAX_NORM):
    """Apply a tangent-coupling layer; returns (y, log|det|)."""
    x, squeeze = _as_batch(x)
    n = D.value_of(x).shape[-1] - 1
    o = L.origin(n, radius)
    xt = L.log_map(o, x, radius, max_norm)
    x1, x2 = _split(_spatial(xt), layer.mask)
    s, t = layer._nets(x1, params)
    scale, log_scale = _scale(s, layer)
    z2 = D.add(D.mul(x2, scale), t)
    zt = _tangent(_merge(x1, z2, layer.mask))
    y = L.exp_map(o, zt, radius, max_norm)
    log_det = D.add(D.sub(L.exp_map_logdet(zt, radius), L.exp_map_logdet(xt, radius)),
                    log_scale)
    return _unbatch((y, log_det), squeeze)


def tc_inverse(layer: CouplingLayer, y, radius=1.0, params=None,
               max_norm: float | None = L.MAX_NORM):
    """Invert :func:`tc_forward`; the log-det is that of the inverse map."""
    y, squeeze = _as_batch(y)
    n = D.value_of(y).shape[-1] - 1
    o = L.origin(n, radius)
    yt = L.log_map(o, y, radius, max_norm)
    y1, y2 = _split(_spatial(yt), layer.mask)
    s, t = layer._nets(y1, params)
    scale, log_scale = _scale(s, layer)
    x2 = D.div(D.sub(y2, t), scale)
    xt = _tangent(_merge(y1, x2, layer.mask))
    x = L.exp_map(o, xt, radius, max_norm)
    log_det = D.sub(D.sub(L.exp_map_logdet(xt, radius), L.exp_map_logdet(yt, radius)),
                    log_scale)
    return _unbatch((x, log_det), squeeze)


def whc_forward(layer: CouplingLayer, x, radius=1.0, params=None,
                max_norm: float | None = L.MAX_NORM):
    """Apply a wrapped-hyperboloid-coupling layer; returns (y, log|det|)."""
    x, squeeze = _as_batch(x)
    n = D.value_of(x).shape[-1] - 1
    l = len(layer.mask.transform)
    o = L.origin(n, radius)
    xt = L.log_map(o, x, radius, max_norm)
    x1, x2 = _split(_spatial(xt), layer.mask)
    s, t_out = layer._nets(x1, params)
    scale, log_scale = _scale(s, layer)
    zeros = np.zeros(D.value_of(x1).shape)
    v = _tangent(_merge(zeros, D.mul(x2, scale), layer.mask))
    t = _t_point(t_out, layer.mask, radius)
    q = L.parallel_transport(o, t, v, radius)
    w = L.log_map(o, L.exp_map(t, q, radius, max_norm), radius, max_norm)
    z2 = D.getitem(_spatial(w), (..., layer.mask.transform))
    zt = _tangent(_merge(x1, z2, layer.mask))
    y = L.exp_map(o, zt, radius, max_norm)
    inner = D.sub(L.exp_map_logdet(q, radius, dim=l), L.exp_map_logdet(w, radius, dim=l))
    outer = D.sub(L.exp_map_logdet(zt, radius), L.exp_map_logdet(xt, radius))
    log_det = D.add(D.add(log_scale, inner), outer)
    return _unbatch((y, log_det), squeeze)


def whc_inverse(layer: CouplingLayer, y, radius=1.0, params=None,
                max_norm: float | None = L.MAX_NORM):
    """Closed-form inverse of :func:`whc_forward`."""
    y, squeeze = _as_batch(y)
    n = D.value_of(y).shape[-1] - 1
    l = len(layer.mask.transform)
    o = L.origin(n, radius)
    yt = L.log_map(o, y, radius, max_norm)
    y1, y2 = _split(_spatial(yt), layer.mask)
    s, t_out = layer._nets(y1, params)
    scale, log_scale = _scale(s, layer)
    zeros = np.zeros(D.value_of(y1).shape)
    w = _tangent(_merge(zeros, y2, layer.mask))
    t = _t_point(t_out, layer.mask, radius)
    q = L.log_map(t, L.exp_map(o, w, radius, max_norm), radius, max_norm)
    v = L.parallel_transport(t, o, q, radius)
    x2 = D.div(D.getitem(_spatial(v), (..., layer.mask.transform)), scale)
    xt = _tangent(_merge(y1, x2, layer.mask))
    x = L.exp_map(o, xt, radius, max_norm)
    inner = D.sub(L.exp_map_logdet(q, radius, dim=l), L.exp_map_logdet(w, radius, dim=l))
    outer = D.sub(L.exp_map_logdet(yt, radius), L.exp_map_logdet(xt, radius))
    log_det = D.neg(D.add(D.add(log_scale, inner), outer))
    return _unbatch((x, log_det), squeeze)


# -- Euclidean baseline ----------------------------------------------------

def euclidean_affine_forward(layer: CouplingLayer, x, params=None):
    """RealNVP affine coupling on R^n: y2 = x2 * exp(s(x1)) + t(x1)."""
    x, squeeze = _as_batch(x)
    x1, x2 = _split(x, layer.mask)
    s, t = layer._nets(x1, params)
    y2 = D.add(D.mul(x2, D.exp(s)), t)
    return _unbatch((_merge(x1, y2, layer.mask), D.reduce_sum(s, axis=-1)), squeeze)


def euclidean_affine_inverse(layer: CouplingLayer, y, params=None):
    y, squeeze = _as_batch(y)
    y1, y2 = _split(y, layer.mask)
    s, t = layer._nets(y1, params)
    x2 = D.mul(D.sub(y2, t), D.exp(D.neg(s)))
    return _unbatch((_merge(y1, x2, layer.mask), D.neg(D.reduce_sum(s, axis=-1))), squeeze)


def layer_forward(layer, x, radius=1.0, params=None, max_norm=L.MAX_NORM):
    if layer.kind == "tc":
        return tc_forward(layer, x, radius, params, max_norm)
    if layer.kind == "whc":
        return whc_forward(layer, x, radius, params, max_norm)
    return euclidean_affine_forward(layer, x, params)


def layer_inverse(layer, y, radius=1.0, params=None, max_norm=L.MAX_NORM):
    if layer.kind == "tc":
        return tc_inverse(layer, y, radius, params, max_norm)
    if layer.kind == "whc":
        return whc_inverse(layer, y, radius, params, max_norm)
    return euclidean_affine_inverse(layer, y, params)


# -- stacks --------------------------------------------------------------------

@dataclass
class FlowStack:
    """Coupling layers on top of a diagonal base distribution.

    For hyperbolic stacks the base is a wrapped normal whose location is
    stored as spatial tangent coordinates at the origin (``base_mean``), so it
    stays meaningful when the radius changes. Euclidean stacks use a diagonal
    Gaussian on R^n with the same two parameter vectors.
    """

    dim: int
    kind: str
    layers: list[CouplingLayer] = field(default_factory=list)
    base_mean: np.ndarray | None = None
    base_log_sigma: np.ndarray | None = None
    radius: float = 1.0
    max_norm: float | None = L.MAX_NORM

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if self.base_mean is None:
            self.base_mean = np.zeros(self.dim)
        if self.base_log_sigma is None:
            self.base_log_sigma = np.zeros(self.dim)
        self.base_mean = np.asarray(self.base_mean, dtype=np.float64)
        self.base_log_sigma = np.asarray(self.base_log_sigma, dtype=np.float64)
        for layer in self.layers:
            if layer.mask.n != self.dim or layer.kind != self.kind:
                raise DimensionError("all layers must share the stack's kind and dimension")

    @classmethod
    def create(cls, kind: str, dim: int, n_layers: int, seed: int,
               hidden: Sequence[int] = (128,), radius: float = 1.0,
               max_norm: float | None = L.MAX_NORM) -> FlowStack:
        rng = make_rng(seed)
        layers = [CouplingLayer.create(kind, dim, i, rng, hidden) for i in range(n_layers)]
        return cls(dim, kind, layers, radius=radius, max_norm=max_norm)

    @property
    def hyperbolic(self) -> bool:
        return self.kind != "euclidean"

    def parameters(self) -> list[np.ndarray]:
        out = [self.base_mean, self.base_log_sigma]
        for layer in self.layers:
            out += layer.parameters()
        return out

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        params = [np.asarray(p, dtype=np.float64) for p in params]
        self.base_mean, self.base_log_sigma = params[0], params[1]
        i = 2
        for layer in self.layers:
            k = len(layer.parameters())
            layer.set_parameters(params[i:i + k])
            i += k

    def layer_params(self, params) -> list:
        """Slice a flat parameter list into per-layer chunks."""
        chunks, i = [], 2
        for layer in self.layers:
            k = len(layer.parameters())
            chunks.append(params[i:i + k])
            i += k
        return chunks

    @property
    def base(self) -> wn.WrappedNormal:
        return wn.WrappedNormal.from_tangent(self.base_mean, np.exp(self.base_log_sigma),
                                             self.radius)

    def base_log_prob(self, z0, params=None, radius=None):
        radius = self.radius if radius is None else radius
        mean, log_sigma = (self.base_mean, self.base_log_sigma) if params is None else params[:2]
        sigma = D.exp(log_sigma)
        if not self.hyperbolic:
            scaled = D.div(D.sub(z0, mean), sigma)
            return D.sub(D.mul(-0.5, D.dot(scaled, scaled)),
                         D.add(D.reduce_sum(log_sigma), 0.5 * self.dim * math.log(2 * math.pi)))
        o = L.origin(self.dim, radius)
        mu = L.exp_map(o, _tangent(mean), radius, self.max_norm)
        return wn.log_prob(z0, mu, sigma, radius)

    def sample_base(self, count: int, seed) -> np.ndarray:
        if self.hyperbolic:
            return self.base.sample(count, seed)
        from .rng import normal
        rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
        return self.base_mean + np.exp(self.base_log_sigma) * normal(rng, (count, self.dim))


def stack_forward(stack: FlowStack, z0, params=None, radius=None):
    """Push base-space points through every layer; returns (z_k, sum log|det|)."""
    radius = stack.radius if radius is None else radius
    chunks = stack.layer_params(params) if params is not None else [None] * len(stack.layers)
    z = z0
    total = np.zeros(D.value_of(z0).shape[:-1])
    for layer, p in zip(stack.layers, chunks):
        z, ld = layer_forward(layer, z, radius, p, stack.max_norm)
        total = D.add(total, ld)
    return z, total


def stack_inverse(stack: FlowStack, x, params=None, radius=None):
    """Run the layers backwards; returns (z_0, sum of inverse log|det|)."""
    radius = stack.radius if radius is None else radius
    chunks = stack.layer_params(params) if params is not None else [None] * len(stack.layers)
    z = x
    total = np.zeros(D.value_of(x).shape[:-1])
    for layer, p in reversed(list(zip(stack.layers, chunks))):
        z, ld = layer_inverse(layer, z, radius, p, stack.max_norm)
        total = D.add(total, ld)
    return z, total


def stack_log_prob(stack: FlowStack, x, params=None, radius=None):
    """log density of the stack's pushforward at ``x``."""
    radius = stack.radius if radius is None else radius
    z0, inv_log_det = stack_inverse(stack, x, params, radius)
    return D.add(stack.base_log_prob(z0, params, radius), inv_log_det)


def stack_sample(stack: FlowStack, count: int, seed) -> np.ndarray:
    z0 = stack.sample_base(count, seed)
    return stack_forward(stack, z0)[0]
