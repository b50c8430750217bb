"""Bilinear pooling head and the assembled two-branch network.

Each branch turns its trunk's feature map into a descriptor by Gram
pooling over spatial positions, signed square root, and L2
normalization, then classifies it with a fully connected head.  Training
evaluates both branches; inference runs the fine branch only and never
reads the coarse head's parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .backbone import COARSE, FINE, Backbone, FeatureMap, TrunkConfig
from .errors import NonFiniteValue, ShapeMismatch
from .tensor import Parameter, make_rng, uniform_init

SQRT_CLAMP = 1e-12  # |x| floor for the signed-sqrt derivative
NORM_EPS = 1e-12  # denominator guard so zero vectors normalize to zero


def _fmap_data(fmap) -> np.ndarray:
    return fmap.data if isinstance(fmap, FeatureMap) else fmap


def bilinear_pool(fmap) -> np.ndarray:
    """Gram matrix of channel vectors averaged over spatial positions.

    (D,H,W) -> (D,D) with F[i,j] = (1/(H*W)) * sum_p fmap[i,p]*fmap[j,p];
    a leading batch axis is carried through.
    """
    x = _fmap_data(fmap)
    x, squeezed = layers._as_batch(x, 3)
    n, d, h, w = x.shape
    fm = x.reshape(n, d, h * w)
    gram = fm @ fm.transpose(0, 2, 1) / (h * w)
    return gram[0] if squeezed else gram


def bilinear_pool_backward(fmap, dgram: np.ndarray) -> np.ndarray:
    """Adjoint of bilinear_pool: df = (dF + dF^T) @ f / (H*W)."""
    x = _fmap_data(fmap)
    x, squeezed = layers._as_batch(x, 3)
    dgram, _ = layers._as_batch(dgram, 2)
    n, d, h, w = x.shape
    if dgram.shape != (n, d, d):
        raise ShapeMismatch(f"gram gradient shape {dgram.shape} != {(n, d, d)}")
    fm = x.reshape(n, d, h * w)
    dfm = (dgram + dgram.transpose(0, 2, 1)) @ fm / (h * w)
    dx = dfm.reshape(n, d, h, w)
    return dx[0] if squeezed else dx


def signed_sqrt(v: np.ndarray) -> np.ndarray:
    """Elementwise sign(x) * sqrt(|x|)."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NonFiniteValue("signed_sqrt input contains non-finite values")
    return np.sign(v) * np.sqrt(np.abs(v))


def signed_sqrt_backward(v: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # true derivative 1/(2*sqrt(|x|)) diverges at 0; clamp keeps training finite
    return dy / (2.0 * np.sqrt(np.maximum(np.abs(v), SQRT_CLAMP)))


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """v / (||v||_2 + 1e-12) over the last axis; zero maps to zero."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NonFiniteValue("l2_normalize input contains non-finite values")
    norm = np.sqrt((v * v).sum(axis=-1, keepdims=True))
    return v / (norm + NORM_EPS)


def l2_normalize_backward(v: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Adjoint of v / (||v|| + eps) in closed form."""
    norm = np.sqrt((v * v).sum(axis=-1, keepdims=True))
    s = norm + NORM_EPS
    vdotdy = (v * dy).sum(axis=-1, keepdims=True)
    safe_norm = np.where(norm > 0.0, norm, 1.0)
    correction = np.where(norm > 0.0, v * vdotdy / (safe_norm * s * s), 0.0)
    return dy / s - correction


@dataclass
class ClassifierHead:
    """Fully connected classifier over a branch descriptor."""

    weight: Parameter  # (n_classes, descriptor_dim)
    bias: Parameter  # (n_classes,)


def head_forward(descriptor: np.ndarray, head: ClassifierHead) -> np.ndarray:
    """Affine logits W @ descriptor + b."""
    return layers.linear_forward(descriptor, head.weight.value, head.bias.value)


@dataclass
class BranchCache:
    fmap: np.ndarray  # trunk output (N,D,H,W)
    vec: np.ndarray  # flattened gram (N,D*D)
    ssq: np.ndarray  # signed sqrt of vec
    desc: np.ndarray  # L2-normalized descriptor


@dataclass
class TrainCache:
    x: np.ndarray
    cnet_cache: list
    fnet_cache: list
    coarse: BranchCache
    fine: BranchCache
    squeezed: bool


@dataclass
class TrainForward:
    z_coarse: np.ndarray
    z_fine: np.ndarray
    cache: TrainCache


class SbpNetwork:
    """Two-branch bilinear classifier: shared coarse trunk, fine trunk on top."""

    def __init__(self, config: TrunkConfig, n_coarse: int, n_fine: int, seed: int = 0):
        rng = make_rng(seed, 0)
        self.config = config
        self.n_coarse = n_coarse
        self.n_fine = n_fine
        self.backbone = Backbone(config, rng)
        dc = config.coarse_shape()[0] ** 2
        df = config.fine_shape()[0] ** 2
        self.head_coarse = ClassifierHead(
            Parameter(uniform_init(rng, (n_coarse, dc), fan_in=dc)),
            Parameter(np.zeros(n_coarse)),
        )
        self.head_fine = ClassifierHead(
            Parameter(uniform_init(rng, (n_fine, df), fan_in=df)),
            Parameter(np.zeros(n_fine)),
        )

    # parameter order is fixed; checkpoints and SGD buffers key off these names
    def named_parameters(self) -> list[tuple[str, Parameter]]:
        params = list(self.backbone.cnet.named_parameters())
        params += list(self.backbone.fnet.named_parameters())
        params += [
            ("head_coarse.weight", self.head_coarse.weight),
            ("head_coarse.bias", self.head_coarse.bias),
            ("head_fine.weight", self.head_fine.weight),
            ("head_fine.bias", self.head_fine.bias),
        ]
        return params

    def head_parameters(self) -> list[tuple[str, Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if n.startswith("head_")]

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    def _descriptor(self, fmap: np.ndarray) -> BranchCache:
        n, d = fmap.shape[0], fmap.shape[1]
        vec = bilinear_pool(fmap).reshape(n, d * d)
        ssq = signed_sqrt(vec)
        desc = l2_normalize(ssq)
        return BranchCache(fmap, vec, ssq, desc)

    def _descriptor_backward(self, br: BranchCache, ddesc: np.ndarray) -> np.ndarray:
        dssq = l2_normalize_backward(br.ssq, ddesc)
        dvec = signed_sqrt_backward(br.vec, dssq)
        n, d = br.fmap.shape[0], br.fmap.shape[1]
        return bilinear_pool_backward(br.fmap, dvec.reshape(n, d, d))

    def forward_train(self, x: np.ndarray) -> TrainForward:
        """Both branches with cached activations for an exact backward pass."""
        self.backbone._check_input(x, self.config.input, "input")
        squeezed = x.ndim == 3
        xb = x[None] if squeezed else x
        f_map, cnet_cache = self.backbone.cnet.forward(xb)
        g_map, fnet_cache = self.backbone.fnet.forward(f_map)
        coarse = self._descriptor(f_map)
        fine = self._descriptor(g_map)
        z_coarse = head_forward(coarse.desc, self.head_coarse)
        z_fine = head_forward(fine.desc, self.head_fine)
        cache = TrainCache(xb, cnet_cache, fnet_cache, coarse, fine, squeezed)
        if squeezed:
            return TrainForward(z_coarse[0], z_fine[0], cache)
        return TrainForward(z_coarse, z_fine, cache)

    def forward_infer(self, x: np.ndarray) -> np.ndarray:
        """Fine logits only; the coarse head is never evaluated."""
        self.backbone._check_input(x, self.config.input, "input")
        squeezed = x.ndim == 3
        xb = x[None] if squeezed else x
        f_map, _ = self.backbone.cnet.forward(xb)
        g_map, _ = self.backbone.fnet.forward(f_map)
        z_fine = head_forward(self._descriptor(g_map).desc, self.head_fine)
        return z_fine[0] if squeezed else z_fine

    def backward(self, cache: TrainCache, dz_coarse, dz_fine) -> None:
        """Accumulate parameter gradients from upstream logit gradients.

        ``dz_coarse=None`` skips the coarse head path entirely, which
        leaves the coarse trunk receiving only the fine branch's
        contribution.
        """
        if cache.squeezed:
            if dz_fine is not None and np.ndim(dz_fine) == 1:
                dz_fine = np.asarray(dz_fine)[None]
            if dz_coarse is not None and np.ndim(dz_coarse) == 1:
                dz_coarse = np.asarray(dz_coarse)[None]
        d_fmap = None
        if dz_coarse is not None:
            ddesc, dw, db = layers.linear_backward(
                cache.coarse.desc, self.head_coarse.weight.value, dz_coarse
            )
            self.head_coarse.weight.accumulate(dw)
            self.head_coarse.bias.accumulate(db)
            d_fmap = self._descriptor_backward(cache.coarse, ddesc)
        if dz_fine is None:
            raise ShapeMismatch("fine upstream gradient is required")
        ddesc, dw, db = layers.linear_backward(
            cache.fine.desc, self.head_fine.weight.value, dz_fine
        )
        self.head_fine.weight.accumulate(dw)
        self.head_fine.bias.accumulate(db)
        dg_map = self._descriptor_backward(cache.fine, ddesc)
        df_from_fine = self.backbone.fnet.backward(cache.fnet_cache, dg_map)
        total = df_from_fine if d_fmap is None else d_fmap + df_from_fine
        self.backbone.cnet.backward(cache.cnet_cache, total)
