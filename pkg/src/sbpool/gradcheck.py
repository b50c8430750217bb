"""Finite-difference gradient checking for every differentiable piece.

:func:`grad_check` compares an analytic gradient against central
differences with step 1e-5 and reports the max relative error
``|a - n| / max(|a|, |n|, 1e-8)``.  The checked map must be smooth at the
sample point; the named suite below builds sample points with a safety
margin around every ReLU / maxpool / signed-sqrt kink and around argmax
switching surfaces, because central differences lose far more than the
1e-4 tolerance near them (the signed-sqrt third derivative blows up as
|x|^(-5/2)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers, losses, network
from .backbone import TrunkConfig
from .errors import NonFiniteValue
from .labels import build_label_tree
from .network import SbpNetwork
from .tensor import make_rng

STEP = 1e-5
RELU_MARGIN = 0.05  # min |preactivation| / |window gap| / |gram entry| at sample points
GAP_MARGIN = 1e-2  # min top-2 logit gap for argmax-dependent losses


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tolerance: float
    n_checked: int
    n_skipped: int
    worst_index: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: max_rel_error={self.max_rel_error:.3e} "
            f"(tol={self.tolerance:.1e}, checked={self.n_checked}, skipped={self.n_skipped})"
        )


def grad_check(
    fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    tolerance: float = 1e-4,
    step: float = STEP,
    skip: np.ndarray | None = None,
    name: str = "op",
) -> GradCheckReport:
    """Check the analytic gradient of a scalar map against central differences.

    ``fn(x)`` must return ``(value, grad)`` with ``grad`` shaped like
    ``x``.  ``skip`` optionally masks coordinates (e.g. kink-adjacent
    ones) out of the comparison.
    """
    x = np.asarray(x, dtype=np.float64)
    value, analytic = fn(x)
    if not np.isfinite(value) or not np.all(np.isfinite(analytic)):
        raise NonFiniteValue(f"{name}: non-finite value or gradient at the sample point")
    flat = x.reshape(-1)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    skip_flat = (
        np.zeros(flat.shape, dtype=bool) if skip is None else np.asarray(skip, bool).reshape(-1)
    )
    max_rel = 0.0
    worst = -1
    checked = 0
    for i in range(flat.size):
        if skip_flat[i]:
            continue
        orig = flat[i]
        flat[i] = orig + step
        f_plus, _ = fn(x)
        flat[i] = orig - step
        f_minus, _ = fn(x)
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        if not np.isfinite(numeric):
            raise NonFiniteValue(f"{name}: non-finite finite-difference value at index {i}")
        rel = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-8)
        checked += 1
        if rel > max_rel:
            max_rel, worst = rel, i
    return GradCheckReport(
        name=name,
        max_rel_error=max_rel,
        tolerance=tolerance,
        n_checked=checked,
        n_skipped=int(skip_flat.sum()),
        worst_index=worst,
    )


def _away_from_zero(rng, shape, margin=RELU_MARGIN):
    """Uniform values with |x| in [margin, 1] and random sign."""
    mag = rng.uniform(margin, 1.0, size=shape)
    sign = np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _projection(rng, shape):
    return rng.standard_normal(shape)


def _projected(forward, vjp, proj):
    """Scalarize a tensor-valued map with a fixed projection."""

    def fn(x):
        y = forward(x)
        return float((proj * y).sum()), vjp(x, proj)

    return fn


# --- named checks -------------------------------------------------------

def _check_conv2d(seed, tolerance):
    rng = make_rng(seed, 11)
    x = rng.uniform(-1, 1, size=(2, 4, 4))
    w = rng.uniform(-1, 1, size=(3, 2, 3, 3))
    b = rng.uniform(-1, 1, size=3)
    proj = _projection(rng, (3, 4, 4))
    sizes = [x.size, w.size, b.size]

    def fn(theta):
        xi = theta[: sizes[0]].reshape(x.shape)
        wi = theta[sizes[0] : sizes[0] + sizes[1]].reshape(w.shape)
        bi = theta[sizes[0] + sizes[1] :]
        y = layers.conv2d_forward(xi, wi, bi)
        dx, dw, db = layers.conv2d_backward(xi, wi, proj)
        return float((proj * y).sum()), np.concatenate([dx.ravel(), dw.ravel(), db.ravel()])

    theta = np.concatenate([x.ravel(), w.ravel(), b.ravel()])
    return grad_check(fn, theta, tolerance, name="conv2d")


def _check_relu(seed, tolerance):
    rng = make_rng(seed, 12)
    x = _away_from_zero(rng, (3, 4, 4))
    proj = _projection(rng, x.shape)
    fn = _projected(layers.relu_forward, layers.relu_backward, proj)
    return grad_check(fn, x, tolerance, name="relu")


def _maxpool_safe_input(rng, shape):
    # resample until every 2x2 window has a clear winner
    for _ in range(200):
        x = rng.uniform(-1, 1, size=shape)
        windows = layers._pool_windows(x[None])[0]
        sorted_w = np.sort(windows, axis=-1)
        if (sorted_w[..., -1] - sorted_w[..., -2]).min() > RELU_MARGIN / 5:
            return x
    raise RuntimeError("could not build a tie-free maxpool input")


def _check_maxpool(seed, tolerance):
    rng = make_rng(seed, 13)
    x = _maxpool_safe_input(rng, (2, 4, 4))
    proj = _projection(rng, (2, 2, 2))
    fn = _projected(layers.maxpool2x2_forward, layers.maxpool2x2_backward, proj)
    return grad_check(fn, x, tolerance, name="maxpool2x2")


def _check_linear(seed, tolerance):
    rng = make_rng(seed, 14)
    x = rng.uniform(-1, 1, size=6)
    w = rng.uniform(-1, 1, size=(4, 6))
    b = rng.uniform(-1, 1, size=4)
    proj = _projection(rng, (4,))
    sizes = [x.size, w.size]

    def fn(theta):
        xi = theta[: sizes[0]]
        wi = theta[sizes[0] : sizes[0] + sizes[1]].reshape(w.shape)
        bi = theta[sizes[0] + sizes[1] :]
        y = layers.linear_forward(xi, wi, bi)
        dx, dw, db = layers.linear_backward(xi, wi, proj)
        return float((proj * y).sum()), np.concatenate([dx.ravel(), dw.ravel(), db.ravel()])

    theta = np.concatenate([x.ravel(), w.ravel(), b.ravel()])
    return grad_check(fn, theta, tolerance, name="linear")


def _check_bilinear_pool(seed, tolerance):
    rng = make_rng(seed, 15)
    x = rng.uniform(-1, 1, size=(3, 4, 4))
    proj = _projection(rng, (3, 3))
    fn = _projected(network.bilinear_pool, network.bilinear_pool_backward, proj)
    return grad_check(fn, x, tolerance, name="bilinear_pool")


def _check_signed_sqrt(seed, tolerance):
    rng = make_rng(seed, 16)
    x = _away_from_zero(rng, (12,))
    proj = _projection(rng, x.shape)
    fn = _projected(network.signed_sqrt, network.signed_sqrt_backward, proj)
    return grad_check(fn, x, tolerance, name="signed_sqrt")


def _check_l2_normalize(seed, tolerance):
    rng = make_rng(seed, 17)
    x = _away_from_zero(rng, (12,), margin=0.2)
    proj = _projection(rng, x.shape)
    fn = _projected(network.l2_normalize, network.l2_normalize_backward, proj)
    return grad_check(fn, x, tolerance, name="l2_normalize")


def _check_head(seed, tolerance):
    rng = make_rng(seed, 18)
    desc = rng.uniform(-1, 1, size=9)
    w = rng.uniform(-1, 1, size=(3, 9))
    b = rng.uniform(-1, 1, size=3)
    proj = _projection(rng, (3,))
    sizes = [desc.size, w.size]

    def fn(theta):
        di = theta[: sizes[0]]
        wi = theta[sizes[0] : sizes[0] + sizes[1]].reshape(w.shape)
        bi = theta[sizes[0] + sizes[1] :]
        y = layers.linear_forward(di, wi, bi)
        dd, dw, db = layers.linear_backward(di, wi, proj)
        return float((proj * y).sum()), np.concatenate([dd.ravel(), dw.ravel(), db.ravel()])

    theta = np.concatenate([desc.ravel(), w.ravel(), b.ravel()])
    return grad_check(fn, theta, tolerance, name="head")


def _gap_boosted_logits(rng, shape):
    z = rng.uniform(-1, 1, size=shape)
    top2 = np.sort(z, axis=-1)[..., -2:]
    need = top2[..., 1] - top2[..., 0] < GAP_MARGIN
    idx = z.argmax(axis=-1)
    z[np.nonzero(need)[0], idx[need]] += GAP_MARGIN
    return z


def _check_gce_loss(seed, tolerance):
    rng = make_rng(seed, 19)
    tree = build_label_tree(
        [("A", "a1"), ("A", "a2"), ("B", "b1"), ("B", "b2")]
    )
    fine = np.array([0, 1, 2, 3, 0])
    coarse = np.asarray(tree.parent)[fine]
    labels = losses.BatchLabels(coarse, fine, tree)
    z = _gap_boosted_logits(rng, (labels.n, tree.n_fine))

    def fn(zz):
        loss, dz = losses.generalized_cross_entropy(
            zz.reshape(z.shape), labels, tree, b=2.0, reduction="mean"
        )
        return loss, dz.ravel()

    return grad_check(fn, z.ravel(), tolerance, name="gce_loss")


PIPELINE_TREE_PAIRS = [("A", "a1"), ("A", "a2"), ("B", "b1"), ("B", "b2")]


def _pipeline_setup(seed):
    """A tiny two-branch net plus a batch, kink-clear by construction.

    Seeds that land any preactivation, pool gap, gram entry, or top-2
    logit gap inside the safety margins are deterministically reseeded.
    """
    config = TrunkConfig(input=(1, 8, 8), cnet_blocks=(2,), fnet_blocks=(3,))
    tree = build_label_tree(PIPELINE_TREE_PAIRS)
    fine = np.array([0, 3])
    coarse = np.asarray(tree.parent)[fine]
    labels = losses.BatchLabels(coarse, fine, tree)
    for attempt in range(500):
        sub = seed * 1009 + attempt
        rng = make_rng(sub, 20)
        net = SbpNetwork(config, tree.n_coarse, tree.n_fine, seed=sub)
        # push weights and biases off their init scale so activations
        # clear the kink margins more often
        for name, p in net.named_parameters():
            p.value[...] = _away_from_zero(rng, p.shape, margin=0.15) * 0.8
        x = _away_from_zero(rng, (2, 1, 8, 8), margin=0.1)
        if _pipeline_clearance(net, x, labels):
            return net, x, labels, tree
    raise RuntimeError("no kink-clear pipeline sample point found")


def _pipeline_clearance(net, x, labels) -> bool:
    """Reject sample points within the safety margins of any kink.

    Exactly-zero gram entries and all-zero pool windows come from dead
    ReLU channels; they stay pinned at zero under small perturbations
    (the preactivation margin guarantees it), so they are smooth points.
    The dangerous neighborhoods are near-zero-but-nonzero gram entries
    (signed-sqrt curvature), near-ties between positive pool cells, and
    near-ties between the top two fine logits (penalty switching).
    """
    fw = net.forward_train(x)
    cache = fw.cache
    for trunk_cache in (cache.cnet_cache, cache.fnet_cache):
        for _, z, a in trunk_cache:
            if np.abs(z).min() < 1e-3:
                return False
            sorted_w = np.sort(layers._pool_windows(a), axis=-1)
            gap = sorted_w[..., -1] - sorted_w[..., -2]
            live = sorted_w[..., -1] > 0.0
            if np.any(live & (gap < 1e-3)):
                return False
    for br in (cache.coarse, cache.fine):
        vec = br.vec
        if np.any((vec != 0.0) & (np.abs(vec) < 5e-3)):
            return False
        if np.sqrt((br.ssq**2).sum(axis=-1)).min() < 0.1:
            return False
    top2 = np.sort(fw.z_fine, axis=-1)[:, -2:]
    if (top2[:, 1] - top2[:, 0]).min() < 1e-3:
        return False
    return True


def _check_pipeline(seed, tolerance):
    net, x, labels, tree = _pipeline_setup(seed)
    params = net.named_parameters()
    shapes = [p.value.shape for _, p in params]
    sizes = [p.value.size for _, p in params]
    penalty = losses.PenaltyConfig(b=2.0, r=(7.0, 3.0))
    w_coarse, w_fine = losses.loss_weights(penalty.r)

    def fn(theta):
        offset = 0
        for (name, p), shape, size in zip(params, shapes, sizes):
            p.value[...] = theta[offset : offset + size].reshape(shape)
            offset += size
        net.zero_grad()
        fw = net.forward_train(x)
        loss_c, dz_c = losses.cross_entropy_batch(fw.z_coarse, labels.coarse, "mean")
        loss_f, dz_f = losses.generalized_cross_entropy(
            fw.z_fine, labels, tree, b=penalty.b, reduction="mean"
        )
        total = losses.combined_loss(loss_c, loss_f, penalty.r)
        net.backward(fw.cache, w_coarse * dz_c, w_fine * dz_f)
        grad = np.concatenate([p.grad.ravel() for _, p in params])
        return total, grad

    theta = np.concatenate([p.value.ravel() for _, p in params])
    return grad_check(fn, theta, tolerance, name="pipeline")


SUITE = [
    ("conv2d", _check_conv2d),
    ("relu", _check_relu),
    ("maxpool2x2", _check_maxpool),
    ("linear", _check_linear),
    ("bilinear_pool", _check_bilinear_pool),
    ("signed_sqrt", _check_signed_sqrt),
    ("l2_normalize", _check_l2_normalize),
    ("head", _check_head),
    ("gce_loss", _check_gce_loss),
    ("pipeline", _check_pipeline),
]


def run_suite(tolerance: float = 1e-4, seeds: int = 20, corrupt: bool = False):
    """Run every named check over ``seeds`` seeds; returns worst-case reports.

    ``corrupt=True`` scales each analytic gradient by 1.01, a self-test
    that must make every check fail.
    """
    reports = []
    for name, check in SUITE:
        worst = None
        for seed in range(seeds):
            if corrupt:
                report = _run_corrupted(check, seed, tolerance)
            else:
                report = check(seed, tolerance)
            if worst is None or report.max_rel_error > worst.max_rel_error:
                worst = report
        reports.append(worst)
    return reports


def _run_corrupted(check, seed, tolerance):
    original = grad_check

    def corrupted_grad_check(fn, x, tol=1e-4, step=STEP, skip=None, name="op"):
        def bad_fn(xx):
            value, grad = fn(xx)
            return value, grad * 1.01

        return original(bad_fn, x, tol, step, skip, name)

    globals()["grad_check"] = corrupted_grad_check
    try:
        return check(seed, tolerance)
    finally:
        globals()["grad_check"] = original
