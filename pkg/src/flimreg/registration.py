"""Homography estimation by gradient descent on a partial photometric L1 loss.

The optimiser parameterises the pull map G (target frame -> moving frame) in
normalized [-1, 1]^2 coordinates, warps the moving image through G with a
differentiable bilinear sampler, and descends the 8 free entries from an
identity start.  The reported homography is the inverse (moving -> target).

Working in the normalized frame keeps the 8 parameters at comparable scale,
so one learning rate serves all of them; descending on the pull map avoids a
matrix inversion inside the loop.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .datamodel import RgbImage, ScalarPlane
from .errors import (
    DimensionMismatch,
    EmptyOverlap,
    NonFiniteLoss,
    SingularHomography,
)
from .imaging import resize, to_grayscale

DET_TOL = 1e-9
NMI_BINS = 64


def norm_from_pixel_matrix(width: int, height: int) -> np.ndarray:
    """Pixel coords -> normalized [-1, 1] coords (pixel centers at half-steps)."""
    return np.array([
        [2.0 / width, 0.0, 1.0 / width - 1.0],
        [0.0, 2.0 / height, 1.0 / height - 1.0],
        [0.0, 0.0, 1.0],
    ])


def pixel_from_norm_matrix(width: int, height: int) -> np.ndarray:
    """Normalized [-1, 1] coords -> pixel coords."""
    return np.array([
        [width / 2.0, 0.0, (width - 1.0) / 2.0],
        [0.0, height / 2.0, (height - 1.0) / 2.0],
        [0.0, 0.0, 1.0],
    ])


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform in normalized coordinates, h[2][2] = 1."""

    h: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.h, dtype=np.float64)
        if m.shape != (3, 3):
            raise DimensionMismatch("homography must be 3x3")
        if abs(m[2, 2] - 1.0) > 1e-12:
            raise SingularHomography("h[2][2] must be exactly 1")
        if abs(np.linalg.det(m)) <= DET_TOL:
            raise SingularHomography("homography is singular")
        m = m.copy()
        m[2, 2] = 1.0
        m.flags.writeable = False
        object.__setattr__(self, "h", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Homography":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise DimensionMismatch("homography must be 3x3")
        if abs(m[2, 2]) <= DET_TOL:
            raise SingularHomography("cannot normalise: h[2][2] ~ 0")
        return cls(m / m[2, 2])

    def inverse(self) -> "Homography":
        return Homography.from_matrix(np.linalg.inv(self.h))

    def compose(self, other: "Homography") -> "Homography":
        """self applied after other: (self . other)(q) = self(other(q))."""
        return Homography.from_matrix(self.h @ other.h)

    def map_points(self, pts: np.ndarray) -> np.ndarray:
        """Apply to (n, 2) normalized points."""
        pts = np.asarray(pts, dtype=np.float64)
        hom = np.column_stack([pts, np.ones(len(pts))])
        mapped = hom @ self.h.T
        return mapped[:, :2] / mapped[:, 2:3]

    def pixel_frame(self, dim: int) -> np.ndarray:
        """Equivalent pixel-frame matrix for a dim x dim image."""
        m = pixel_from_norm_matrix(dim, dim) @ self.h @ norm_from_pixel_matrix(dim, dim)
        return m / m[2, 2]


@dataclass(frozen=True)
class RegressionParams:
    """Optimiser settings; defaults follow the reference protocol."""

    epochs: int = 200
    lr: float = 0.01
    decay_epoch: int = 100
    decay_factor: float = 0.1
    window: int = 200
    color_mode: str = "gray"
    optimizer: str = "gd"
    regression_dim: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 < self.decay_factor <= 1):
            raise ValueError("decay_factor must be in (0, 1]")
        if not (0 < self.window <= self.regression_dim):
            raise ValueError("window must be in (0, regression_dim]")
        if self.color_mode not in ("gray", "rgb"):
            raise ValueError(f"unknown color_mode {self.color_mode!r}")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_json(self) -> dict:
        return {
            "epochs": self.epochs, "lr": self.lr,
            "decay_epoch": self.decay_epoch,
            "decay_factor": self.decay_factor, "window": self.window,
            "color_mode": self.color_mode, "optimizer": self.optimizer,
            "regression_dim": self.regression_dim, "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RegressionParams":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class RegressionResult:
    """Estimated homography (moving -> target) plus optimisation diagnostics."""

    homography: Homography
    loss_trace: list[float]
    best_epoch: int
    final_loss: float
    metrics: dict
    params: RegressionParams

    def to_json(self) -> dict:
        return {
            "homography": [float(v) for v in self.homography.h.ravel()],
            "pixel_homography": [
                float(v) for v in
                self.homography.pixel_frame(self.params.regression_dim).ravel()],
            "loss_trace": [float(v) for v in self.loss_trace],
            "best_epoch": self.best_epoch,
            "final_loss": self.final_loss,
            "metrics": self.metrics,
            "params": self.params.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "RegressionResult":
        return cls(
            homography=Homography(np.array(d["homography"]).reshape(3, 3)),
            loss_trace=list(d["loss_trace"]),
            best_epoch=int(d["best_epoch"]),
            final_loss=float(d["final_loss"]),
            metrics=dict(d["metrics"]),
            params=RegressionParams.from_json(d["params"]),
        )


def _as_float_stack(img) -> np.ndarray:
    """Image -> float64 (h, w, c) on the [0, 1] scale."""
    if isinstance(img, RgbImage):
        return img.pixels.astype(np.float64) / 255.0
    if isinstance(img, ScalarPlane):
        return img.values.astype(np.float64)[:, :, None]
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def warp(moving, g: Homography, out_dims: tuple[int, int]):
    """Pull-warp: out(q) = bilinear_sample(moving, g . q), zero padding outside.

    out_dims is (width, height); q runs over normalized output coords, so g
    maps output frame -> moving frame.
    """
    out_w, out_h = out_dims
    if isinstance(moving, RgbImage):
        src = moving.pixels.astype(np.float64)
        mat = (pixel_from_norm_matrix(moving.width, moving.height)
               @ g.h @ norm_from_pixel_matrix(out_w, out_h))
        out = kernels.warp_pull(np.ascontiguousarray(src), mat, out_h, out_w)
        return RgbImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))
    if isinstance(moving, ScalarPlane):
        src = moving.values.astype(np.float64)[:, :, None]
        mat = (pixel_from_norm_matrix(moving.width, moving.height)
               @ g.h @ norm_from_pixel_matrix(out_w, out_h))
        out = kernels.warp_pull(np.ascontiguousarray(src), mat, out_h, out_w)
        return ScalarPlane(moving.kind, out[:, :, 0].astype(np.float32),
                           wavelength_nm=moving.wavelength_nm)
    raise TypeError(f"cannot warp {type(moving).__name__}")


def partial_photometric_loss(warped, target, window: int) -> float:
    """Mean |a - b| over the centered window x window square and channels.

    8-bit inputs are scaled to [0, 1].  The excluded border of width
    (n - window) / 2 is the unreliable band the warp cannot fill.
    """
    a = _as_float_stack(warped)
    b = _as_float_stack(target)
    if a.shape != b.shape:
        raise DimensionMismatch("loss inputs must share dims")
    n = a.shape[0]
    if a.shape[1] != n:
        raise DimensionMismatch("loss inputs must be square")
    if not (0 < window <= n):
        raise DimensionMismatch(f"window {window} outside (0, {n}]")
    off = (n - window) // 2
    sl = slice(off, off + window)
    return float(np.mean(np.abs(a[sl, sl] - b[sl, sl])))


def _prep_pair(moving, target, params: RegressionParams
               ) -> tuple[np.ndarray, np.ndarray]:
    """Resize both images to the regression frame and convert per color_mode."""
    dim = params.regression_dim

    def prep(img):
        if isinstance(img, RgbImage):
            img = resize(img, dim, dim)
            if params.color_mode == "gray":
                return to_grayscale(img).values.astype(np.float64)[:, :, None] / 255.0
            return img.pixels.astype(np.float64) / 255.0
        if isinstance(img, ScalarPlane):
            img = resize(img, dim, dim)
            return img.values.astype(np.float64)[:, :, None] / 255.0
        raise TypeError(f"cannot regress on {type(img).__name__}")

    return (np.ascontiguousarray(prep(moving)),
            np.ascontiguousarray(prep(target)))


def loss_gradient(g: Homography, moving, target, window: int) -> np.ndarray:
    """Analytic gradient of the partial photometric loss in the 8 free entries.

    Gradient of |moving(g . q) - target(q)| averaged over the window,
    chain-ruled through the projective division and the bilinear sampler;
    ordered g00, g01, g02, g10, g11, g12, g20, g21.
    """
    mv = np.ascontiguousarray(_as_float_stack(moving))
    tg = np.ascontiguousarray(_as_float_stack(target))
    n = tg.shape[0]
    if tg.shape[1] != n or not (0 < window <= n):
        raise DimensionMismatch("target must be square and window <= dim")
    if abs(np.linalg.det(g.h)) <= DET_TOL:
        raise SingularHomography("homography is singular")
    _, grad = kernels.loss_grad(mv, tg, g.h, window)
    return grad


def regress_homography(moving, target, params: RegressionParams,
                       progress_sink=None) -> RegressionResult:
    """Estimate the homography aligning `moving` onto `target`.

    Plain gradient descent (or adam) from an identity start; the learning
    rate is multiplied by decay_factor at decay_epoch; the best-loss iterate
    wins.  Deterministic for fixed params and seed.
    """
    mv, tg = _prep_pair(moving, target, params)
    g = np.eye(3)
    best_loss = math.inf
    best_g = g.copy()
    best_epoch = 0
    trace: list[float] = []

    m1 = np.zeros(8)
    m2 = np.zeros(8)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8

    lr = params.lr
    for epoch in range(params.epochs):
        if epoch == params.decay_epoch:
            lr *= params.decay_factor
        loss, grad = kernels.loss_grad(mv, tg, g, params.window)
        if not math.isfinite(loss):
            raise NonFiniteLoss(
                f"loss diverged at epoch {epoch}; g = {g.ravel().tolist()}")
        trace.append(float(loss))
        if loss < best_loss:
            best_loss = float(loss)
            best_g = g.copy()
            best_epoch = epoch
        if progress_sink is not None:
            progress_sink(epoch, float(loss), g.copy())
        if params.optimizer == "adam":
            m1 = beta1 * m1 + (1 - beta1) * grad
            m2 = beta2 * m2 + (1 - beta2) * grad * grad
            c1 = m1 / (1 - beta1 ** (epoch + 1))
            c2 = m2 / (1 - beta2 ** (epoch + 1))
            step = lr * c1 / (np.sqrt(c2) + adam_eps)
        else:
            step = lr * grad
        g = g.copy()
        g[0, 0] -= step[0]
        g[0, 1] -= step[1]
        g[0, 2] -= step[2]
        g[1, 0] -= step[3]
        g[1, 1] -= step[4]
        g[1, 2] -= step[5]
        g[2, 0] -= step[6]
        g[2, 1] -= step[7]

    pull = Homography.from_matrix(best_g)
    reported = pull.inverse()

    warped = kernels.warp_pull(
        mv, (pixel_from_norm_matrix(mv.shape[1], mv.shape[0])
             @ pull.h
             @ norm_from_pixel_matrix(params.regression_dim,
                                      params.regression_dim)),
        params.regression_dim, params.regression_dim)
    wgray = warped.mean(axis=2)
    tgray = tg.mean(axis=2)
    try:
        metrics = {
            "mse": mse(wgray, tgray),
            "nmi": nmi(wgray, tgray),
            "ncc": ncc(wgray, tgray),
        }
    except EmptyOverlap:
        metrics = {"mse": None, "nmi": None, "ncc": None}

    return RegressionResult(
        homography=reported,
        loss_trace=trace,
        best_epoch=best_epoch,
        final_loss=best_loss,
        metrics=metrics,
        params=params,
    )


def _metric_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Convert to gray [0, 1]-scale arrays and mask to the mutual foreground."""
    def gray(img):
        if isinstance(img, RgbImage):
            return to_grayscale(img).values.astype(np.float64) / 255.0
        if isinstance(img, ScalarPlane):
            return img.values.astype(np.float64)
        return np.asarray(img, dtype=np.float64)

    ga, gb = gray(a), gray(b)
    if ga.shape != gb.shape:
        raise DimensionMismatch("metric inputs must share dims")
    fg = (ga > 0) & (gb > 0)
    if not fg.any():
        raise EmptyOverlap("no mutual foreground")
    return ga[fg], gb[fg]


def mse(a, b) -> float:
    """Mean squared difference over the mutual foreground, [0, 1] scale."""
    va, vb = _metric_pair(a, b)
    return float(np.mean((va - vb) ** 2))


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def nmi(a, b) -> float:
    """Normalised mutual information (H(a) + H(b)) / H(a, b), 64-bin joint histogram."""
    va, vb = _metric_pair(a, b)
    ia = np.minimum((np.clip(va, 0, 1) * NMI_BINS).astype(np.int64), NMI_BINS - 1)
    ib = np.minimum((np.clip(vb, 0, 1) * NMI_BINS).astype(np.int64), NMI_BINS - 1)
    joint = np.bincount(ia * NMI_BINS + ib, minlength=NMI_BINS * NMI_BINS)
    joint = joint.reshape(NMI_BINS, NMI_BINS).astype(np.float64) / len(va)
    h_a = _entropy(joint.sum(axis=1))
    h_b = _entropy(joint.sum(axis=0))
    h_ab = _entropy(joint.ravel())
    if h_ab == 0.0:
        return 2.0  # both marginals degenerate: identical information
    return float((h_a + h_b) / h_ab)


def ncc(a, b) -> float:
    """Zero-mean normalised cross-correlation in [-1, 1]."""
    va, vb = _metric_pair(a, b)
    da = va - va.mean()
    db = vb - vb.mean()
    denom = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
    if denom == 0.0:
        return 0.0
    return float(np.sum(da * db) / denom)
