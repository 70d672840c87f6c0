"""Poincaré-ball primitives (curvature -1).

Points and tangent vectors are float64 arrays whose last axis is the vector
dimension; any leading axes are batch axes.  All functions accept numpy arrays
or :class:`~hypertemp.autodiff.Var` and differentiate through the latter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

__all__ = [
    "GeometryConfig", "DEFAULT", "sq_norm", "norm", "conformal_factor",
    "distance", "ball_norm", "exp_map", "exp_map0", "log_map0", "angle_at",
    "mobius_add", "mobius_scalar", "mobius_matvec", "mobius_diag",
    "project_to_ball", "riemannian_scale",
]

ARTANH_LIMIT = 1.0 - 1e-15
# sech(50) ~ 4e-22: negligible next to the other denominator terms (>= 1)
_SECH_CUTOFF = 50.0


@dataclass(frozen=True)
class GeometryConfig:
    ball_eps: float = 1e-5
    min_norm_eps: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.min_norm_eps < self.ball_eps < 1.0:
            raise ValueError("need 0 < min_norm_eps < ball_eps < 1")

    @property
    def max_norm(self) -> float:
        return 1.0 - self.ball_eps


DEFAULT = GeometryConfig()


def sq_norm(x):
    return ad.sum(x * x, axis=-1, keepdims=True)


def norm(x, cfg: GeometryConfig = DEFAULT):
    """Euclidean norm floored at ``min_norm_eps`` (zero gradient below)."""
    return ad.sqrt(ad.clamp(sq_norm(x), lo=cfg.min_norm_eps ** 2))


def _artanh(x):
    return ad.artanh(ad.clamp(x, -ARTANH_LIMIT, ARTANH_LIMIT))


def conformal_factor(x):
    """lambda_x = 2 / (1 - |x|^2), shape ``(..., 1)``."""
    return 2.0 / (1.0 - sq_norm(x))


def distance(x, y, cfg: GeometryConfig = DEFAULT):
    """Geodesic distance, shape ``(..., 1)``.

    arcosh(1 + u) is evaluated as log1p(u + sqrt(u (u + 2))), which keeps full
    relative precision when the points nearly coincide.
    """
    diff = x - y
    u = 2.0 * sq_norm(diff) / ((1.0 - sq_norm(x)) * (1.0 - sq_norm(y)))
    u = ad.clamp(u, lo=1e-300)
    out = ad.log1p(u + ad.sqrt(u * (u + 2.0)))
    same = np.all(ad.value(x) == ad.value(y), axis=-1, keepdims=True)
    if np.any(same):
        out = ad.where(same, 0.0, out)
    return out


def ball_norm(x, cfg: GeometryConfig = DEFAULT):
    """Distance from the origin: 2 artanh |x|."""
    out = 2.0 * _artanh(norm(x, cfg))
    at_origin = np.sum(ad.value(x) ** 2, axis=-1, keepdims=True) < cfg.min_norm_eps ** 2
    if np.any(at_origin):
        out = ad.where(at_origin, 0.0, out)
    return out


def project_to_ball(v, cfg: GeometryConfig = DEFAULT):
    vv = ad.value(v)
    if not np.all(np.isfinite(vv)):
        raise FloatingPointError("non-finite coordinates cannot be projected into the ball")
    n = np.sqrt(np.sum(vv * vv, axis=-1, keepdims=True))
    outside = n > cfg.max_norm
    if not np.any(outside):
        return v
    return ad.where(outside, v / norm(v, cfg) * cfg.max_norm, v)


def exp_map0(z, cfg: GeometryConfig = DEFAULT):
    """exp_0(z) = tanh(|z|) z / |z|."""
    zn = norm(z, cfg)
    return project_to_ball(ad.tanh(zn) * z / zn, cfg)


def log_map0(y, cfg: GeometryConfig = DEFAULT):
    """log_0(y) = artanh(|y|) y / |y|."""
    yn = norm(y, cfg)
    return _artanh(yn) * y / yn


def exp_map(x, z, cfg: GeometryConfig = DEFAULT):
    """Exponential map at an arbitrary base point.

    The closed form with cosh/sinh of lambda_x |z| is divided through by
    cosh(lambda_x |z|) so that large arguments cannot overflow; the two forms
    are algebraically identical.  Tangent vectors shorter than
    ``min_norm_eps`` leave the base point unchanged.
    """
    lam = conformal_factor(x)
    zn = norm(z, cfg)
    unit = z / zn
    a = lam * zn
    th = ad.tanh(a)
    sech = 1.0 / ad.cosh(ad.clamp(a, hi=_SECH_CUTOFF))
    xu = ad.sum(x * unit, axis=-1, keepdims=True)
    den = sech + (lam - 1.0) + lam * xu * th
    out = (th / zn) / den * z + lam * (1.0 + xu * th) / den * x
    tiny = np.sqrt(np.sum(ad.value(z) ** 2, axis=-1, keepdims=True)) < cfg.min_norm_eps
    if np.any(tiny):
        out = ad.where(np.broadcast_to(tiny, np.broadcast_shapes(tiny.shape, ad.value(out).shape)),
                       x + 0.0 * z, out)
    return project_to_ball(out, cfg)


def angle_at(x, z1, z2):
    """Angle between two tangent vectors at ``x``.

    The metric is conformal, so this is the Euclidean angle whatever ``x`` is.
    """
    z1v, z2v = np.asarray(ad.value(z1)), np.asarray(ad.value(z2))
    if np.any(np.sum(z1v * z1v, axis=-1) == 0) or np.any(np.sum(z2v * z2v, axis=-1) == 0):
        raise ValueError("degenerate angle: zero tangent vector")
    c = ad.sum(z1 * z2, axis=-1, keepdims=True) / (
        ad.sqrt(sq_norm(z1)) * ad.sqrt(sq_norm(z2)))
    return ad.arccos(ad.clamp(c, -1.0, 1.0))


def mobius_add(x, y, cfg: GeometryConfig = DEFAULT):
    xy = ad.sum(x * y, axis=-1, keepdims=True)
    x2 = sq_norm(x)
    y2 = sq_norm(y)
    num = (1.0 + 2.0 * xy + y2) * x + (1.0 - x2) * y
    den = ad.clamp(1.0 + 2.0 * xy + x2 * y2, lo=1e-15)
    return project_to_ball(num / den, cfg)


def mobius_scalar(r, x, cfg: GeometryConfig = DEFAULT):
    """r (x) x = tanh(r artanh|x|) x / |x|; the origin maps to itself."""
    xn = norm(x, cfg)
    return project_to_ball(ad.tanh(r * _artanh(xn)) * x / xn, cfg)


def _matvec_from_product(mx, x, cfg: GeometryConfig):
    xn = norm(x, cfg)
    mxn = norm(mx, cfg)
    return project_to_ball(ad.tanh(mxn / xn * _artanh(xn)) * mx / mxn, cfg)


def mobius_matvec(m, x, cfg: GeometryConfig = DEFAULT):
    """M (x) x for ``m`` of shape (out, in) and ``x`` of shape (..., in)."""
    if ad.value(m).shape[-1] != ad.value(x).shape[-1]:
        raise ValueError(f"matrix with {ad.value(m).shape[-1]} columns applied to "
                         f"{ad.value(x).shape[-1]}-dim point")
    return _matvec_from_product(ad.matmul(x, ad.transpose(m)), x, cfg)


def mobius_diag(d, x, cfg: GeometryConfig = DEFAULT):
    """diag(d) (x) x, with ``d`` broadcast against ``x``."""
    return _matvec_from_product(d * x, x, cfg)


def riemannian_scale(x) -> np.ndarray:
    """Inverse metric factor 1 / lambda_x^2 = (1 - |x|^2)^2 / 4 (numpy only)."""
    x = np.asarray(x, dtype=np.float64)
    return (1.0 - np.sum(x * x, axis=-1, keepdims=True)) ** 2 / 4.0
