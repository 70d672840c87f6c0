"""Hyperbolic layers: feed-forward, gated recurrent cell and multinomial
logistic regression on the Poincaré ball."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .autodiff import Parameter

ACTIVATIONS: dict[str, Callable] = {
    "identity": lambda v: v,
    "relu": ad.relu,
    "tanh": ad.tanh,
}


def hyper_nonlinearity(x, f: Callable | str, cfg: geo.GeometryConfig = geo.DEFAULT):
    """Möbius version of a pointwise map: exp_0(f(log_0(x)))."""
    if isinstance(f, str):
        if f == "identity":
            return x
        f = ACTIVATIONS[f]
    return geo.exp_map0(f(geo.log_map0(x, cfg)), cfg)


def uniform_matrix(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, size=(n_out, n_in))


class Module:
    """Minimal parameter container; subclasses register Parameters as attributes."""

    def parameters(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for name, val in vars(self).items():
            if isinstance(val, Parameter):
                out[name] = val
            elif isinstance(val, Module):
                for sub, p in val.parameters().items():
                    out[f"{name}.{sub}"] = p
        return out

    def num_parameters(self) -> int:
        return int(sum(p.value.size for p in self.parameters().values()))


class HFFL(Module):
    """phi((W (x) x) (+) b)."""

    def __init__(self, n_in: int, n_out: int, activation: str = "identity",
                 rng: np.random.Generator | None = None,
                 cfg: geo.GeometryConfig = geo.DEFAULT):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.W = Parameter(uniform_matrix(rng, n_out, n_in), name="W")
        self.b = Parameter(np.zeros(n_out), space=Parameter.HYPERBOLIC, name="b")
        self.activation = activation
        self.cfg = cfg

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def __call__(self, x):
        if ad.value(x).shape[-1] != self.n_in:
            raise ValueError(f"HFFL expects dim {self.n_in}, got {ad.value(x).shape[-1]}")
        h = geo.mobius_add(geo.mobius_matvec(self.W, x, self.cfg), self.b, self.cfg)
        return hyper_nonlinearity(h, self.activation, self.cfg)


def hffl_forward(x, W, b, activation: str = "identity", cfg: geo.GeometryConfig = geo.DEFAULT):
    h = geo.mobius_add(geo.mobius_matvec(W, x, cfg), b, cfg)
    return hyper_nonlinearity(h, activation, cfg)


def hgru_update(h_prev, h_tilde, z, cfg: geo.GeometryConfig = geo.DEFAULT):
    """h_prev (+) (diag(z) (x) ((-h_prev) (+) h_tilde))."""
    return geo.mobius_add(h_prev, geo.mobius_diag(z, geo.mobius_add(-h_prev, h_tilde, cfg), cfg), cfg)


class HGRU(Module):
    """Unidirectional hyperbolic GRU cell."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator | None = None,
                 cfg: geo.GeometryConfig = geo.DEFAULT, candidate_activation: str = "tanh"):
        rng = rng or np.random.default_rng(0)
        for gate in ("z", "r", "h"):
            setattr(self, f"W_{gate}", Parameter(uniform_matrix(rng, n_hidden, n_hidden), name=f"W_{gate}"))
            setattr(self, f"U_{gate}", Parameter(uniform_matrix(rng, n_hidden, n_in), name=f"U_{gate}"))
            setattr(self, f"b_{gate}", Parameter(np.zeros(n_hidden), space=Parameter.HYPERBOLIC,
                                                 name=f"b_{gate}"))
        self.cfg = cfg
        self.candidate_activation = candidate_activation

    @property
    def n_hidden(self) -> int:
        return self.W_z.shape[0]

    @property
    def n_in(self) -> int:
        return self.U_z.shape[1]

    def _pre(self, W, U, b, h, x):
        cfg = self.cfg
        return geo.mobius_add(geo.mobius_add(geo.mobius_matvec(W, h, cfg),
                                             geo.mobius_matvec(U, x, cfg), cfg), b, cfg)

    def gates(self, h_prev, x_t):
        z = ad.sigmoid(geo.log_map0(self._pre(self.W_z, self.U_z, self.b_z, h_prev, x_t), self.cfg))
        r = ad.sigmoid(geo.log_map0(self._pre(self.W_r, self.U_r, self.b_r, h_prev, x_t), self.cfg))
        return z, r

    def step(self, h_prev, x_t):
        cfg = self.cfg
        if ad.value(h_prev).shape[-1] != self.n_hidden or ad.value(x_t).shape[-1] != self.n_in:
            raise ValueError("HGRU step dimension mismatch")
        z, r = self.gates(h_prev, x_t)
        # [W_h diag(r)] (x) h keeps |h| as the input norm
        wh = geo._matvec_from_product(ad.matmul(r * h_prev, ad.transpose(self.W_h)), h_prev, cfg)
        pre = geo.mobius_add(geo.mobius_add(wh, geo.mobius_matvec(self.U_h, x_t, cfg), cfg),
                             self.b_h, cfg)
        h_tilde = hyper_nonlinearity(pre, self.candidate_activation, cfg)
        return hgru_update(h_prev, h_tilde, z, cfg)

    def sequence(self, inputs, h0=None, length: int | None = None) -> list:
        """Run over axis -2 of ``inputs`` (..., L, n_in); returns one state per step."""
        L = ad.value(inputs).shape[-2]
        if L == 0:
            raise ValueError("HGRU needs a nonempty sequence")
        steps = L if length is None else min(length, L)
        batch_shape = ad.value(inputs).shape[:-2]
        h = np.zeros(batch_shape + (self.n_hidden,)) if h0 is None else h0
        out = []
        for t in range(steps):
            h = self.step(h, inputs[..., t, :])
            out.append(h)
        return out


def hgru_sequence(inputs, cell: HGRU, h0=None) -> list:
    if len(inputs) == 0:
        raise ValueError("HGRU needs a nonempty sequence")
    return cell.sequence(ad.stack(list(inputs), axis=-2) if isinstance(inputs, (list, tuple)) else inputs, h0)


class HMLR(Module):
    """Hyperbolic multinomial logistic regression head.

    Class score: lambda_{p_k} |a_k| arcsinh(2 <w, a_k> / ((1 - |w|^2) |a_k|))
    with w = (-p_k) (+) x.  arcsinh is odd, so this equals the signed
    distance-to-hyperplane form.
    """

    def __init__(self, n_in: int, n_classes: int, rng: np.random.Generator | None = None,
                 cfg: geo.GeometryConfig = geo.DEFAULT):
        if n_classes < 2:
            raise ValueError("HMLR needs at least two classes")
        rng = rng or np.random.default_rng(0)
        self.p = Parameter(np.zeros((n_classes, n_in)), space=Parameter.HYPERBOLIC, name="p")
        self.a = Parameter(rng.uniform(-0.05, 0.05, size=(n_classes, n_in)), name="a")
        self.cfg = cfg

    def __call__(self, x):
        return hmlr_logits(x, self.p, self.a, self.cfg)


def hmlr_logits(x, p, a, cfg: geo.GeometryConfig = geo.DEFAULT):
    """Unnormalized class scores, shape (..., K) for ``x`` of shape (..., n)."""
    a_norm_v = np.sqrt(np.sum(ad.value(a) ** 2, axis=-1))
    if np.any(a_norm_v < cfg.min_norm_eps):
        raise ValueError("degenerate class normal")
    xe = ad.reshape(x, ad.value(x).shape[:-1] + (1, ad.value(x).shape[-1]))
    w = geo.mobius_add(-p, xe, cfg)                       # (..., K, n)
    a_norm = ad.sqrt(geo.sq_norm(a))                      # (K, 1)
    inner = ad.sum(w * a, axis=-1, keepdims=True)
    arg = 2.0 * inner / ((1.0 - geo.sq_norm(w)) * a_norm)
    scores = geo.conformal_factor(p) * a_norm * ad.arcsinh(arg)
    return ad.reshape(scores, ad.value(scores).shape[:-1])


def log_softmax(logits):
    return logits - ad.logsumexp(logits, axis=-1, keepdims=True)


def softmax(logits) -> np.ndarray:
    z = np.asarray(ad.value(logits))
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels: np.ndarray):
    """Mean negative log-likelihood of integer ``labels``."""
    lp = log_softmax(logits)
    n = len(labels)
    return -ad.sum(lp[np.arange(n), labels]) / n
