"""Poincaré event embeddings with a distance loss, an angular loss and a
score-threshold rule classifier."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .autodiff import Parameter
from .data import (EventPairExample, TempRelLabel, TemporalGraph, event_vectors,
                   negative_sets)
from .layers import HFFL, hffl_forward
from .metrics import ConfusionMatrix, compute_metrics
from .optim import Optimizer

log = logging.getLogger(__name__)

_MASKED = -1e30


@dataclass(frozen=True)
class RuleConfig:
    epsilon: float = 0.05
    threshold_t: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.epsilon < self.threshold_t < 1.0:
            raise ValueError("need 0 < epsilon < threshold_t < 1")


@dataclass
class EmbedTrainConfig:
    alpha: float = 0.5
    negatives_per_positive: int = 1
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 250
    seed: int = 0
    dim_out: int = 2
    activation: str = "identity"
    l1_denominator: str = "with_positive"
    epsilon: float = 0.05
    weight_decay: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be positive")
        if self.l1_denominator not in ("with_positive", "negatives_only"):
            raise ValueError(f"unknown l1_denominator {self.l1_denominator!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs nonnegative")


class EmbedModel:
    def __init__(self, dim_in: int, dim_out: int = 2, activation: str = "identity",
                 rng: np.random.Generator | None = None, cfg: geo.GeometryConfig = geo.DEFAULT,
                 rules: RuleConfig | None = None):
        self.projection = HFFL(dim_in, dim_out, activation, rng=rng, cfg=cfg)
        self.cfg = cfg
        self.rules = rules or RuleConfig()

    @property
    def dim_in(self) -> int:
        return self.projection.n_in

    @property
    def dim_out(self) -> int:
        return self.projection.n_out

    def parameters(self) -> dict[str, Parameter]:
        return self.projection.parameters()

    def project(self, e):
        """HFFL(exp_0(e)) for Euclidean trigger embeddings ``e`` (..., d)."""
        if ad.value(e).shape[-1] != self.dim_in:
            raise ValueError(f"model expects {self.dim_in}-dim embeddings, got {ad.value(e).shape[-1]}")
        return self.projection(geo.exp_map0(e, self.cfg))

    def embed(self, e) -> np.ndarray:
        """Ball coordinates as plain arrays (no recording)."""
        pr = self.projection
        x = geo.exp_map0(np.asarray(e, dtype=np.float64), self.cfg)
        return hffl_forward(x, pr.W.value, pr.b.value, pr.activation, self.cfg)

    def scores(self, pairs: Sequence[EventPairExample]) -> np.ndarray:
        eu = np.stack([p.event_u_vec for p in pairs])
        ev = np.stack([p.event_v_vec for p in pairs])
        return score(self.embed(eu), self.embed(ev), self.rules, self.cfg)[..., 0]

    def predict(self, pairs: Sequence[EventPairExample]) -> list[TempRelLabel]:
        return [TempRelLabel.from_index(i) for i in classify_scores(self.scores(pairs), self.rules)]

    def to_checkpoint(self, alpha: float, seed: int) -> dict:
        return {
            "format_version": 1, "kind": "embed",
            "dim_in": self.dim_in, "dim_out": self.dim_out,
            "W": self.projection.W.value.tolist(), "b": self.projection.b.value.tolist(),
            "activation": self.projection.activation,
            "epsilon": self.rules.epsilon, "threshold_t": self.rules.threshold_t,
            "alpha": alpha, "seed": seed,
            "ball_eps": self.cfg.ball_eps, "min_norm_eps": self.cfg.min_norm_eps,
        }

    @classmethod
    def from_checkpoint(cls, ck: dict) -> EmbedModel:
        if ck.get("kind") != "embed" or ck.get("format_version") != 1:
            raise ValueError("not an embed checkpoint (format_version 1)")
        cfg = geo.GeometryConfig(ck.get("ball_eps", 1e-5), ck.get("min_norm_eps", 1e-12))
        m = cls(ck["dim_in"], ck["dim_out"], ck.get("activation", "identity"), cfg=cfg,
                rules=RuleConfig(ck["epsilon"], ck["threshold_t"]))
        m.projection.W.value = np.array(ck["W"], dtype=np.float64).reshape(ck["dim_out"], ck["dim_in"])
        m.projection.b.value = np.array(ck["b"], dtype=np.float64)
        return m


def project_events(ex: EventPairExample, m: EmbedModel) -> tuple[np.ndarray, np.ndarray]:
    return m.embed(ex.event_u_vec), m.embed(ex.event_v_vec)


def normalize_pair(ex: EventPairExample) -> tuple[str, str, np.ndarray, np.ndarray, TempRelLabel]:
    """Return (u, v, e_u, e_v, label) with After pairs flipped to Before."""
    u, v = ex.event_ids
    if ex.label is TempRelLabel.VAGUE:
        raise ValueError("not a positive pair")
    if ex.label is TempRelLabel.AFTER:
        return v, u, ex.event_v_vec, ex.event_u_vec, TempRelLabel.BEFORE
    return u, v, ex.event_u_vec, ex.event_v_vec, ex.label


# --- losses -------------------------------------------------------------------


def l1_terms(s_u, s_v, s_neg, neg_mask: np.ndarray, denominator: str = "with_positive",
             cfg: geo.GeometryConfig = geo.DEFAULT):
    """Per-pair distance loss, shape (B,).

    ``s_neg`` is (B, k, n) and ``neg_mask`` (B, k) marks real negatives.
    """
    d_pos = geo.distance(s_u, s_v, cfg)                                  # (B, 1)
    s_u3 = ad.reshape(s_u, ad.value(s_u).shape[:-1] + (1, ad.value(s_u).shape[-1]))
    d_neg = ad.reshape(geo.distance(s_u3, s_neg, cfg), neg_mask.shape)   # (B, k)
    neg_logits = ad.where(neg_mask, -d_neg, _MASKED)
    if denominator == "with_positive":
        logits = ad.concat([-d_pos, neg_logits], axis=-1)
    else:
        logits = neg_logits
    lse = ad.logsumexp(logits, axis=-1)
    return lse + ad.reshape(d_pos, neg_mask.shape[:1])


def loss_l1(s_u, s_v, negatives, denominator: str = "with_positive",
            cfg: geo.GeometryConfig = geo.DEFAULT):
    """Negative log-likelihood of the positive against the given negatives."""
    negatives = ad.value(negatives) if not ad.is_var(negatives) else negatives
    if ad.value(negatives).size == 0:
        raise ValueError("loss_l1 needs at least one negative")
    neg = ad.reshape(negatives, (1,) + ad.value(negatives).shape)
    su = ad.reshape(s_u, (1, -1))
    sv = ad.reshape(s_v, (1, -1))
    mask = np.ones((1, ad.value(negatives).shape[0]), dtype=bool)
    return ad.reshape(l1_terms(su, sv, neg, mask, denominator, cfg), ())


def l2_degenerate(s_u, s_v, cfg: geo.GeometryConfig = geo.DEFAULT) -> np.ndarray:
    su, sv = ad.value(s_u), ad.value(s_v)
    return ((np.linalg.norm(sv, axis=-1) < cfg.min_norm_eps)
            | (np.linalg.norm(su - sv, axis=-1) < cfg.min_norm_eps))


def l2_terms(s_u, s_v, cfg: geo.GeometryConfig = geo.DEFAULT):
    """Angle at s_v between the outward radial direction and the geodesic to s_u.

    The cosine is the closed form; the sine comes from the component of the
    geodesic direction (-s_v) (+) s_u orthogonal to s_v.  Taking atan2 of the
    pair keeps full precision near 0 and pi, where arccos loses about half
    the significant digits.
    """
    uv = ad.sum(s_u * s_v, axis=-1, keepdims=True)
    u2 = geo.sq_norm(s_u)
    v2 = geo.sq_norm(s_v)
    num = uv * (1.0 + v2) - v2 * (1.0 + u2)
    den = geo.norm(s_v, cfg) * geo.norm(s_u - s_v, cfg) * ad.sqrt(1.0 + u2 * v2 - 2.0 * uv)
    cos = ad.clamp(num / den, -1.0, 1.0)
    w = geo.mobius_add(-s_v, s_u, cfg)
    radial = s_v / geo.norm(s_v, cfg)
    perp = w - ad.sum(w * radial, axis=-1, keepdims=True) * radial
    sin = geo.norm(perp, cfg) / geo.norm(w, cfg)
    out = ad.arctan2(sin, cos)
    return ad.reshape(out, ad.value(out).shape[:-1])


def loss_l2(s_u, s_v, cfg: geo.GeometryConfig = geo.DEFAULT):
    """Angular loss for one pair; ``None`` signals a degenerate (skipped) pair."""
    if np.any(l2_degenerate(s_u, s_v, cfg)):
        return None
    return l2_terms(s_u, s_v, cfg)


@dataclass
class LossParts:
    total: object
    l1: float
    l2: float
    skipped_degenerate: int
    no_negatives: int


def combined_loss(s_u, s_v, s_neg, neg_mask: np.ndarray, alpha: float,
                  denominator: str = "with_positive",
                  cfg: geo.GeometryConfig = geo.DEFAULT) -> LossParts:
    """alpha * mean(L1) + (1 - alpha) * mean(L2) over one batch."""
    n = ad.value(s_u).shape[0]
    if n == 0:
        raise ValueError("empty batch")
    total = 0.0
    l1v = l2v = 0.0
    skipped = 0
    has_neg = neg_mask.any(axis=-1)
    no_neg = int(n - has_neg.sum())
    if alpha > 0 and has_neg.any():
        l1 = l1_terms(s_u, s_v, s_neg, neg_mask, denominator, cfg)
        l1 = ad.sum(ad.where(has_neg, l1, 0.0)) / float(has_neg.sum())
        l1v = float(ad.value(l1))
        total = alpha * l1
    if alpha < 1:
        degen = l2_degenerate(s_u, s_v, cfg)
        skipped = int(degen.sum())
        keep = ~degen
        if keep.any():
            l2 = ad.sum(ad.where(keep, l2_terms(s_u, s_v, cfg), 0.0)) / float(keep.sum())
            l2v = float(ad.value(l2))
            total = total + (1.0 - alpha) * l2
    return LossParts(total, l1v, l2v, skipped, no_neg)


# --- scoring and rules --------------------------------------------------------


def score(s_u, s_v, rc: RuleConfig = RuleConfig(), cfg: geo.GeometryConfig = geo.DEFAULT):
    """(|s_u|_D - |s_v|_D) / (d(s_u, s_v) + epsilon), shape (..., 1)."""
    return (geo.ball_norm(s_u, cfg) - geo.ball_norm(s_v, cfg)) / (geo.distance(s_u, s_v, cfg) + rc.epsilon)


def classify_scores(scores: np.ndarray, rc: RuleConfig) -> np.ndarray:
    """Label indices; ties at +-t go to Vague, ties at +-epsilon to Equal."""
    s = np.asarray(scores, dtype=np.float64)
    out = np.full(s.shape, TempRelLabel.VAGUE.index, dtype=np.int64)
    out[s > rc.threshold_t] = TempRelLabel.BEFORE.index
    out[s < -rc.threshold_t] = TempRelLabel.AFTER.index
    out[np.abs(s) <= rc.epsilon] = TempRelLabel.EQUAL.index
    return out


def classify(s_u, s_v, rc: RuleConfig, cfg: geo.GeometryConfig = geo.DEFAULT) -> TempRelLabel:
    sc = float(np.asarray(score(s_u, s_v, rc, cfg)).reshape(-1)[0])
    return classify_score(sc, rc)


def classify_score(sc: float, rc: RuleConfig) -> TempRelLabel:
    return TempRelLabel.from_index(int(classify_scores(np.array([sc]), rc)[0]))


def threshold_grid(epsilon: float, step: float = 0.01) -> np.ndarray:
    k = np.arange(1, int(np.ceil((1.0 - epsilon) / step)) + 1)
    grid = np.round(epsilon + step * k, 10)
    return grid[(grid > epsilon) & (grid < 1.0)]


def tune_threshold_scores(scores: np.ndarray, gold: Sequence[TempRelLabel], epsilon: float) -> RuleConfig:
    if len(gold) == 0:
        raise ValueError("empty dev set")
    gold_idx = np.array([g.index for g in gold])
    best_t, best_f1 = None, -1.0
    for t in threshold_grid(epsilon):
        rc = RuleConfig(epsilon, float(t))
        f1 = compute_metrics(ConfusionMatrix.from_indices(gold_idx, classify_scores(scores, rc)))["f1"]
        if f1 > best_f1:
            best_t, best_f1 = float(t), f1
    return RuleConfig(epsilon, best_t)


def tune_threshold(dev: Sequence[EventPairExample], model: EmbedModel, rc: RuleConfig | None = None) -> RuleConfig:
    """Grid search t over (epsilon, 1) in 0.01 steps for the best dev F1."""
    if not dev:
        raise ValueError("empty dev set")
    eps = (rc or model.rules).epsilon
    return tune_threshold_scores(model.scores(dev), [p.label for p in dev], eps)


def evaluate(model: EmbedModel, pairs: Sequence[EventPairExample]) -> ConfusionMatrix:
    pred = classify_scores(model.scores(pairs), model.rules)
    return ConfusionMatrix.from_indices(np.array([p.label.index for p in pairs]), pred)


def norm_ordering_rate(model: EmbedModel, pairs: Sequence[EventPairExample]) -> float:
    """Share of Before/After pairs whose earlier event has the larger ball norm."""
    eu, ev = [], []
    for p in pairs:
        if p.label in (TempRelLabel.BEFORE, TempRelLabel.AFTER):
            _, _, a, b, _ = normalize_pair(p)
            eu.append(a)
            ev.append(b)
    if not eu:
        raise ValueError("no ordered pairs")
    nu = geo.ball_norm(model.embed(np.stack(eu)), model.cfg)
    nv = geo.ball_norm(model.embed(np.stack(ev)), model.cfg)
    return float(np.mean(nu > nv))


# --- training -----------------------------------------------------------------


@dataclass
class EmbedHistory:
    epochs: list[dict] = field(default_factory=list)


def train_embed(pairs: Sequence[EventPairExample], graphs: dict[str, TemporalGraph],
                cfg: EmbedTrainConfig, geom: geo.GeometryConfig = geo.DEFAULT,
                callback=None) -> tuple[EmbedModel, EmbedHistory]:
    positives = [normalize_pair(p) + (p.doc_id,) for p in pairs if p.label is not TempRelLabel.VAGUE]
    if not positives:
        raise ValueError("no positive pairs to train on")
    missing = {p.doc_id for p in pairs} - set(graphs)
    if missing:
        raise ValueError(f"no temporal graph for documents {sorted(missing)[:3]}")
    dim_in = positives[0][2].shape[0]
    rng = np.random.default_rng(cfg.seed)
    model = EmbedModel(dim_in, cfg.dim_out, cfg.activation, rng=rng, cfg=geom,
                       rules=RuleConfig(cfg.epsilon, max(0.5, cfg.epsilon + 0.01)))
    params = list(model.parameters().values())
    opt = Optimizer(params, lr=cfg.lr, weight_decay=cfg.weight_decay, cfg=geom)

    vectors = event_vectors(pairs)
    neg_pool: dict[tuple[str, str], list[str]] = {}
    for doc, g in graphs.items():
        for u, ns in negative_sets(g).items():
            neg_pool[(doc, u)] = sorted(ns)

    k = cfg.negatives_per_positive
    history = EmbedHistory()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(positives))
        tot = l1s = l2s = 0.0
        skipped = no_neg = batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            eu = np.stack([positives[i][2] for i in idx])
            ev = np.stack([positives[i][3] for i in idx])
            eneg = np.zeros((len(idx), k, dim_in))
            mask = np.zeros((len(idx), k), dtype=bool)
            for r, i in enumerate(idx):
                u, doc = positives[i][0], positives[i][5]
                pool = neg_pool.get((doc, u), [])
                if pool:
                    picks = rng.integers(0, len(pool), size=k)
                    for c, j in enumerate(picks):
                        eneg[r, c] = vectors[(doc, pool[j])]
                        mask[r, c] = True
            opt.zero_grad()
            n = len(idx)
            s_all = model.project(np.concatenate([eu, ev, eneg.reshape(-1, dim_in)]))
            s_u, s_v = s_all[:n], s_all[n:2 * n]
            s_neg = ad.reshape(s_all[2 * n:], (n, k, cfg.dim_out))
            parts = combined_loss(s_u, s_v, s_neg, mask, cfg.alpha, cfg.l1_denominator, geom)
            if ad.is_var(parts.total):
                ad.backward(parts.total)
                opt.step()
            tot += float(ad.value(parts.total))
            l1s += parts.l1
            l2s += parts.l2
            skipped += parts.skipped_degenerate
            no_neg += parts.no_negatives
            batches += 1
        rec = {"epoch": epoch, "train_loss": tot / batches, "l1": l1s / batches, "l2": l2s / batches,
               "skipped_degenerate": skipped, "no_negatives": no_neg}
        history.epochs.append(rec)
        log.info("epoch %d loss %.4f l1 %.4f l2 %.4f skipped %d", epoch, rec["train_loss"],
                 rec["l1"], rec["l2"], skipped)
        if callback is not None:
            callback(model, rec)
    return model, history


def config_dict(cfg: EmbedTrainConfig) -> dict:
    return asdict(cfg)
