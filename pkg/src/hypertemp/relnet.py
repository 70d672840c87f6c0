"""End-to-end hyperbolic relation classifier.

Token embeddings are mapped onto the ball, passed through an HFFL and a
unidirectional HGRU; the hidden states at the two event positions are
aggregated with Möbius operations together with their hyperbolic distance
and an optional knowledge embedding, and scored by an HMLR head.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .autodiff import Parameter
from .data import LABELS, EventPairExample
from .layers import HFFL, HGRU, HMLR, Module, cross_entropy, hmlr_logits, hyper_nonlinearity, softmax, uniform_matrix
from .metrics import ConfusionMatrix, compute_metrics
from .optim import Optimizer

log = logging.getLogger(__name__)

ABLATION_FLAGS = ("no_distance_feature", "euclidean_mlr_head", "no_hgru", "no_knowledge")
DISTANCE_MODES = ("exp0", "mobius_scalar", "none")


@dataclass(frozen=True)
class RelNetConfig:
    d2: int = 128
    d3: int = 32
    d4: int = 64
    knowledge_bins: int = 16
    use_knowledge: bool = True
    distance_mode: str = "exp0"
    head: str = "hmlr"
    use_hgru: bool = True
    epochs: int = 15
    lr: float = 1e-3
    batch_size: int = 250
    seed: int = 0
    dropout: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.distance_mode not in DISTANCE_MODES:
            raise ValueError(f"unknown distance_mode {self.distance_mode!r}")
        if self.head not in ("hmlr", "emlr"):
            raise ValueError(f"unknown head {self.head!r}")
        if min(self.d2, self.d3, self.d4) < 1 or self.batch_size < 1:
            raise ValueError("dimensions and batch size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def ablate(cfg: RelNetConfig, flags: Sequence[str] = ()) -> RelNetConfig:
    """Configuration of an ablated variant."""
    flags = list(flags)
    unknown = set(flags) - set(ABLATION_FLAGS)
    if unknown:
        raise ValueError(f"unknown ablation flags {sorted(unknown)}")
    if len(set(flags)) != len(flags):
        raise ValueError("repeated ablation flag")
    if "no_distance_feature" in flags and cfg.distance_mode == "mobius_scalar":
        raise ValueError("no_distance_feature contradicts distance_mode='mobius_scalar'")
    changes = {}
    if "no_distance_feature" in flags:
        changes["distance_mode"] = "none"
    if "euclidean_mlr_head" in flags:
        changes["head"] = "emlr"
    if "no_hgru" in flags:
        changes["use_hgru"] = False
    if "no_knowledge" in flags:
        changes["use_knowledge"] = False
    return replace(cfg, **changes)


@dataclass
class Batch:
    tokens: np.ndarray      # (B, L, d), right-padded
    pos_u: np.ndarray
    pos_v: np.ndarray
    kbin: np.ndarray        # -1 where absent
    labels: np.ndarray

    @classmethod
    def from_examples(cls, exs: Sequence[EventPairExample]) -> Batch:
        pos_u = np.array([e.pos_u for e in exs])
        pos_v = np.array([e.pos_v for e in exs])
        # states after the later event never feed the output of a forward recurrence
        L = int(max(pos_u.max(), pos_v.max())) + 1
        d = exs[0].dim
        tokens = np.zeros((len(exs), L, d))
        for i, e in enumerate(exs):
            n = min(L, e.tokens.shape[0])
            tokens[i, :n] = e.tokens[:n]
        kbin = np.array([-1 if e.knowledge_bin is None else e.knowledge_bin for e in exs])
        labels = np.array([e.label.index for e in exs])
        return cls(tokens, pos_u, pos_v, kbin, labels)


class RelNetModel(Module):
    def __init__(self, dim_in: int, cfg: RelNetConfig = RelNetConfig(),
                 geom: geo.GeometryConfig = geo.DEFAULT):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.geom = geom
        self.dim_in = dim_in
        self.input_ffl = HFFL(dim_in, cfg.d2, rng=rng, cfg=geom)
        if cfg.use_hgru:
            self.hgru = HGRU(cfg.d2, cfg.d2, rng=rng, cfg=geom)
        else:
            self.event_ffl = HFFL(cfg.d2, cfg.d2, activation="tanh", rng=rng, cfg=geom)
        self.W_u = Parameter(uniform_matrix(rng, cfg.d4, cfg.d2), name="W_u")
        self.W_v = Parameter(uniform_matrix(rng, cfg.d4, cfg.d2), name="W_v")
        self.b_k = Parameter(np.zeros(cfg.d4), space=Parameter.HYPERBOLIC, name="b_k")
        if cfg.distance_mode == "exp0":
            self.w_o = Parameter(rng.uniform(-0.1, 0.1, cfg.d4), name="w_o")
        elif cfg.distance_mode == "mobius_scalar":
            self.w_o = Parameter(rng.uniform(-0.1, 0.1, cfg.d4), space=Parameter.HYPERBOLIC, name="w_o")
        if cfg.use_knowledge and cfg.knowledge_bins > 0:
            self.knowledge = Parameter(rng.uniform(-1e-2, 1e-2, (cfg.knowledge_bins, cfg.d3)),
                                       space=Parameter.HYPERBOLIC, name="knowledge")
            self.W_g = Parameter(uniform_matrix(rng, cfg.d4, cfg.d3), name="W_g")
        if cfg.head == "hmlr":
            self.head = HMLR(cfg.d4, len(LABELS), rng=rng, cfg=geom)
        else:
            self.W_c = Parameter(uniform_matrix(rng, len(LABELS), cfg.d4), name="W_c")
            self.b_c = Parameter(np.zeros(len(LABELS)), name="b_c")

    # -- forward pieces -----------------------------------------------------

    def encode(self, tokens, pos_u: np.ndarray, pos_v: np.ndarray, rng=None):
        """Hidden states (h_u, h_v) at the event positions, each (B, d2)."""
        g = self.geom
        x = tokens
        if rng is not None and self.cfg.dropout > 0:
            keep = rng.random(np.shape(tokens)) >= self.cfg.dropout
            x = x * keep / (1.0 - self.cfg.dropout)
        c = self.input_ffl(geo.exp_map0(x, g))
        rows = np.arange(len(pos_u))
        if not self.cfg.use_hgru:
            return self.event_ffl(c[rows, pos_u]), self.event_ffl(c[rows, pos_v])
        states = ad.stack(self.hgru.sequence(c), axis=1)
        return states[rows, pos_u], states[rows, pos_v]

    def knowledge_points(self, kbin: np.ndarray):
        if not hasattr(self, "knowledge"):
            return None
        kbin = np.asarray(kbin)
        if np.any(kbin >= self.cfg.knowledge_bins):
            raise ValueError(f"knowledge bin {int(kbin.max())} outside table of {self.cfg.knowledge_bins}")
        present = (kbin >= 0)[:, None]
        return ad.where(present, self.knowledge[np.maximum(kbin, 0)], 0.0)

    def aggregate(self, h_u, h_v, knowledge=None):
        """o = relu-phi(((W_u (x) h_u) (+) (W_v (x) h_v) (+) b_k) (+) dist-term (+) knowledge)."""
        g = self.geom
        s = geo.mobius_add(geo.mobius_add(geo.mobius_matvec(self.W_u, h_u, g),
                                          geo.mobius_matvec(self.W_v, h_v, g), g), self.b_k, g)
        if self.cfg.distance_mode != "none":
            delta = geo.distance(h_u, h_v, g)
            if self.cfg.distance_mode == "exp0":
                dist_term = geo.exp_map0(delta * self.w_o, g)
            else:
                dist_term = geo.mobius_scalar(delta, self.w_o, g)
            s = geo.mobius_add(s, dist_term, g)
        if knowledge is not None and hasattr(self, "W_g"):
            s = geo.mobius_add(s, geo.mobius_matvec(self.W_g, knowledge, g), g)
        return hyper_nonlinearity(s, "relu", g)

    def logits(self, o):
        if self.cfg.head == "hmlr":
            return hmlr_logits(o, self.head.p, self.head.a, self.geom)
        return ad.matmul(geo.log_map0(o, self.geom), ad.transpose(self.W_c)) + self.b_c

    def forward_batch(self, batch: Batch, rng=None):
        h_u, h_v = self.encode(batch.tokens, batch.pos_u, batch.pos_v, rng)
        return self.logits(self.aggregate(h_u, h_v, self.knowledge_points(batch.kbin)))

    # -- inference ------------------------------------------------------------

    def predict_proba(self, pairs: Sequence[EventPairExample], batch_size: int = 256) -> np.ndarray:
        if pairs and pairs[0].dim != self.dim_in:
            raise ValueError(f"model expects {self.dim_in}-dim embeddings, got {pairs[0].dim}")
        out = []
        frozen = self.frozen()
        for i in range(0, len(pairs), batch_size):
            out.append(softmax(frozen.forward_batch(Batch.from_examples(pairs[i:i + batch_size]))))
        return np.concatenate(out) if out else np.zeros((0, len(LABELS)))

    def frozen(self) -> RelNetModel:
        """Shallow copy whose parameters are plain arrays, for fast inference."""
        twin = copy.copy(self)
        _freeze(twin)
        return twin

    def evaluate(self, pairs: Sequence[EventPairExample]) -> ConfusionMatrix:
        pred = self.predict_proba(pairs).argmax(axis=-1)
        return ConfusionMatrix.from_indices(np.array([p.label.index for p in pairs]), pred)

    # -- persistence ----------------------------------------------------------

    def to_checkpoint(self) -> dict:
        params = {name: {"shape": list(p.shape), "data": p.value.reshape(-1).tolist()}
                  for name, p in sorted(self.parameters().items())}
        return {"format_version": 1, "kind": "relnet", "dim_in": self.dim_in,
                "config": asdict(self.cfg), "seed": self.cfg.seed,
                "ball_eps": self.geom.ball_eps, "min_norm_eps": self.geom.min_norm_eps,
                "params": params}

    @classmethod
    def from_checkpoint(cls, ck: dict) -> RelNetModel:
        if ck.get("kind") != "relnet" or ck.get("format_version") != 1:
            raise ValueError("not a relnet checkpoint (format_version 1)")
        geom = geo.GeometryConfig(ck.get("ball_eps", 1e-5), ck.get("min_norm_eps", 1e-12))
        m = cls(ck["dim_in"], RelNetConfig(**ck["config"]), geom)
        params = m.parameters()
        if set(params) != set(ck["params"]):
            raise ValueError("checkpoint parameters do not match the configured architecture")
        for name, p in params.items():
            entry = ck["params"][name]
            p.value = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        return m

    def param_values(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.parameters().items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, p in self.parameters().items():
            p.value = values[k].copy()


def _freeze(mod) -> None:
    for name, val in list(vars(mod).items()):
        if isinstance(val, Parameter):
            setattr(mod, name, val.value)
        elif isinstance(val, Module):
            twin = copy.copy(val)
            _freeze(twin)
            setattr(mod, name, twin)


def encode_sentence(ex: EventPairExample, m: RelNetModel):
    h_u, h_v = m.frozen().encode(ex.tokens[None], np.array([ex.pos_u]), np.array([ex.pos_v]))
    return ad.value(h_u)[0], ad.value(h_v)[0]


def forward(ex: EventPairExample, m: RelNetModel) -> np.ndarray:
    return m.predict_proba([ex])[0]


@dataclass
class RelNetHistory:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def train_relnet(train: Sequence[EventPairExample], dev: Sequence[EventPairExample],
                 cfg: RelNetConfig = RelNetConfig(), geom: geo.GeometryConfig = geo.DEFAULT,
                 callback=None) -> tuple[RelNetModel, RelNetHistory]:
    """Minibatch cross-entropy training; returns the best-dev-F1 epoch's weights."""
    if not train:
        raise ValueError("empty training set")
    model = RelNetModel(train[0].dim, cfg, geom)
    params = list(model.parameters().values())
    opt = Optimizer(params, lr=cfg.lr, weight_decay=cfg.weight_decay, cfg=geom)
    rng = np.random.default_rng(cfg.seed + 1)
    history = RelNetHistory()
    best_f1, best_vals = -np.inf, model.param_values()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        tot, n_seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            exs = [train[i] for i in order[start:start + cfg.batch_size]]
            batch = Batch.from_examples(exs)
            opt.zero_grad()
            loss = cross_entropy(model.forward_batch(batch, rng), batch.labels)
            ad.backward(loss)
            opt.step()
            tot += float(ad.value(loss)) * len(exs)
            n_seen += len(exs)
        rec = {"epoch": epoch, "train_loss": tot / n_seen}
        if dev:
            m = compute_metrics(model.evaluate(dev))
            rec.update(dev_acc=m["accuracy"], dev_f1=m["f1"])
        else:
            rec.update(dev_acc=None, dev_f1=None)
        rec["skipped_degenerate"] = 0
        history.epochs.append(rec)
        score = rec["dev_f1"] if dev else -rec["train_loss"]
        if score > best_f1:
            best_f1, best_vals, history.best_epoch = score, model.param_values(), epoch
        log.info("epoch %d loss %.4f dev_acc %s dev_f1 %s", epoch, rec["train_loss"],
                 rec["dev_acc"], rec["dev_f1"])
        if callback is not None:
            callback(model, rec)
    model.load_values(best_vals)
    return model, history
