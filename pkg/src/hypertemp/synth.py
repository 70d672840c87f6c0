"""Synthetic temporal documents with a known time direction.

Each document holds a main chain of ``depth`` totally ordered events and a
shorter side chain that is unordered with respect to the main one.  An
event's trigger embedding is a random base vector (orthogonal to the shared
time direction) plus ``time_scale * earliness`` along that direction, where
earliness = (depth - rank) / depth.  Side-chain events also carry a shared
branch offset.  Every occurrence of an event in a sentence adds Gaussian
noise of norm ~``noise``.  Pairs inside a chain are Before/After, pairs
across chains are Vague.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import EventPairExample, TempRelLabel, build_graph, make_split, save_pairs


@dataclass(frozen=True)
class SynthSpec:
    docs: int = 50
    depth: int = 6
    noise: float = 0.3
    seed: int = 0
    dim: int = 16
    seq_len: int = 8
    vague_frac: float = 0.15
    time_scale: float = 2.0
    base_scale: float = 1.0
    branch_scale: float = 1.0
    filler_scale: float = 1.0
    knowledge_bins: int = 16

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be at least 2")
        if self.docs < 1:
            raise ValueError("docs must be positive")
        if self.dim < 3:
            raise ValueError("dim must be at least 3")
        if self.seq_len < 2:
            raise ValueError("seq_len must be at least 2")
        if not 0.0 <= self.vague_frac < 1.0:
            raise ValueError("vague_frac must lie in [0, 1)")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")


@dataclass
class SynthData:
    spec: SynthSpec
    pairs: list[EventPairExample]
    time_dir: np.ndarray
    branch_dir: np.ndarray
    earliness: dict[tuple[str, str], float]
    split: dict[str, list[str]]


def _orthonormal_dirs(rng, dim):
    q, _ = np.linalg.qr(rng.normal(size=(dim, 2)))
    return q[:, 0], q[:, 1]


def generate(spec: SynthSpec) -> SynthData:
    rng = np.random.default_rng(spec.seed)
    d = spec.dim
    time_dir, branch_dir = _orthonormal_dirs(rng, d)
    proj = np.eye(d) - np.outer(time_dir, time_dir) - np.outer(branch_dir, branch_dir)
    side_len = max(2, spec.depth // 2)
    pairs: list[EventPairExample] = []
    earliness: dict[tuple[str, str], float] = {}

    for di in range(spec.docs):
        doc = f"doc{di:04d}"
        events: dict[str, np.ndarray] = {}
        chains: list[list[str]] = [[], []]
        side_ranks = np.sort(rng.choice(spec.depth, size=min(side_len, spec.depth), replace=False))
        for chain, ranks in ((0, range(spec.depth)), (1, side_ranks)):
            for i, rank in enumerate(ranks):
                eid = f"{'m' if chain == 0 else 's'}{i}"
                early = (spec.depth - int(rank)) / spec.depth
                base = proj @ rng.normal(scale=spec.base_scale / np.sqrt(d), size=d)
                vec = base + spec.time_scale * early * time_dir
                if chain == 1:
                    vec = vec + spec.branch_scale * branch_dir
                events[eid] = vec
                earliness[(doc, eid)] = early
                chains[chain].append(eid)

        ordered = [(a, b) for ch in chains for i, a in enumerate(ch) for b in ch[i + 1:]]
        cross = [(a, b) for a in chains[0] for b in chains[1]]
        n_vague = int(round(spec.vague_frac / (1.0 - spec.vague_frac) * len(ordered)))
        n_vague = min(n_vague, len(cross))
        vague_idx = rng.choice(len(cross), size=n_vague, replace=False) if n_vague else []
        doc_pairs = [(a, b, True) for a, b in ordered] + [(*cross[i], False) for i in sorted(vague_idx)]

        for a, b, is_ordered in doc_pairs:
            if rng.random() < 0.5:
                u, v = a, b
            else:
                u, v = b, a
            if is_ordered:
                label = TempRelLabel.BEFORE if earliness[(doc, u)] > earliness[(doc, v)] else TempRelLabel.AFTER
            else:
                label = TempRelLabel.VAGUE
            pos_u, pos_v = rng.choice(spec.seq_len, size=2, replace=False)
            tokens = rng.normal(scale=spec.filler_scale / np.sqrt(d), size=(spec.seq_len, d))
            tokens[pos_u] = events[u] + rng.normal(scale=spec.noise / np.sqrt(d), size=d)
            tokens[pos_v] = events[v] + rng.normal(scale=spec.noise / np.sqrt(d), size=d)
            mask_u = np.zeros(spec.seq_len, dtype=np.int8)
            mask_v = np.zeros(spec.seq_len, dtype=np.int8)
            mask_u[pos_u] = 1
            mask_v[pos_v] = 1
            gap = earliness[(doc, u)] - earliness[(doc, v)]
            kb = None
            if spec.knowledge_bins > 0:
                noisy = (gap + 1.0) / 2.0 * (spec.knowledge_bins - 1) + rng.normal(scale=1.0)
                kb = int(np.clip(np.round(noisy), 0, spec.knowledge_bins - 1))
            pairs.append(EventPairExample(
                doc_id=doc, pair_id=f"{u}|{v}", tokens=tokens, mask_u=mask_u, mask_v=mask_v,
                event_u_vec=tokens[pos_u].copy(), event_v_vec=tokens[pos_v].copy(),
                label=label, knowledge_bin=kb))

    doc_ids = [f"doc{i:04d}" for i in range(spec.docs)]
    order = list(doc_ids)
    np.random.default_rng(spec.seed + 1).shuffle(order)
    n_test = int(round(0.2 * len(order))) if len(order) >= 3 else 0
    split = make_split(order[n_test:], seed=spec.seed, test_ids=order[:n_test])
    return SynthData(spec, pairs, time_dir, branch_dir, earliness, split)


def write(data: SynthData, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"pairs": out / "pairs.jsonl", "graphs": out / "graphs.json",
             "split": out / "split.json", "meta": out / "meta.json"}
    save_pairs(data.pairs, paths["pairs"])
    graphs = build_graph(data.pairs)
    with open(paths["graphs"], "w", encoding="utf-8") as fh:
        json.dump([graphs[k].to_json() for k in sorted(graphs)], fh, indent=1)
        fh.write("\n")
    with open(paths["split"], "w", encoding="utf-8") as fh:
        json.dump(data.split, fh, indent=1)
        fh.write("\n")
    meta = {"spec": asdict(data.spec), "time_dir": data.time_dir.tolist(),
            "branch_dir": data.branch_dir.tolist(),
            "earliness": {f"{d}/{e}": v for (d, e), v in sorted(data.earliness.items())}}
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    return paths
