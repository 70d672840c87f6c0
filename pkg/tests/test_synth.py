import filecmp

import numpy as np
import pytest

from hypertemp.data import TempRelLabel, label_counts, load_pairs
from hypertemp.synth import SynthSpec, generate, write


class TestSpec:
    @pytest.mark.parametrize("kw", [{"depth": 1}, {"docs": 0}, {"dim": 2}, {"vague_frac": 1.0}, {"noise": -0.1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SynthSpec(**kw)


class TestGenerate:
    def test_noise_free_labels_follow_time_direction(self):
        data = generate(SynthSpec(docs=10, depth=5, noise=0.0, seed=2))
        for p in data.pairs:
            if p.label is TempRelLabel.VAGUE:
                continue
            gap = (p.event_u_vec - p.event_v_vec) @ data.time_dir
            assert (gap > 0) == (p.label is TempRelLabel.BEFORE)

    def test_labels_and_chains(self):
        data = generate(SynthSpec(docs=20, depth=6, seed=0))
        counts = label_counts(data.pairs)
        assert counts[TempRelLabel.EQUAL] == 0
        assert counts[TempRelLabel.BEFORE] > 0 and counts[TempRelLabel.AFTER] > 0 and counts[TempRelLabel.VAGUE] > 0
        for p in data.pairs:
            u, v = p.event_ids
            same_chain = u[0] == v[0]
            assert same_chain == (p.label is not TempRelLabel.VAGUE)

    def test_split_partitions_documents(self):
        data = generate(SynthSpec(docs=50, seed=0))
        parts = [set(data.split[k]) for k in ("train", "dev", "test")]
        assert sum(len(s) for s in parts) == 50
        assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
        assert len(parts[2]) == 10

    def test_knowledge_bins_in_range(self):
        data = generate(SynthSpec(docs=5, knowledge_bins=7))
        assert all(0 <= p.knowledge_bin < 7 for p in data.pairs)
        assert all(p.knowledge_bin is None for p in generate(SynthSpec(docs=2, knowledge_bins=0)).pairs)


class TestWrite:
    def test_byte_identical(self, tmp_path):
        spec = SynthSpec(docs=6, seed=3)
        a, b = write(generate(spec), tmp_path / "a"), write(generate(spec), tmp_path / "b")
        for k in a:
            assert filecmp.cmp(a[k], b[k], shallow=False)

    def test_paper_scale_shape_loads(self, tmp_path):
        paths = write(generate(SynthSpec(docs=50, depth=6)), tmp_path)
        pairs = load_pairs(paths["pairs"])
        assert len({p.doc_id for p in pairs}) == 50 and pairs[0].dim == 16
        assert np.all([p.tokens.shape == (8, 16) for p in pairs])
