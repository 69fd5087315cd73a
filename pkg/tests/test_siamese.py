import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cfrs.errors import ParameterError, TrainingError
from cfrs.network import EmbeddingNet, NetworkParams, NetworkSpec
from cfrs.siamese import (
    Adam, AdamConfig, ContrastiveConfig, backward_and_step, batch_contrastive,
    contrastive_loss, epoch_batches, similarity, train,
)
from cfrs.synthetic import SyntheticFingerSpec, generate_finger

TINY = NetworkSpec((8, 8, 3), (2, 2, 2), (8, 4, 2))
DESK = NetworkSpec((31, 24, 3), (4, 8, 8), (32, 16, 16))

vec16 = arrays(np.float64, 16, elements=st.floats(-10, 10))


class TestLoss:
    def test_same_class_zero_distance(self):
        e = np.arange(16.0)
        assert contrastive_loss(e, e, True) == 0.0

    def test_beyond_margin(self):
        e1 = np.zeros(16)
        e2 = np.zeros(16)
        e2[0] = 1.0
        assert contrastive_loss(e1, e2, False) == 0.0
        e2[0] = 3.0
        assert contrastive_loss(e1, e2, False) == 0.0

    def test_inside_margin(self):
        e1 = np.zeros(16)
        e2 = np.zeros(16)
        e2[3] = 0.5
        assert abs(contrastive_loss(e1, e2, False, ContrastiveConfig(1.0)) - 0.125) < 1e-12

    def test_same_class_penalises_distance(self):
        e1 = np.zeros(16)
        e2 = np.zeros(16)
        e2[0] = 2.0
        assert contrastive_loss(e1, e2, True) == 2.0

    @given(vec16, vec16, st.booleans(), st.floats(0.01, 10))
    def test_nonnegative_and_symmetric(self, a, b, same, m):
        cfg = ContrastiveConfig(m)
        la = contrastive_loss(a, b, same, cfg)
        assert la >= 0
        assert la == contrastive_loss(b, a, same, cfg)

    def test_margin_must_be_positive(self):
        with pytest.raises(ParameterError):
            ContrastiveConfig(0.0)

    def test_batch_matches_pairwise_and_gradient(self):
        rng = np.random.default_rng(0)
        emb = rng.normal(0, 0.3, (4, 16))
        pairs = [(0, 1, True), (2, 3, False), (0, 2, False), (1, 3, True)]
        cfg = ContrastiveConfig(1.5)
        loss, grad = batch_contrastive(emb, pairs, cfg)
        expect = np.mean([contrastive_loss(emb[a], emb[b], s, cfg) for a, b, s in pairs])
        assert loss == pytest.approx(expect, abs=1e-14)
        h = 1e-6
        for idx in np.ndindex(emb.shape):
            e = emb.copy()
            e[idx] += h
            lp = batch_contrastive(e, pairs, cfg)[0]
            e[idx] -= 2 * h
            lm = batch_contrastive(e, pairs, cfg)[0]
            assert grad[idx] == pytest.approx((lp - lm) / (2 * h), abs=1e-7)


class TestSimilarity:
    def test_identical(self):
        e = np.ones(16)
        assert similarity(e, e) == 1e6

    def test_unit_distance(self):
        e2 = np.zeros(16)
        e2[5] = 1.0
        assert similarity(np.zeros(16), e2) == 1 / (1 + 1e-6)

    def test_monotone(self):
        a = np.zeros(16)
        b = np.full(16, 0.1)
        c = np.full(16, 0.2)
        assert similarity(a, b) > similarity(a, c)


class TestAdam:
    def test_matches_textbook_update(self):
        p = NetworkParams.initialize(TINY, 0, np.float64)
        ref = {k: p[k].copy() for k in TINY.trainable()}
        cfg = AdamConfig(lr=0.01)
        adam = Adam(p, cfg)
        m = {k: np.zeros_like(v) for k, v in ref.items()}
        v = {k: np.zeros_like(x) for k, x in ref.items()}
        rng = np.random.default_rng(1)
        for t in range(1, 6):
            grads = {k: rng.normal(size=x.shape) for k, x in ref.items()}
            adam.step(p, grads)
            for k, g in grads.items():
                m[k] = 0.9 * m[k] + 0.1 * g
                v[k] = 0.999 * v[k] + 0.001 * g * g
                mhat = m[k] / (1 - 0.9 ** t)
                vhat = v[k] / (1 - 0.999 ** t)
                ref[k] = ref[k] - 0.01 * mhat / (np.sqrt(vhat) + 1e-8)
        for k in ref:
            np.testing.assert_allclose(p[k], ref[k], rtol=1e-12, atol=1e-15)

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            AdamConfig(beta1=1.0)
        with pytest.raises(ParameterError):
            AdamConfig(epochs=-1)


class TestStep:
    def test_zero_loss_leaves_parameters(self):
        p = NetworkParams.initialize(TINY, 0, np.float64)
        before = {k: p[k].copy() for k in TINY.trainable()}
        img = np.random.default_rng(0).random((8, 8, 3))
        loss = backward_and_step(EmbeddingNet(p), Adam(p), np.stack([img, img]), [(0, 1, True)])
        assert loss == 0.0
        for k, v in before.items():
            assert np.array_equal(p[k], v)
        assert not np.array_equal(p["bn1.mean"], np.zeros(2))  # running stats moved

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_names_tensor(self):
        p = NetworkParams.initialize(TINY, 0, np.float64)
        p.tensors["dense3.w"][0, 0] = np.nan
        x = np.random.default_rng(0).random((2, 8, 8, 3))
        with pytest.raises(TrainingError, match="embeddings"):
            backward_and_step(EmbeddingNet(p), Adam(p), x, [(0, 1, False)])
        p = NetworkParams.initialize(TINY, 0, np.float64)
        x[0, 0, 0, 0] = np.inf
        with pytest.raises(TrainingError, match="input"):
            backward_and_step(EmbeddingNet(p), Adam(p), x, [(0, 1, False)])

    def test_shared_parameters(self):
        # both members of a pair are embedded by the one parameter set, so a
        # step leaves a single, consistent set of tensors
        p = NetworkParams.initialize(TINY, 0, np.float64)
        net = EmbeddingNet(p)
        x = np.random.default_rng(2).random((2, 8, 8, 3))
        backward_and_step(net, Adam(p), x, [(0, 1, True)])
        assert net.params is p
        p.training = False
        a = net.forward(x[:1])[0]
        b = net.forward(x[1:])[0]
        both = net.forward(x)
        np.testing.assert_allclose(both, np.stack([a, b]), rtol=1e-12, atol=1e-12)


class TestBatches:
    def test_group_composition(self):
        imps = {f: [None] * 8 for f in "abcdefghij"}
        batches = epoch_batches(sorted(imps), imps, 16, np.random.default_rng(0))
        assert len(batches) == 5
        seen = set()
        for items, pairs in batches:
            assert len(items) == 16
            fingers = {f for f, _ in items}
            assert len(fingers) == 2
            seen |= fingers
            gen = [p for p in pairs if p[2]]
            imp = [p for p in pairs if not p[2]]
            assert len(gen) == 2 * 28 and len(imp) == len(gen)
            assert all(items[a][0] == items[b][0] for a, b, _ in gen)
            assert all(items[a][0] != items[b][0] for a, b, _ in imp)
            assert len(set(imp)) == len(imp)
        assert seen == set(imps)

    def test_odd_finger_count_never_leaves_single_finger(self):
        imps = {f: [None] * 3 for f in "abcde"}
        for items, _ in epoch_batches(sorted(imps), imps, 6, np.random.default_rng(1)):
            assert len({f for f, _ in items}) >= 2


def toy_fingers(n=4, impressions=3):
    out = {}
    for f in range(n):
        spec = SyntheticFingerSpec.random(50 + f, impressions, n_minutiae=0, shape=(31, 24),
                                          wavelength=(4.0, 8.0), max_rotation=5.0,
                                          max_translation=2.0)
        out[f"f{f}"] = generate_finger(spec)
    return out


def mean_distances(p, imgs):
    net = EmbeddingNet(p)
    emb = {f: [net.embed(im) for im in v] for f, v in imgs.items()}
    gen, imp = [], []
    keys = sorted(emb)
    for i, f in enumerate(keys):
        for a in range(len(emb[f])):
            for b in range(a + 1, len(emb[f])):
                gen.append(np.linalg.norm(emb[f][a] - emb[f][b]))
            for g in keys[i + 1:]:
                imp.append(np.linalg.norm(emb[f][a] - emb[g][a]))
    return float(np.mean(gen)), float(np.mean(imp))


class TestTraining:
    def test_toy_run_separates_classes(self):
        imgs = toy_fingers()
        p = NetworkParams.initialize(DESK, 0)
        hist = train(p, imgs, AdamConfig(lr=1e-3, epochs=40, batch_size=6, seed=0))
        assert len(hist) == 40
        assert hist[-1] < hist[0]
        assert all(math.isfinite(h) for h in hist)
        g, i = mean_distances(p, imgs)
        assert g < i

    def test_deterministic(self):
        imgs = toy_fingers(3, 2)
        runs = []
        for _ in range(2):
            p = NetworkParams.initialize(DESK, 1)
            runs.append((train(p, imgs, AdamConfig(lr=1e-3, epochs=3, batch_size=4, seed=5)),
                         p["dense3.w"].copy()))
        assert runs[0][0] == runs[1][0]
        assert np.array_equal(runs[0][1], runs[1][1])

    def test_zero_epochs(self):
        p = NetworkParams.initialize(DESK, 0)
        before = p["dense1.w"].copy()
        assert train(p, toy_fingers(2, 2), AdamConfig(epochs=0)) == []
        assert np.array_equal(before, p["dense1.w"])

    @settings(max_examples=5, deadline=None)
    @given(st.integers(0, 2**16))
    def test_needs_two_fingers(self, seed):
        p = NetworkParams.initialize(TINY, seed % 7)
        with pytest.raises(ParameterError):
            train(p, {"only": [np.zeros((8, 8, 3))] * 2}, AdamConfig(epochs=1))
