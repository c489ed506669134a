"""Memory banks, hard-example mining, and the contrastive losses.

The sampler is checked against a brute-force oracle written directly
from the mining rules (sort by similarity, break ties by slot index);
the losses are checked against closed forms that fall out of the
definition.
"""

import math

import numpy as np
import pytest

from stdcl import instrumentation
from stdcl import tensor as tz
from stdcl.contrast import (
    ContrastConfig,
    ContrastSample,
    MemoryBank,
    contrast_step,
    cosine_similarity,
    export_bank_tsv,
    info_nce,
    load_bank_tsv,
    make_banks,
    sample_and_loss,
    sample_contrast,
)
from stdcl.decoupling import EmbeddingPair
from stdcl.errors import BankIntegrityError, ConfigError, NumericError
from stdcl.tensor import Tensor


def unit(vec):
    vec = np.asarray(vec, dtype=np.float64)
    return vec / np.linalg.norm(vec)


def filled_bank(rng, length=20, dim=6, num_labels=3, fill=0.9, name="t"):
    bank = MemoryBank(length, dim, name=name, seed=int(rng.integers(2**31)))
    for i in range(length):
        if rng.random() < fill:
            bank.update(i, rng.standard_normal(dim), int(rng.integers(num_labels)))
    return bank


def oracle_sample(bank, anchor, label, anchor_index, cfg, rand_indices=None):
    """Mining rules transcribed directly: dict of sims, python sorts."""
    u = unit(anchor)
    sims = {
        i: float(np.dot(bank.features[i], u))
        for i in range(bank.length)
        if bank.valid[i] and i != anchor_index
    }
    pos = sorted((i for i in sims if bank.labels[i] == label), key=lambda i: (sims[i], i))
    neg = sorted((i for i in sims if bank.labels[i] != label), key=lambda i: (-sims[i], i))
    if not pos or not neg:
        return None
    return {
        "positives": pos[: cfg.n_pos_hard],
        "hard_negatives": neg[: cfg.n_neg_hard],
        "remaining": set(neg[cfg.n_neg_hard :]),
    }


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError, match="temperature"):
            ContrastConfig(tau=0.0)
        with pytest.raises(ConfigError, match="positive"):
            ContrastConfig(n_pos_hard=0)
        with pytest.raises(ConfigError, match="negative overall"):
            ContrastConfig(n_neg_hard=0, n_neg_rand=0)
        with pytest.raises(ConfigError, match="loss_form"):
            ContrastConfig(loss_form="softmax")


class TestBank:
    def test_starts_empty_and_unsampleable(self):
        bank = MemoryBank(5, 3, name="b", seed=0)
        assert bank.fill_fraction() == 0.0
        assert (bank.labels == -1).all() and not bank.valid.any()
        got = sample_contrast(bank, np.ones(3), 0, 0, ContrastConfig(), bank.rng)
        assert got is None

    def test_update_normalizes(self):
        bank = MemoryBank(5, 3, name="b", seed=0)
        bank.update(2, np.array([3.0, 0.0, 4.0]), label=1)
        np.testing.assert_allclose(bank.features[2], [0.6, 0.0, 0.8])
        assert bank.labels[2] == 1 and bank.valid[2]

    def test_label_immutable(self):
        bank = MemoryBank(5, 3, name="b", seed=0)
        bank.update(2, np.ones(3), label=1)
        with pytest.raises(BankIntegrityError, match="refusing relabel"):
            bank.update(2, np.ones(3), label=0)
        # same label re-write is fine
        bank.update(2, np.array([1.0, 0.0, 0.0]), label=1)
        np.testing.assert_allclose(bank.features[2], [1.0, 0.0, 0.0])

    def test_update_rejects_bad_input(self):
        bank = MemoryBank(5, 3, name="b", seed=0)
        with pytest.raises(BankIntegrityError, match="slot"):
            bank.update(5, np.ones(3), 0)
        with pytest.raises(BankIntegrityError, match="label"):
            bank.update(0, np.ones(3), -2)
        with pytest.raises(BankIntegrityError, match="shape"):
            bank.update(0, np.ones(4), 0)
        with pytest.raises(NumericError, match="non-finite"):
            bank.update(0, np.array([np.nan, 0, 0]), 0)
        with pytest.raises(NumericError, match="near-zero"):
            bank.update(0, np.zeros(3), 0)

    def test_integrity_randomized_updates_and_exact_replay(self):
        rng = np.random.default_rng(42)
        script = [
            (int(rng.integers(30)), rng.standard_normal(5), int(rng.integers(4)))
            for _ in range(500)
        ]

        def apply(bank):
            for index, vec, label in script:
                try:
                    bank.update(index, vec, label)
                except BankIntegrityError:
                    pass  # relabel attempts are expected in a random script

        a = MemoryBank(30, 5, name="a", seed=7)
        apply(a)
        a.check_integrity()
        norms = np.linalg.norm(a.features[a.valid], axis=1)
        assert np.abs(norms - 1.0).max() < 1e-6

        b = MemoryBank(30, 5, name="a", seed=7)
        apply(b)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.valid, b.valid)

    def test_integrity_catches_corruption(self):
        bank = MemoryBank(4, 3, name="b", seed=0)
        bank.update(0, np.ones(3), 0)
        bank.features[0] *= 2.0
        with pytest.raises(BankIntegrityError, match="norm"):
            bank.check_integrity()
        bank2 = MemoryBank(4, 3, name="b", seed=0)
        bank2.features[1, 0] = 0.5  # invalid slot must stay zero
        with pytest.raises(BankIntegrityError, match="invalid slot"):
            bank2.check_integrity()


class TestSampler:
    def test_matches_oracle_on_random_banks(self):
        rng = np.random.default_rng(0)
        for trial in range(40):
            bank = filled_bank(rng, length=int(rng.integers(5, 40)), dim=5,
                               num_labels=int(rng.integers(2, 5)))
            cfg = ContrastConfig(
                n_pos_hard=int(rng.integers(1, 6)),
                n_neg_hard=int(rng.integers(0, 6)),
                n_neg_rand=int(rng.integers(0, 6)) or 1,
            )
            anchor = rng.standard_normal(5)
            anchor_index = int(rng.integers(bank.length))
            label = int(rng.integers(3))
            got = sample_contrast(bank, anchor, label, anchor_index, cfg, bank.rng)
            want = oracle_sample(bank, anchor, label, anchor_index, cfg)
            if want is None:
                assert got is None
                continue
            assert got is not None, f"trial {trial}"
            assert list(got.positives) == want["positives"]
            assert list(got.hard_negatives) == want["hard_negatives"]
            rand = list(got.random_negatives)
            assert len(rand) == min(cfg.n_neg_rand, len(want["remaining"]))
            assert len(set(rand)) == len(rand)
            assert set(rand) <= want["remaining"]

    def test_tie_break_by_ascending_index(self):
        bank = MemoryBank(6, 3, name="b", seed=0)
        row = np.array([1.0, 0.0, 0.0])
        # identical rows -> exactly equal similarities -> index decides
        for i in (0, 1, 2):
            bank.update(i, row, label=0)
        for i in (3, 4, 5):
            bank.update(i, row, label=1)
        cfg = ContrastConfig(n_pos_hard=2, n_neg_hard=2, n_neg_rand=1)
        got = sample_contrast(bank, row, 0, anchor_index=0, cfg=cfg, rng=bank.rng)
        assert list(got.positives) == [1, 2]
        assert list(got.hard_negatives) == [3, 4]
        assert list(got.random_negatives) == [5]

    def test_excludes_anchor_slot(self):
        rng = np.random.default_rng(1)
        bank = filled_bank(rng, length=10, fill=1.0)
        cfg = ContrastConfig(n_pos_hard=10, n_neg_hard=10, n_neg_rand=10)
        got = sample_contrast(bank, np.ones(6), int(bank.labels[4]), 4, cfg, bank.rng)
        assert got is not None
        assert 4 not in set(got.positives) | set(got.negatives)

    def test_small_pools_taken_whole(self):
        bank = MemoryBank(4, 3, name="b", seed=0)
        bank.update(0, [1.0, 0, 0], 0)
        bank.update(1, [0, 1.0, 0], 0)
        bank.update(2, [0, 0, 1.0], 1)
        cfg = ContrastConfig(n_pos_hard=5, n_neg_hard=5, n_neg_rand=5)
        got = sample_contrast(bank, np.array([1.0, 1.0, 1.0]), 0, 3, cfg, bank.rng)
        assert list(got.positives) in ([0, 1], [1, 0])
        assert list(got.hard_negatives) == [2]
        assert got.random_negatives.size == 0

    def test_none_without_positives_or_negatives(self):
        bank = MemoryBank(4, 3, name="b", seed=0)
        bank.update(0, [1.0, 0, 0], 0)
        bank.update(1, [0, 1.0, 0], 0)
        cfg = ContrastConfig(n_pos_hard=1, n_neg_hard=1, n_neg_rand=1)
        # all valid rows share the anchor label -> no negatives
        assert sample_contrast(bank, np.ones(3), 0, 3, cfg, bank.rng) is None
        # no row with the anchor label -> no positives
        assert sample_contrast(bank, np.ones(3), 1, 3, cfg, bank.rng) is None

    def test_degenerate_anchor_raises(self):
        rng = np.random.default_rng(2)
        bank = filled_bank(rng)
        with pytest.raises(NumericError, match="degenerate"):
            sample_contrast(bank, np.zeros(6), 0, 0, ContrastConfig(), bank.rng)

    def test_random_negatives_deterministic_given_stream(self):
        rng = np.random.default_rng(3)
        feats = rng.standard_normal((30, 6))
        labels = rng.integers(0, 2, size=30)

        def build():
            bank = MemoryBank(30, 6, name="b", seed=99)
            for i in range(30):
                bank.update(i, feats[i], int(labels[i]))
            return bank

        cfg = ContrastConfig(n_pos_hard=2, n_neg_hard=2, n_neg_rand=3)
        a, b = build(), build()
        for _ in range(5):
            sa = sample_contrast(a, feats[0], int(labels[0]), 0, cfg, a.rng)
            sb = sample_contrast(b, feats[0], int(labels[0]), 0, cfg, b.rng)
            np.testing.assert_array_equal(sa.random_negatives, sb.random_negatives)


class TestCosine:
    def test_reference_values(self):
        u = Tensor(np.array([1.0, 2.0, 2.0]))
        assert abs(cosine_similarity(u, u).data - 1.0) < 1e-12
        v = Tensor(-np.array([1.0, 2.0, 2.0]))
        assert abs(cosine_similarity(u, v).data + 1.0) < 1e-12
        w = Tensor(np.array([0.0, 2.0, -2.0]))
        assert abs(cosine_similarity(u, w).data) < 1e-12
        assert abs(cosine_similarity(u, Tensor(np.array([2.0, 4.0, 4.0]))).data - 1.0) < 1e-12


class TestInfoNCE:
    def bank_with(self, rows, labels):
        bank = MemoryBank(len(rows), len(rows[0]), name="b", seed=0)
        for i, (row, label) in enumerate(zip(rows, labels)):
            bank.update(i, np.asarray(row, dtype=np.float64), label)
        return bank

    def test_lone_perfect_positive_is_zero(self):
        anchor = Tensor(np.array([0.0, 3.0, 4.0]))
        bank = self.bank_with([[0.0, 3.0, 4.0]], [0])
        sample = ContrastSample(
            positives=np.array([0]),
            hard_negatives=np.array([], dtype=np.int64),
            random_negatives=np.array([], dtype=np.int64),
        )
        for tau in (0.5, 0.8, 1.0):
            loss, skipped = info_nce(anchor, sample, bank, ContrastConfig(tau=tau))
            assert abs(float(loss.data)) < 1e-9
            assert skipped == 0

    def test_symmetric_one_pos_one_neg_is_ln2(self):
        # positive and negative equally similar to the anchor -> ln 2 at tau=1
        anchor = Tensor(np.array([1.0, 0.0, 0.0]))
        bank = self.bank_with([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0, 1])
        sample = ContrastSample(
            positives=np.array([0]),
            hard_negatives=np.array([1]),
            random_negatives=np.array([], dtype=np.int64),
        )
        loss, _ = info_nce(anchor, sample, bank, ContrastConfig(tau=1.0))
        assert abs(float(loss.data) - math.log(2.0)) < 1e-9

    def test_single_positive_closed_form(self):
        rng = np.random.default_rng(5)
        rows = [unit(rng.standard_normal(4)) for _ in range(6)]
        bank = self.bank_with(rows, [0, 1, 1, 1, 1, 1])
        anchor = Tensor(rng.standard_normal(4))
        sample = ContrastSample(
            positives=np.array([0]),
            hard_negatives=np.array([1, 2, 3]),
            random_negatives=np.array([4, 5]),
        )
        for tau in (0.5, 0.8, 1.0):
            loss, _ = info_nce(anchor, sample, bank, ContrastConfig(tau=tau))
            u = unit(anchor.data)
            sp = float(np.dot(rows[0], u))
            sns = [float(np.dot(rows[i], u)) for i in range(1, 6)]
            want = math.log1p(sum(math.exp((sn - sp) / tau) for sn in sns))
            assert abs(float(loss.data) - want) < 1e-10

    def test_sum_over_positives(self):
        """Multi-positive loss is the sum of per-positive single terms."""
        rng = np.random.default_rng(6)
        rows = [unit(rng.standard_normal(4)) for _ in range(5)]
        bank = self.bank_with(rows, [0, 0, 1, 1, 1])
        anchor = Tensor(rng.standard_normal(4))
        cfg = ContrastConfig(tau=0.8)
        negs = np.array([2, 3, 4])
        both = ContrastSample(positives=np.array([0, 1]), hard_negatives=negs,
                              random_negatives=np.array([], dtype=np.int64))
        loss_both, _ = info_nce(anchor, both, bank, cfg)
        total = 0.0
        for p in (0, 1):
            single = ContrastSample(positives=np.array([p]), hard_negatives=negs,
                                    random_negatives=np.array([], dtype=np.int64))
            loss_one, _ = info_nce(anchor, single, bank, cfg)
            total += float(loss_one.data)
        assert abs(float(loss_both.data) - total) < 1e-10

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            bank = filled_bank(rng, length=12, fill=1.0)
            cfg = ContrastConfig(n_pos_hard=3, n_neg_hard=3, n_neg_rand=3)
            anchor = Tensor(rng.standard_normal(6))
            label = int(bank.labels[0])
            sample = sample_contrast(bank, anchor.data, label, 11, cfg, bank.rng)
            if sample is None:
                continue
            loss, _ = info_nce(anchor, sample, bank, cfg)
            assert float(loss.data) > -1e-12

    def test_temperature_ordering_when_positive_wins(self):
        # positive closer than negative: sharper temperature -> smaller loss
        anchor = Tensor(np.array([1.0, 0.1, 0.0]))
        bank = self.bank_with([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [0, 1])
        sample = ContrastSample(positives=np.array([0]), hard_negatives=np.array([1]),
                                random_negatives=np.array([], dtype=np.int64))
        losses = [
            float(info_nce(anchor, sample, bank, ContrastConfig(tau=tau))[0].data)
            for tau in (0.5, 0.8, 1.0)
        ]
        assert losses[0] < losses[1] < losses[2]

    def test_gradient_reaches_anchor_only(self):
        rng = np.random.default_rng(8)
        bank = filled_bank(rng, length=10, fill=1.0)
        before = bank.features.copy()
        anchor = Tensor(rng.standard_normal(6), requires_grad=True)
        cfg = ContrastConfig(n_pos_hard=2, n_neg_hard=2, n_neg_rand=2)
        sample = sample_contrast(bank, anchor.data, int(bank.labels[0]), 9, cfg, bank.rng)
        loss, _ = info_nce(anchor, sample, bank, cfg)
        loss.backward()
        assert anchor.grad is not None and np.abs(anchor.grad).max() > 0
        np.testing.assert_array_equal(bank.features, before)

    def test_literal_form_skips_nonpositive_numerators(self):
        anchor = Tensor(np.array([1.0, 0.0]))
        bank = self.bank_with([[-1.0, 0.0], [0.0, 1.0]], [0, 1])
        sample = ContrastSample(positives=np.array([0]), hard_negatives=np.array([1]),
                                random_negatives=np.array([], dtype=np.int64))
        cfg = ContrastConfig(tau=1.0, loss_form="literal")
        loss, skipped = info_nce(anchor, sample, bank, cfg)
        assert skipped == 1
        assert float(loss.data) == 0.0

    def test_literal_form_value(self):
        # sp=1, sn=0 at tau=1: -log(1 / (1 + 0)) = 0; with sn=1: -log(1/2) = ln 2
        anchor = Tensor(np.array([1.0, 0.0]))
        bank = self.bank_with([[1.0, 0.0], [1.0, 0.0]], [0, 1])
        sample = ContrastSample(positives=np.array([0]), hard_negatives=np.array([1]),
                                random_negatives=np.array([], dtype=np.int64))
        cfg = ContrastConfig(tau=1.0, loss_form="literal")
        loss, skipped = info_nce(anchor, sample, bank, cfg)
        assert skipped == 0
        assert abs(float(loss.data) - math.log(2.0)) < 1e-12

    def test_requires_positives(self):
        bank = self.bank_with([[1.0, 0.0]], [1])
        sample = ContrastSample(positives=np.array([], dtype=np.int64),
                                hard_negatives=np.array([0]),
                                random_negatives=np.array([], dtype=np.int64))
        with pytest.raises(ConfigError, match="positive"):
            info_nce(Tensor(np.ones(2)), sample, bank, ContrastConfig())


class TestStep:
    def test_cold_start_returns_zero_losses_and_fills(self):
        banks = make_banks(length=8, dim=4, seed=0)
        pair = EmbeddingPair(
            spatial=Tensor(np.array([1.0, 0, 0, 0]), requires_grad=True),
            temporal=Tensor(np.array([0, 2.0, 0, 0]), requires_grad=True),
        )
        l_spa, l_tem, skipped = contrast_step(pair, banks, label=1, index=3,
                                              cfg=ContrastConfig())
        assert float(l_spa.data) == 0.0 and float(l_tem.data) == 0.0
        assert skipped == 2
        assert banks["spatial"].valid[3] and banks["temporal"].valid[3]
        np.testing.assert_allclose(banks["temporal"].features[3], [0, 1.0, 0, 0])

    def test_update_happens_after_sampling(self):
        """The anchor's own fresh embedding must not appear in its sample."""
        banks = make_banks(length=4, dim=3, seed=0)
        cfg = ContrastConfig(n_pos_hard=4, n_neg_hard=4, n_neg_rand=4)
        # stale entry for slot 0 pointing along x; new anchor along y
        banks["spatial"].update(0, [1.0, 0, 0], 0)
        banks["temporal"].update(0, [1.0, 0, 0], 0)
        for bank in banks.values():
            bank.update(1, [0, 0, 1.0], 0)
            bank.update(2, [0, 1.0, 0], 1)
        pair = EmbeddingPair(
            spatial=Tensor(np.array([0, 1.0, 0]), requires_grad=True),
            temporal=Tensor(np.array([0, 1.0, 0]), requires_grad=True),
        )
        l_spa, l_tem, skipped = contrast_step(pair, banks, label=0, index=0, cfg=cfg)
        # losses computed against the state where slot 0 was excluded
        assert skipped == 0
        # afterwards slot 0 holds the fresh embedding
        np.testing.assert_allclose(banks["spatial"].features[0], [0, 1.0, 0])

    def test_sample_and_loss_writes_nothing(self):
        banks = make_banks(length=4, dim=3, seed=0)
        bank = banks["spatial"]
        bank.update(1, [1.0, 0, 0], 0)
        bank.update(2, [0, 1.0, 0], 1)
        before = bank.features.copy()
        loss, skipped = sample_and_loss(bank, Tensor(np.array([1.0, 1.0, 0.0])), 0, 0,
                                        ContrastConfig())
        assert loss is not None
        np.testing.assert_array_equal(bank.features, before)
        assert not bank.valid[0]


class TestBankIO:
    def test_tsv_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        bank = filled_bank(rng, length=12, dim=4, fill=0.7)
        path = str(tmp_path / "bank.tsv")
        export_bank_tsv(bank, path)
        back = load_bank_tsv(path)
        np.testing.assert_array_equal(bank.valid, back.valid)
        np.testing.assert_array_equal(bank.labels[bank.valid], back.labels[back.valid])
        np.testing.assert_allclose(bank.features, back.features, atol=1e-7)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("a\tb\tc\tf0\n0\t0\t1\t1.0\n")
        with pytest.raises(BankIntegrityError, match="header"):
            load_bank_tsv(str(path))


class TestInstrumentation:
    def test_read_write_counters(self):
        instrumentation.reset()
        banks = make_banks(length=4, dim=3, seed=0)
        pair = EmbeddingPair(
            spatial=Tensor(np.array([1.0, 0, 0])),
            temporal=Tensor(np.array([1.0, 0, 0])),
        )
        contrast_step(pair, banks, label=0, index=0, cfg=ContrastConfig())
        assert instrumentation.count("bank_reads") == 2
        assert instrumentation.count("bank_writes") == 2
