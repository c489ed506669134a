"""Acceptance gate: eight behavioral criteria, one printed verdict line each.

Every test prints `acceptance <name>: PASS|FAIL (<detail>)` straight to the
terminal (bypassing capture) so a full run always shows the eight verdicts,
then asserts.  Tolerances and budgets are pinned here and nowhere else.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from stdcl import instrumentation
from stdcl import tensor as tz
from stdcl.contrast import (
    ContrastConfig,
    ContrastSample,
    MemoryBank,
    info_nce,
    sample_contrast,
)
from stdcl.data import SyntheticSpec, generate_synthetic
from stdcl.encoder import EncoderConfig
from stdcl.errors import BankIntegrityError
from stdcl.experiments import (
    DecouplingStudyConfig,
    ImprovementStudyConfig,
    run_decoupling_study,
    run_improvement_study,
)
from stdcl.gradcheck import run_op_checks, run_pipeline_check
from stdcl.rng import seeded_rng
from stdcl.tensor import Tensor
from stdcl.train import TrainConfig, evaluate, fit, predict_logits

OP_GRAD_TOLERANCE = 1e-4
PIPELINE_GRAD_TOLERANCE = 1e-3
GRAD_TRIALS = 20
ANALYTIC_TOLERANCE = 1e-9
ORACLE_BANKS = 200
BANK_UPDATE_OPS = 10_000
TEMPERATURE_GRID = (0.5, 0.8, 1.0)
DECOUPLING_BUDGET_S = 600.0
IMPROVEMENT_BUDGET_S = 1800.0
FAST_BUDGET_S = 60.0


def _verdict(capsys, name: str, passed: bool, detail: str) -> None:
    line = f"acceptance {name}: {'PASS' if passed else 'FAIL'} ({detail})"
    with capsys.disabled():
        print(line, flush=True)
    assert passed, line


# ---------------------------------------------------------------------------
# 1. gradient correctness


def test_1_gradient_correctness(capsys):
    start = time.monotonic()
    op_results = run_op_checks(trials=GRAD_TRIALS, seed=202, tol=OP_GRAD_TOLERANCE)
    pipeline = run_pipeline_check(trials=GRAD_TRIALS, seed=202, tol=PIPELINE_GRAD_TOLERANCE)
    elapsed = time.monotonic() - start

    worst_op = max(op_results, key=lambda r: r.max_rel_err)
    ok = (
        all(r.passed for r in op_results)
        and pipeline.passed
        and len(op_results) >= 17
        and elapsed < FAST_BUDGET_S
    )
    _verdict(
        capsys, "1 gradient-correctness", ok,
        f"{len(op_results)} ops x {GRAD_TRIALS} trials, worst {worst_op.name} "
        f"rel-err {worst_op.max_rel_err:.2e} < {OP_GRAD_TOLERANCE:.0e}; pipeline "
        f"rel-err {pipeline.max_rel_err:.2e} < {PIPELINE_GRAD_TOLERANCE:.0e}; {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 2. sampler oracle equivalence


def _oracle_sample(bank, anchor_unit, label, anchor_index, n_pos, n_neg_hard):
    """Independent brute-force transcription of the mining rule."""
    sims = {
        i: float(bank.features[i] @ anchor_unit)
        for i in range(bank.length)
        if bank.valid[i] and i != anchor_index
    }
    pos = [i for i in sims if bank.labels[i] == label]
    neg = [i for i in sims if bank.labels[i] != label]
    if not pos or not neg:
        return None
    pos_sorted = sorted(pos, key=lambda i: (sims[i], i))
    neg_sorted = sorted(neg, key=lambda i: (-sims[i], i))
    return (
        pos_sorted[:n_pos],
        neg_sorted[:n_neg_hard],
        set(neg_sorted[n_neg_hard:]),
    )


def test_2_sampler_matches_oracle(capsys):
    start = time.monotonic()
    rng = np.random.default_rng(77)
    checked = 0
    for trial in range(ORACLE_BANKS):
        length = int(rng.integers(2, 1001))
        num_classes = int(rng.integers(2, 11))
        dim = 8
        bank = MemoryBank(length, dim, name=f"oracle{trial}", seed=trial)
        filled = rng.random(length) < rng.uniform(0.2, 1.0)
        for i in np.flatnonzero(filled):
            bank.update(int(i), rng.standard_normal(dim), int(rng.integers(num_classes)))
        cfg = ContrastConfig(
            n_pos_hard=int(rng.integers(1, 11)),
            n_neg_hard=int(rng.integers(0, 11)),
            n_neg_rand=int(rng.integers(1, 11)),
        )
        anchor = rng.standard_normal(dim)
        label = int(rng.integers(num_classes))
        anchor_index = int(rng.integers(length))
        sample = sample_contrast(bank, anchor, label, anchor_index, cfg, rng)
        expected = _oracle_sample(
            bank, anchor / np.linalg.norm(anchor), label, anchor_index,
            cfg.n_pos_hard, cfg.n_neg_hard,
        )
        if expected is None:
            assert sample is None
            continue
        exp_pos, exp_hard, exp_remaining = expected
        assert sample is not None
        assert sample.positives.tolist() == exp_pos
        assert sample.hard_negatives.tolist() == exp_hard
        rand = sample.random_negatives.tolist()
        assert len(rand) == min(cfg.n_neg_rand, len(exp_remaining))
        assert len(set(rand)) == len(rand)
        assert set(rand) <= exp_remaining
        assert anchor_index not in rand
        checked += 1
    elapsed = time.monotonic() - start
    ok = checked >= ORACLE_BANKS // 2 and elapsed < FAST_BUDGET_S
    _verdict(
        capsys, "2 sampler-oracle-equivalence", ok,
        f"{ORACLE_BANKS} random banks (L<=1000, K<=10), {checked} non-degenerate, "
        f"exact positive/hard-negative match incl. index tie-break; {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 3. bank invariants under randomized updates


def test_3_bank_invariants_and_replay(capsys):
    rng = np.random.default_rng(3030)
    length, dim = 64, 6
    bank = MemoryBank(length, dim, name="fuzz", seed=9)
    log = []
    relabel_rejections = 0
    applied = 0
    while applied < BANK_UPDATE_OPS:
        slot = int(rng.integers(length))
        vec = rng.standard_normal(dim) * float(rng.uniform(0.5, 20.0))
        label = int(rng.integers(4))
        try:
            bank.update(slot, vec, label)
        except BankIntegrityError:
            assert bank.valid[slot] and bank.labels[slot] != label
            relabel_rejections += 1
            continue
        log.append((slot, vec, label))
        applied += 1

    bank.check_integrity()
    norms = np.linalg.norm(bank.features[bank.valid], axis=1)
    max_norm_err = float(np.abs(norms - 1.0).max())

    replay = MemoryBank(length, dim, name="replay", seed=1234)
    for slot, vec, label in log:
        replay.update(slot, vec, label)
    exact = (
        np.array_equal(bank.features, replay.features)
        and np.array_equal(bank.labels, replay.labels)
        and np.array_equal(bank.valid, replay.valid)
    )

    ok = max_norm_err <= 1e-6 and exact and relabel_rejections > 0
    _verdict(
        capsys, "3 bank-invariants", ok,
        f"{applied} updates applied, {relabel_rejections} relabels rejected, max "
        f"unit-norm error {max_norm_err:.1e} <= 1e-6, replay bit-exact: {exact}",
    )


# ---------------------------------------------------------------------------
# 4. analytical loss values


def test_4_analytical_loss_values(capsys):
    errs = []

    # lone perfect positive: the only candidate is the anchor itself
    bank = MemoryBank(4, 4, name="lone", seed=0)
    anchor = np.array([1.0, 0.0, 0.0, 0.0])
    bank.update(0, anchor, 0)
    sample = ContrastSample(
        positives=np.array([0]),
        hard_negatives=np.array([], dtype=np.int64),
        random_negatives=np.array([], dtype=np.int64),
    )
    for tau in TEMPERATURE_GRID:
        loss, skipped = info_nce(Tensor(anchor), sample, bank, ContrastConfig(tau=tau, n_pos_hard=1))
        assert skipped == 0
        errs.append(abs(float(loss.data)))

    # symmetric single positive / single negative at tau=1: both orthogonal
    # to the anchor, so the two exponentials tie and the loss is ln 2
    bank2 = MemoryBank(4, 4, name="pair", seed=0)
    bank2.update(1, np.array([0.0, 1.0, 0.0, 0.0]), 0)
    bank2.update(2, np.array([0.0, 0.0, 1.0, 0.0]), 1)
    sample2 = ContrastSample(
        positives=np.array([1]),
        hard_negatives=np.array([2]),
        random_negatives=np.array([], dtype=np.int64),
    )
    loss2, _ = info_nce(
        Tensor(np.array([1.0, 0.0, 0.0, 0.0])), sample2, bank2,
        ContrastConfig(tau=1.0, n_pos_hard=1),
    )
    errs.append(abs(float(loss2.data) - math.log(2.0)))

    # cross-entropy of uniform logits is ln K
    for k in (2, 4, 7, 10):
        ce = tz.softmax_cross_entropy(Tensor(np.zeros(k)), 0)
        errs.append(abs(float(ce.data) - math.log(k)))

    worst = max(errs)
    ok = worst < ANALYTIC_TOLERANCE
    _verdict(
        capsys, "4 analytical-loss-values", ok,
        f"lone-positive 0, symmetric pair ln 2, uniform CE ln K; worst "
        f"abs error {worst:.1e} < {ANALYTIC_TOLERANCE:.0e}",
    )


# ---------------------------------------------------------------------------
# 5. ablation-path equality


def test_5_ablation_path_equality(capsys):
    spec = SyntheticSpec(joints=4, frames=8, num_spatial=2, num_temporal=2,
                         per_class=4, noise_std=0.1)
    dataset = generate_synthetic(spec, seed=5)
    encoder_cfg = EncoderConfig(joints=4, frames=8, channels=8, kernel_size=3)
    base = dict(epochs=3, batch_size=4, learning_rate=0.05, seed=17,
                embed_dim=8, reduction=2, n_pos_hard=1, n_neg_hard=2,
                n_neg_rand=2, eval_every=0)
    disabled = fit(dataset, encoder_cfg, TrainConfig(framework_enabled=False, **base))
    zero_lambda = fit(dataset, encoder_cfg, TrainConfig(
        framework_enabled=True, lambda_spatial=0.0, lambda_temporal=0.0, **base))

    params_equal = all(
        np.array_equal(disabled.model.params[k].data, zero_lambda.model.params[k].data)
        for k in disabled.model.params
    )
    losses_equal = [
        (a.epoch, a.step, a.total) for a in disabled.history
    ] == [
        (b.epoch, b.step, b.total) for b in zero_lambda.history
    ]

    instrumentation.reset()
    logits_disabled = np.stack([predict_logits(disabled.model, seq.coords) for seq in dataset])
    logits_zero = np.stack([predict_logits(zero_lambda.model, seq.coords) for seq in dataset])
    counters = {name: instrumentation.count(name)
                for name in ("bank_reads", "bank_writes", "decouple_calls")}
    logits_equal = np.array_equal(logits_disabled, logits_zero)

    ok = params_equal and losses_equal and logits_equal and not any(counters.values())
    _verdict(
        capsys, "5 ablation-path-equality", ok,
        f"disabled vs zero-weight trajectories bit-identical: {params_equal and losses_equal}; "
        f"eval logits bit-identical: {logits_equal}; eval-path counters {counters}",
    )


# ---------------------------------------------------------------------------
# 6 & 8. decoupling separation and the temperature grid
# (one study per temperature, shared between the two criteria)

_STUDIES: dict[float, object] = {}


def _decoupling_study(tau: float):
    if tau not in _STUDIES:
        _STUDIES[tau] = run_decoupling_study(replace(DecouplingStudyConfig(), tau=tau))
    return _STUDIES[tau]


def test_6_decoupling_separation(capsys):
    start = time.monotonic()
    result = _decoupling_study(0.8)
    elapsed = time.monotonic() - start
    ok = result.passes >= 4 and elapsed < DECOUPLING_BUDGET_S
    margins = " ".join(
        f"s{r.seed}:{r.spatial_by_spatial:+.2f}/{r.spatial_by_temporal:+.2f},"
        f"{r.temporal_by_temporal:+.2f}/{r.temporal_by_spatial:+.2f}"
        for r in result.per_seed
    )
    _verdict(
        capsys, "6 decoupling-separation", ok,
        f"{result.passes}/5 seeds with each head's own-factor silhouette ahead "
        f"(own/other per head: {margins}); {elapsed:.0f}s",
    )


def test_8_temperature_grid(capsys):
    start = time.monotonic()
    passes = {}
    finite = True
    for tau in TEMPERATURE_GRID:
        result = _decoupling_study(tau)
        passes[tau] = result.passes
        for r in result.per_seed:
            values = (r.accuracy, r.spatial_by_spatial, r.spatial_by_temporal,
                      r.temporal_by_temporal, r.temporal_by_spatial)
            finite = finite and all(math.isfinite(v) for v in values)
    elapsed = time.monotonic() - start
    ok = finite and any(count >= 4 for count in passes.values())
    _verdict(
        capsys, "8 temperature-grid", ok,
        f"tau->decoupled-seeds {passes}, all runs finite: {finite}; "
        f"separation holds for {sum(c >= 4 for c in passes.values())}/3 temperatures; "
        f"{elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# 7. improvement direction on the confusable set


def test_7_improvement_direction(capsys):
    start = time.monotonic()
    result = run_improvement_study(ImprovementStudyConfig())
    elapsed = time.monotonic() - start
    distribution = " ".join(
        f"s{r.seed}:{r.baseline_accuracy:.2f}->{r.framework_accuracy:.2f}"
        for r in result.per_seed
    )
    calibrated = 0.6 <= result.mean_baseline <= 0.9
    ok = calibrated and result.mean_difference > 0 and elapsed < IMPROVEMENT_BUDGET_S
    _verdict(
        capsys, "7 improvement-direction", ok,
        f"mean top-1 baseline {result.mean_baseline:.4f} (in [0.6, 0.9]: {calibrated}) "
        f"vs framework {result.mean_framework:.4f}, mean difference "
        f"{result.mean_difference:+.4f} > 0; per-seed {distribution}; {elapsed:.0f}s",
    )
