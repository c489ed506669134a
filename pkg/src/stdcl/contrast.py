"""Memory banks and supervised contrastive losses.

Each embedding branch owns one bank with a fixed slot per dataset
sequence.  Rows hold detached, L2-normalized embeddings; a slot's label
is set on first write and immutable afterwards.  Invalid (never
written) slots hold zeros and are excluded from sampling.

Sampling mines the hardest positives (lowest cosine similarity to the
anchor among same-label rows) and hardest negatives (highest similarity
among different-label rows), then pads the negatives with uniform
random draws from the remaining different-label rows.  Similarity ties
break toward the lower slot index so sampling is fully deterministic
given the bank state and RNG stream.

Two loss forms are provided:

* ``exponentiated`` (default): standard InfoNCE with temperature --
  per positive ``log(exp(sp/tau) + sum_n exp(sn/tau)) - sp/tau``,
  computed with a constant max-shift for stability and summed over
  the positives (each positive gets its own denominator).
* ``literal``: the ratio form without exponentiation --
  ``-log((sp/tau) / (sp/tau + sum_n sn/tau))``, likewise summed.  Raw
  cosine terms can be non-positive, so the denominator is clamped from
  below and positives with a non-positive numerator are skipped and
  counted.

Gradients flow into the anchor embedding only; bank rows are constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import instrumentation
from . import tensor as tz
from .errors import BankIntegrityError, ConfigError, NumericError
from .rng import seeded_rng
from .tensor import NORM_EPSILON, Tensor

LITERAL_CLAMP = 1e-8
LOSS_FORMS = ("exponentiated", "literal")


@dataclass(frozen=True)
class ContrastConfig:
    tau: float = 0.8
    n_pos_hard: int = 128
    n_neg_hard: int = 512
    n_neg_rand: int = 512
    loss_form: str = "exponentiated"

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if self.n_pos_hard < 1:
            raise ConfigError(f"need at least one hard positive, got {self.n_pos_hard}")
        if self.n_neg_hard < 0 or self.n_neg_rand < 0:
            raise ConfigError("negative-sample counts must be non-negative")
        if self.n_neg_hard + self.n_neg_rand < 1:
            raise ConfigError("need at least one negative overall")
        if self.loss_form not in LOSS_FORMS:
            raise ConfigError(f"loss_form must be one of {LOSS_FORMS}, got {self.loss_form!r}")


class MemoryBank:
    """Fixed-size embedding store with one slot per dataset sequence."""

    def __init__(self, length: int, dim: int, name: str, seed: int):
        if length < 1:
            raise ConfigError(f"bank length must be positive, got {length}")
        if dim < 1:
            raise ConfigError(f"bank dim must be positive, got {dim}")
        self.features = np.zeros((length, dim))
        self.labels = np.full(length, -1, dtype=np.int64)
        self.valid = np.zeros(length, dtype=bool)
        self.name = name
        self.rng = seeded_rng(seed, f"bank/{name}")

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def fill_fraction(self) -> float:
        return float(self.valid.mean())

    def update(self, index: int, embedding, label: int) -> None:
        """Write a detached, normalized embedding into a slot."""
        instrumentation.bump("bank_writes")
        if not 0 <= index < self.length:
            raise BankIntegrityError(f"bank {self.name!r}: slot {index} outside [0, {self.length})")
        if label < 0:
            raise BankIntegrityError(f"bank {self.name!r}: label must be non-negative, got {label}")
        if self.valid[index] and self.labels[index] != label:
            raise BankIntegrityError(
                f"bank {self.name!r}: slot {index} already labeled {self.labels[index]}, "
                f"refusing relabel to {label}"
            )
        vec = np.asarray(embedding.data if isinstance(embedding, Tensor) else embedding, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise BankIntegrityError(
                f"bank {self.name!r}: embedding shape {vec.shape} != ({self.dim},)"
            )
        if not np.isfinite(vec).all():
            raise NumericError(f"bank {self.name!r}: non-finite embedding for slot {index}")
        norm = float(np.linalg.norm(vec))
        if norm < NORM_EPSILON:
            raise NumericError(f"bank {self.name!r}: cannot normalize near-zero embedding (slot {index})")
        self.features[index] = vec / norm
        self.labels[index] = label
        self.valid[index] = True

    def check_integrity(self) -> None:
        valid_rows = self.features[self.valid]
        if valid_rows.size:
            norms = np.linalg.norm(valid_rows, axis=1)
            off = np.abs(norms - 1.0).max()
            if off > 1e-6:
                raise BankIntegrityError(f"bank {self.name!r}: valid row norm off unity by {off:.2e}")
        if (self.labels[self.valid] < 0).any():
            raise BankIntegrityError(f"bank {self.name!r}: valid slot with unset label")
        invalid = ~self.valid
        if self.features[invalid].any():
            raise BankIntegrityError(f"bank {self.name!r}: invalid slot holds non-zero features")
        if (self.labels[invalid] != -1).any():
            raise BankIntegrityError(f"bank {self.name!r}: invalid slot holds a label")


@dataclass
class ContrastSample:
    positives: np.ndarray  # bank slots, hardest (lowest similarity) first
    hard_negatives: np.ndarray  # highest similarity first
    random_negatives: np.ndarray  # uniform draw from the remaining negatives

    @property
    def negatives(self) -> np.ndarray:
        return np.concatenate([self.hard_negatives, self.random_negatives])


def sample_contrast(
    bank: MemoryBank,
    anchor_embedding: np.ndarray,
    label: int,
    anchor_index: int,
    cfg: ContrastConfig,
    rng,
) -> ContrastSample | None:
    """Mine a contrastive sample from the bank, or None if either side is empty."""
    instrumentation.bump("bank_reads")
    anchor = np.asarray(anchor_embedding, dtype=np.float64)
    norm = np.linalg.norm(anchor)
    if not np.isfinite(anchor).all() or norm < NORM_EPSILON:
        raise NumericError("contrast sampling: anchor embedding is degenerate")
    unit = anchor / norm

    candidates = np.flatnonzero(bank.valid)
    candidates = candidates[candidates != anchor_index]
    if candidates.size == 0:
        return None
    labels = bank.labels[candidates]
    pos_pool = candidates[labels == label]
    neg_pool = candidates[labels != label]
    if pos_pool.size == 0 or neg_pool.size == 0:
        return None

    pos_sims = bank.features[pos_pool] @ unit
    # lowest similarity first; ties toward the lower slot index
    pos_order = np.lexsort((pos_pool, pos_sims))
    pos_indices = pos_pool[pos_order[: cfg.n_pos_hard]]

    neg_sims = bank.features[neg_pool] @ unit
    neg_order = np.lexsort((neg_pool, -neg_sims))
    hard_neg = neg_pool[neg_order[: cfg.n_neg_hard]]
    remaining = neg_pool[neg_order[cfg.n_neg_hard :]]
    n_rand = min(cfg.n_neg_rand, remaining.size)
    rand_neg = rng.choice(remaining, size=n_rand, replace=False) if n_rand else remaining[:0]
    return ContrastSample(
        positives=pos_indices.astype(np.int64),
        hard_negatives=hard_neg.astype(np.int64),
        random_negatives=np.asarray(rand_neg, dtype=np.int64),
    )


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """u.v / (|u||v|) for 1-D tensors; differentiable through both arguments."""
    return tz.sum_all(tz.mul(tz.l2_normalize(u), tz.l2_normalize(v)))


def _similarities(anchor: Tensor, rows: np.ndarray) -> Tensor:
    """Cosine similarities between an anchor and unit bank rows; grads reach the anchor only."""
    unit = tz.l2_normalize(anchor)
    column = tz.reshape(unit, (anchor.shape[0], 1))
    return tz.reshape(tz.matmul(Tensor(rows), column), (rows.shape[0],))


def info_nce(
    anchor: Tensor, sample: ContrastSample, bank: MemoryBank, cfg: ContrastConfig
) -> tuple[Tensor, int]:
    """Contrastive loss for one anchor. Returns (loss, skipped_positive_terms)."""
    if sample.positives.size == 0:
        raise ConfigError("info_nce requires at least one positive (caller should skip)")
    negatives = sample.negatives
    pos_scaled = tz.scalar_mul(_similarities(anchor, bank.features[sample.positives]), 1.0 / cfg.tau)
    has_negatives = negatives.size > 0

    if cfg.loss_form == "exponentiated":
        if has_negatives:
            neg_scaled = tz.scalar_mul(_similarities(anchor, bank.features[negatives]), 1.0 / cfg.tau)
            shift = float(max(pos_scaled.data.max(), neg_scaled.data.max()))
            exp_neg = tz.sum_all(tz.exp(tz.add_scalar(neg_scaled, -shift)))
            denom = tz.add_scalar(tz.exp(tz.add_scalar(pos_scaled, -shift)), exp_neg)
        else:
            shift = float(pos_scaled.data.max())
            denom = tz.exp(tz.add_scalar(pos_scaled, -shift))
        log_denom = tz.add_scalar(tz.log(denom), shift)
        return tz.sum_all(tz.sub(log_denom, pos_scaled)), 0

    # literal ratio form: no exponentials, so guard against non-positive terms
    if has_negatives:
        neg_scaled = tz.scalar_mul(_similarities(anchor, bank.features[negatives]), 1.0 / cfg.tau)
        denom = tz.add_scalar(pos_scaled, tz.sum_all(neg_scaled))
    else:
        denom = pos_scaled
    clamped = tz.add_scalar(tz.relu(tz.add_scalar(denom, -LITERAL_CLAMP)), LITERAL_CLAMP)
    keep = [i for i, v in enumerate(pos_scaled.data) if v > 0.0]
    skipped = pos_scaled.shape[0] - len(keep)
    if not keep:
        return Tensor(0.0), skipped
    ratio_log = tz.sub(tz.log(tz.gather1d(pos_scaled, keep)), tz.log(tz.gather1d(clamped, keep)))
    return tz.scalar_mul(tz.sum_all(ratio_log), -1.0), skipped


def sample_and_loss(
    bank: MemoryBank,
    embedding: Tensor,
    label: int,
    index: int,
    cfg: ContrastConfig,
) -> tuple[Tensor | None, int]:
    """Mine against the current bank state and build the loss; no bank write.

    Callers decide when to write the fresh embedding back (immediately
    for single-instance steps, at batch end for batched steps so every
    instance in the batch samples against the step-start state).
    """
    sample = sample_contrast(bank, embedding.data, label, index, cfg, bank.rng)
    if sample is None:
        return None, 0
    return info_nce(embedding, sample, bank, cfg)


def contrast_step(
    pair,
    banks: dict,
    label: int,
    index: int,
    cfg: ContrastConfig,
) -> tuple[Tensor, Tensor, int]:
    """Single-instance contrastive step against both banks.

    Samples from each bank first (so the anchor never sees its own
    fresh write), computes both losses, then writes the new embeddings.
    An empty sample contributes a constant zero loss.  Returns
    (spatial_loss, temporal_loss, skipped_positive_count).
    """
    skipped = 0
    losses = {}
    embeddings = {"spatial": pair.spatial, "temporal": pair.temporal}
    for name, embedding in embeddings.items():
        loss, n_skip = sample_and_loss(banks[name], embedding, label, index, cfg)
        if loss is None:
            loss, n_skip = Tensor(0.0), n_skip + 1
        losses[name] = loss
        skipped += n_skip
    for name, embedding in embeddings.items():
        banks[name].update(index, embedding, label)
    return losses["spatial"], losses["temporal"], skipped


def make_banks(length: int, dim: int, seed: int) -> dict[str, MemoryBank]:
    return {
        "spatial": MemoryBank(length, dim, "spatial", seed),
        "temporal": MemoryBank(length, dim, "temporal", seed),
    }


def export_bank_tsv(bank: MemoryBank, path: str) -> None:
    """One row per slot: index, label, valid flag, then the feature vector."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("index\tlabel\tvalid\t" + "\t".join(f"f{i}" for i in range(bank.dim)) + "\n")
        for i in range(bank.length):
            feats = "\t".join(f"{v:.8g}" for v in bank.features[i])
            f.write(f"{i}\t{bank.labels[i]}\t{int(bank.valid[i])}\t{feats}\n")


def load_bank_tsv(path: str, name: str = "loaded", seed: int = 0) -> MemoryBank:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        if header[:3] != ["index", "label", "valid"]:
            raise BankIntegrityError(f"{path}: unexpected bank header {header[:3]}")
        dim = len(header) - 3
        rows = [line.rstrip("\n").split("\t") for line in f if line.strip()]
    if not rows or dim < 1:
        raise BankIntegrityError(f"{path}: empty bank export")
    bank = MemoryBank(length=len(rows), dim=dim, name=name, seed=seed)
    for row in rows:
        i = int(row[0])
        if not 0 <= i < bank.length:
            raise BankIntegrityError(f"{path}: slot {i} outside [0, {bank.length})")
        if int(row[2]):
            bank.features[i] = [float(v) for v in row[3:]]
            bank.labels[i] = int(row[1])
            bank.valid[i] = True
    bank.check_integrity()
    return bank
