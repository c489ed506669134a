"""Training loop: cross-entropy plus the two contrastive terms.

The per-step objective is

    total = lambda_ce * L_ce + lambda_spatial * L_spa + lambda_temporal * L_tem

with all weights defaulting to 1 (the plain three-term sum).  Non-unit
weights are an extension for ablations.  Terms whose weight is exactly
zero are still evaluated for logging but are left out of the backward
graph entirely, so a zero-weighted run takes bit-identical optimizer
steps to a run with the term disabled outright.

Batch semantics: every instance in a batch mines the banks as they
stood at the start of the step; the fresh embeddings are written back
only after the optimizer update.  One backward pass covers the whole
weighted sum.
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tz
from .checkpoint import load_checkpoint, save_checkpoint
from .contrast import ContrastConfig, MemoryBank, make_banks, sample_and_loss
from .data import SkeletonDataset
from .decoupling import DecouplerParams, EmbeddingPair, decouple, init_decoupler
from .encoder import EncoderConfig, classify, encode, init_params, test_forward
from .errors import ConfigError, NumericError
from .metrics import per_class_accuracy, silhouette_score, top1_accuracy
from .rng import seeded_rng
from .tensor import Tensor

METRICS_HEADER = [
    "kind",
    "epoch",
    "step",
    "loss_ce",
    "loss_spatial",
    "loss_temporal",
    "loss_total",
    "skipped_positives",
    "accuracy",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    tau: float = 0.8
    lambda_ce: float = 1.0
    lambda_spatial: float = 1.0
    lambda_temporal: float = 1.0
    framework_enabled: bool = True
    loss_form: str = "exponentiated"
    lr_decay_epochs: int = 0  # 0 disables the step schedule
    lr_decay_gamma: float = 0.1
    n_pos_hard: int = 128
    n_neg_hard: int = 512
    n_neg_rand: int = 512
    embed_dim: int = 256
    reduction: int = 8
    checkpoint_every: int = 0  # epochs between periodic checkpoints; 0 = final only
    eval_every: int = 1  # epochs between eval rows; 0 disables

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        for name in ("lambda_ce", "lambda_spatial", "lambda_temporal"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.lr_decay_epochs < 0:
            raise ConfigError(f"lr_decay_epochs must be non-negative, got {self.lr_decay_epochs}")
        if not self.lr_decay_gamma > 0:
            raise ConfigError(f"lr_decay_gamma must be positive, got {self.lr_decay_gamma}")
        if self.checkpoint_every < 0 or self.eval_every < 0:
            raise ConfigError("checkpoint_every and eval_every must be non-negative")
        # temperature/count/form validation lives in ContrastConfig
        self.contrast_config()

    def contrast_config(self) -> ContrastConfig:
        return ContrastConfig(
            tau=self.tau,
            n_pos_hard=self.n_pos_hard,
            n_neg_hard=self.n_neg_hard,
            n_neg_rand=self.n_neg_rand,
            loss_form=self.loss_form,
        )

    def lr_at(self, epoch: int) -> float:
        if self.lr_decay_epochs == 0:
            return self.learning_rate
        return self.learning_rate * self.lr_decay_gamma ** (epoch // self.lr_decay_epochs)


@dataclass
class Model:
    encoder_cfg: EncoderConfig
    num_classes: int
    params: dict  # encoder + classifier head tensors
    decoupler: DecouplerParams | None

    def named_tensors(self) -> dict:
        named = dict(self.params)
        if self.decoupler is not None:
            named.update({f"decouple.{k}": v for k, v in self.decoupler.named().items()})
        return named

    def embed(self, coords: np.ndarray) -> EmbeddingPair:
        if self.decoupler is None:
            raise ConfigError("model has no decoupling branches (framework disabled)")
        return decouple(encode(self.params, self.encoder_cfg, coords), self.decoupler)


@dataclass
class StepRecord:
    epoch: int
    step: int
    loss_ce: float
    loss_spatial: float
    loss_temporal: float
    total: float
    skipped_positives: int
    wall_time: float  # kept in memory only; excluded from the metrics CSV


@dataclass
class EvalReport:
    accuracy: float
    per_class: np.ndarray
    count: int


@dataclass
class EmbeddingReport:
    spatial: np.ndarray  # (L, dim)
    temporal: np.ndarray  # (L, dim)
    labels: np.ndarray
    silhouette_spatial: float
    silhouette_temporal: float


@dataclass
class FitResult:
    model: Model
    banks: dict
    history: list = field(default_factory=list)
    eval_history: list = field(default_factory=list)
    metrics_path: str | None = None
    checkpoint_path: str | None = None


class SGD:
    """SGD with momentum and decoupled-from-nothing classic weight decay.

    v <- momentum * v + grad + weight_decay * p;  p <- p - lr * v.
    Parameters whose grad is None (absent from the backward graph) are
    left untouched.
    """

    def __init__(self, named: dict, momentum: float, weight_decay: float):
        self.named = named
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(t.data) for k, t in named.items()}

    def zero_grad(self) -> None:
        for t in self.named.values():
            t.zero_grad()

    def step(self, lr: float) -> None:
        for name, t in self.named.items():
            if t.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += t.grad
            if self.weight_decay:
                v += self.weight_decay * t.data
            t.data -= lr * v


def build_model(encoder_cfg: EncoderConfig, num_classes: int, cfg: TrainConfig) -> Model:
    params = init_params(encoder_cfg, num_classes, seed=cfg.seed)
    decoupler = None
    if cfg.framework_enabled:
        decoupler = init_decoupler(
            joints=encoder_cfg.joints,
            out_frames=encoder_cfg.out_frames,
            channels=encoder_cfg.channels,
            reduction=cfg.reduction,
            dim=cfg.embed_dim,
            seed=cfg.seed,
        )
    return Model(encoder_cfg=encoder_cfg, num_classes=num_classes, params=params, decoupler=decoupler)


def _sum_of_scalars(scalars: list) -> Tensor:
    if len(scalars) == 1:
        return scalars[0]
    return tz.sum_all(tz.concat_flatten(scalars))


def train_step(
    batch: list,
    model: Model,
    banks: dict,
    cfg: TrainConfig,
    optimizer: SGD,
    lr: float,
    epoch: int = 0,
    step: int = 0,
) -> StepRecord:
    t0 = time.perf_counter()
    ccfg = cfg.contrast_config()
    ce_terms: list = []
    nce_terms = {"spatial": [], "temporal": []}
    nce_values = {"spatial": 0.0, "temporal": 0.0}
    skipped = 0
    pending = []

    for seq in batch:
        feature_map = encode(model.params, model.encoder_cfg, seq.coords)
        logits = classify(model.params, feature_map)
        ce_terms.append(tz.softmax_cross_entropy(logits, seq.label))
        if cfg.framework_enabled:
            pair = decouple(feature_map, model.decoupler)
            for name, embedding in (("spatial", pair.spatial), ("temporal", pair.temporal)):
                loss, n_skip = sample_and_loss(banks[name], embedding, seq.label, seq.index, ccfg)
                skipped += n_skip
                if loss is None:
                    skipped += 1
                else:
                    nce_terms[name].append(loss)
                    nce_values[name] += loss.item()
                pending.append((banks[name], seq.index, embedding.data.copy(), seq.label))

    n = len(batch)
    ce_mean = tz.scalar_mul(_sum_of_scalars(ce_terms), 1.0 / n)
    loss_ce = ce_mean.item()
    loss_spa = nce_values["spatial"] / n
    loss_tem = nce_values["temporal"] / n
    total = cfg.lambda_ce * loss_ce + cfg.lambda_spatial * loss_spa + cfg.lambda_temporal * loss_tem
    if tz.is_checked():
        for name, value in (("cross-entropy", loss_ce), ("spatial contrast", loss_spa),
                            ("temporal contrast", loss_tem), ("total", total)):
            if not math.isfinite(value):
                raise NumericError(f"non-finite {name} loss at epoch {epoch} step {step}")

    def weighted(acc, terms, weight):
        """Add a weighted mean term to the graph; zero weight stays out entirely."""
        if weight == 0.0 or not terms:
            return acc
        mean = tz.scalar_mul(_sum_of_scalars(terms), 1.0 / n)
        term = mean if weight == 1.0 else tz.scalar_mul(mean, weight)
        return term if acc is None else tz.add(acc, term)

    graph = weighted(None, ce_terms, cfg.lambda_ce)
    graph = weighted(graph, nce_terms["spatial"], cfg.lambda_spatial)
    graph = weighted(graph, nce_terms["temporal"], cfg.lambda_temporal)
    if graph is not None and graph.requires_grad:
        optimizer.zero_grad()
        graph.backward()
        optimizer.step(lr)
    for bank, index, embedding, label in pending:
        bank.update(index, embedding, label)

    return StepRecord(
        epoch=epoch,
        step=step,
        loss_ce=loss_ce,
        loss_spatial=loss_spa,
        loss_temporal=loss_tem,
        total=total,
        skipped_positives=skipped,
        wall_time=time.perf_counter() - t0,
    )


def evaluate(model: Model, dataset: SkeletonDataset) -> EvalReport:
    """Top-1 accuracy over the inference path (encoder + head only)."""
    predictions = np.array(
        [test_forward(model.params, model.encoder_cfg, seq.coords) for seq in dataset], dtype=np.int64
    )
    labels = dataset.labels()
    return EvalReport(
        accuracy=top1_accuracy(predictions, labels),
        per_class=per_class_accuracy(predictions, labels, model.num_classes),
        count=len(dataset),
    )


def predict_logits(model: Model, coords: np.ndarray) -> np.ndarray:
    """Detached logits for one sequence; same path evaluate() scores."""
    frozen = {k: Tensor(t.data) for k, t in model.params.items()}
    return classify(frozen, encode(frozen, model.encoder_cfg, coords)).data.copy()


def embedding_report(model: Model, dataset: SkeletonDataset) -> EmbeddingReport:
    """Analysis path: re-run the decoupling branches with final weights."""
    if model.decoupler is None:
        raise ConfigError("embedding report needs the decoupling branches (framework disabled)")
    frozen_params = {k: Tensor(t.data) for k, t in model.params.items()}
    frozen_dec = DecouplerParams(
        spatial_reduce=Tensor(model.decoupler.spatial_reduce.data),
        temporal_reduce=Tensor(model.decoupler.temporal_reduce.data),
        spatial_embed=Tensor(model.decoupler.spatial_embed.data),
        temporal_embed=Tensor(model.decoupler.temporal_embed.data),
        reduction=model.decoupler.reduction,
        dim=model.decoupler.dim,
    )
    spatial = np.zeros((len(dataset), frozen_dec.dim))
    temporal = np.zeros_like(spatial)
    for row, seq in enumerate(dataset):
        pair = decouple(encode(frozen_params, model.encoder_cfg, seq.coords), frozen_dec)
        spatial[row] = pair.spatial.data
        temporal[row] = pair.temporal.data
    labels = dataset.labels()
    return EmbeddingReport(
        spatial=spatial,
        temporal=temporal,
        labels=labels,
        silhouette_spatial=silhouette_score(spatial, labels),
        silhouette_temporal=silhouette_score(temporal, labels),
    )


def export_embeddings_tsv(report: EmbeddingReport, path: str) -> None:
    dim = report.spatial.shape[1]
    with open(path, "w", encoding="utf-8") as f:
        header = ["index", "label"]
        header += [f"s{i}" for i in range(dim)] + [f"t{i}" for i in range(dim)]
        f.write("\t".join(header) + "\n")
        for i in range(report.spatial.shape[0]):
            values = [str(i), str(int(report.labels[i]))]
            values += [f"{v:.8g}" for v in report.spatial[i]]
            values += [f"{v:.8g}" for v in report.temporal[i]]
            f.write("\t".join(values) + "\n")


# ---------------------------------------------------------------------------
# checkpoint plumbing


def model_meta(model: Model, cfg: TrainConfig | None = None, **extra) -> dict:
    meta = {
        "encoder": {**asdict(model.encoder_cfg), "hidden": list(model.encoder_cfg.hidden)},
        "num_classes": model.num_classes,
        "embed_dim": model.decoupler.dim if model.decoupler else None,
        "reduction": model.decoupler.reduction if model.decoupler else None,
    }
    if cfg is not None:
        meta["train"] = asdict(cfg)
    meta.update(extra)
    return meta


def save_model(path: str, model: Model, meta: dict) -> None:
    save_checkpoint(path, model.named_tensors(), meta)


def load_model(path: str) -> tuple[Model, dict]:
    arrays, meta = load_checkpoint(path)
    encoder_cfg = EncoderConfig(**{**meta["encoder"], "hidden": tuple(meta["encoder"]["hidden"])})
    params = {
        k: Tensor(v, requires_grad=True) for k, v in arrays.items() if not k.startswith("decouple.")
    }
    decoupler = None
    if any(k.startswith("decouple.") for k in arrays):
        decoupler = DecouplerParams(
            spatial_reduce=Tensor(arrays["decouple.spatial_reduce"], requires_grad=True),
            temporal_reduce=Tensor(arrays["decouple.temporal_reduce"], requires_grad=True),
            spatial_embed=Tensor(arrays["decouple.spatial_embed"], requires_grad=True),
            temporal_embed=Tensor(arrays["decouple.temporal_embed"], requires_grad=True),
            reduction=int(meta["reduction"]),
            dim=int(meta["embed_dim"]),
        )
    model = Model(
        encoder_cfg=encoder_cfg,
        num_classes=int(meta["num_classes"]),
        params=params,
        decoupler=decoupler,
    )
    return model, meta


# ---------------------------------------------------------------------------
# fit


def _metrics_row(record: StepRecord) -> list:
    return [
        "step",
        record.epoch,
        record.step,
        f"{record.loss_ce:.10g}",
        f"{record.loss_spatial:.10g}",
        f"{record.loss_temporal:.10g}",
        f"{record.total:.10g}",
        record.skipped_positives,
        "",
    ]


def write_metrics_csv(path: str, rows: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        writer.writerows(rows)


def fit(
    dataset: SkeletonDataset,
    encoder_cfg: EncoderConfig,
    cfg: TrainConfig,
    out_dir: str | None = None,
    eval_dataset: SkeletonDataset | None = None,
    stem: str = "model",
) -> FitResult:
    if encoder_cfg.joints != dataset.joints or encoder_cfg.frames != dataset.frames:
        raise ConfigError(
            f"encoder expects (joints={encoder_cfg.joints}, frames={encoder_cfg.frames}) but the "
            f"dataset provides (joints={dataset.joints}, frames={dataset.frames})"
        )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    model = build_model(encoder_cfg, dataset.num_classes, cfg)
    banks = make_banks(len(dataset), cfg.embed_dim, cfg.seed) if cfg.framework_enabled else {}
    optimizer = SGD(model.named_tensors(), cfg.momentum, cfg.weight_decay)
    shuffle_rng = seeded_rng(cfg.seed, "shuffle")
    eval_on = eval_dataset if eval_dataset is not None else dataset

    history: list = []
    eval_history: list = []
    rows: list = []
    step = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = shuffle_rng.permutation(len(dataset))
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[int(i)] for i in order[start : start + cfg.batch_size]]
            record = train_step(batch, model, banks, cfg, optimizer, lr, epoch=epoch, step=step)
            history.append(record)
            rows.append(_metrics_row(record))
            step += 1
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            report = evaluate(model, eval_on)
            eval_history.append((epoch, report.accuracy))
            rows.append(["eval", epoch, "", "", "", "", "", "", f"{report.accuracy:.10g}"])
        if (
            out_dir
            and cfg.checkpoint_every
            and (epoch + 1) % cfg.checkpoint_every == 0
            and epoch + 1 < cfg.epochs
        ):
            save_model(
                os.path.join(out_dir, f"{stem}-epoch{epoch + 1:03d}.ckpt"),
                model,
                model_meta(model, cfg, epoch=epoch + 1, step=step),
            )

    metrics_path = checkpoint_path = None
    if out_dir is not None:
        metrics_path = os.path.join(out_dir, f"{stem}-metrics.csv")
        write_metrics_csv(metrics_path, rows)
        checkpoint_path = os.path.join(out_dir, f"{stem}.ckpt")
        save_model(checkpoint_path, model, model_meta(model, cfg, epoch=cfg.epochs, step=step))
    return FitResult(
        model=model,
        banks=banks,
        history=history,
        eval_history=eval_history,
        metrics_path=metrics_path,
        checkpoint_path=checkpoint_path,
    )
