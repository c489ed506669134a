"""Central finite-difference gradient checking.

The checker is the independent oracle for every backward rule in the
engine: it re-evaluates the forward pass at perturbed inputs and never
consults the tape.  All checks force 64-bit precision regardless of the
process-wide setting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .errors import NumericError
from .rng import seeded_rng
from .tensor import Tensor

DEFAULT_STEP = 1e-5
OP_TOLERANCE = 1e-4
PIPELINE_TOLERANCE = 1e-3


@dataclass
class GradCheckResult:
    name: str
    trials: int
    max_rel_err: float
    tolerance: float
    worst_param: str = ""
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        line = f"{status}  {self.name:<24} max rel err {self.max_rel_err:.3e} (tol {self.tolerance:.0e}, {self.trials} trials)"
        if not self.passed and self.worst_param:
            line += f" worst block: {self.worst_param}"
        return line


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def analytic_gradients(fn, params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    out = fn(tensors)
    out.backward()
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}


def finite_difference_gradients(
    fn, params: dict[str, np.ndarray], h: float = DEFAULT_STEP
) -> dict[str, np.ndarray]:
    """Central differences of fn w.r.t. every element of every parameter."""

    def evaluate(values: dict[str, np.ndarray]) -> float:
        return fn({k: Tensor(v) for k, v in values.items()}).item()

    grads = {}
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    for name in params:
        flat = work[name].reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = evaluate(work)
            flat[i] = original - h
            down = evaluate(work)
            flat[i] = original
            g[i] = (up - down) / (2.0 * h)
        grads[name] = g.reshape(work[name].shape)
    return grads


def compare_gradients(fn, params: dict[str, np.ndarray], h: float = DEFAULT_STEP) -> dict[str, float]:
    """Per-parameter relative error between analytic and finite-difference grads."""
    with tz.using_precision("float64"):
        analytic = analytic_gradients(fn, params)
        numeric = finite_difference_gradients(fn, params, h=h)
    return {k: relative_error(analytic[k], numeric[k]) for k in params}


# ---------------------------------------------------------------------------
# op registry: each builder returns (params, scalar_fn)


def _projector(rng, shape):
    r = Tensor(rng.standard_normal(shape))

    def project(out: Tensor) -> Tensor:
        return tz.sum_all(tz.mul(out, r))

    return project


def _case_matmul(rng):
    params = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((4, 2))}
    project = _projector(rng, (3, 2))
    return params, lambda t: project(tz.matmul(t["a"], t["b"]))


def _case_add(rng):
    params = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((3, 4))}
    project = _projector(rng, (3, 4))
    return params, lambda t: project(tz.add(t["a"], t["b"]))


def _case_sub(rng):
    params = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((3, 4))}
    project = _projector(rng, (3, 4))
    return params, lambda t: project(tz.sub(t["a"], t["b"]))


def _case_mul(rng):
    params = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((3, 4))}
    project = _projector(rng, (3, 4))
    return params, lambda t: project(tz.mul(t["a"], t["b"]))


def _case_scalar_mul(rng):
    params = {"x": rng.standard_normal((3, 4))}
    c = float(rng.uniform(-2, 2))
    project = _projector(rng, (3, 4))
    return params, lambda t: project(tz.scalar_mul(t["x"], c))


def _case_add_scalar(rng):
    params = {"x": rng.standard_normal((3, 4)), "s": rng.standard_normal(())}
    project = _projector(rng, (3, 4))
    return params, lambda t: project(tz.add_scalar(t["x"], t["s"]))


def _case_exp(rng):
    params = {"x": rng.uniform(-1, 1, (3, 4))}
    project = _projector(rng, (3, 4))
    return params, lambda t: project(tz.exp(t["x"]))


def _case_log(rng):
    params = {"x": rng.uniform(0.5, 2.0, (3, 4))}
    project = _projector(rng, (3, 4))
    return params, lambda t: project(tz.log(t["x"]))


def _case_relu(rng):
    # keep inputs away from the kink so central differences stay valid
    magnitude = rng.uniform(0.1, 1.0, (3, 4))
    sign = rng.choice([-1.0, 1.0], (3, 4))
    params = {"x": magnitude * sign}
    project = _projector(rng, (3, 4))
    return params, lambda t: project(tz.relu(t["x"]))


def _case_reshape(rng):
    params = {"x": rng.standard_normal((3, 4))}
    project = _projector(rng, (2, 6))
    return params, lambda t: project(tz.reshape(t["x"], (2, 6)))


def _case_concat_flatten(rng):
    params = {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal((4,))}
    project = _projector(rng, (10,))
    return params, lambda t: project(tz.concat_flatten([t["a"], t["b"]]))


def _case_gather1d(rng):
    params = {"x": rng.standard_normal((10,))}
    idx = rng.integers(0, 10, size=6).tolist()  # repeats exercise scatter-add
    project = _projector(rng, (6,))
    return params, lambda t: project(tz.gather1d(t["x"], idx))


def _case_sum_over_axes(rng):
    params = {"x": rng.standard_normal((2, 3, 4))}
    axes = (0, 2)
    project = _projector(rng, (3,))
    return params, lambda t: project(tz.sum_over_axes(t["x"], axes))


def _case_mean_over_axes(rng):
    params = {"x": rng.standard_normal((2, 3, 4))}
    axes = (0, 2)
    project = _projector(rng, (3,))
    return params, lambda t: project(tz.mean_over_axes(t["x"], axes))


def _case_softmax_cross_entropy(rng):
    params = {"logits": rng.standard_normal((7,))}
    target = int(rng.integers(0, 7))
    return params, lambda t: tz.softmax_cross_entropy(t["logits"], target)


def _case_l2_normalize(rng):
    v = rng.standard_normal((6,))
    v *= max(1.0, 0.5 / np.linalg.norm(v))
    params = {"v": v}
    project = _projector(rng, (6,))
    return params, lambda t: project(tz.l2_normalize(t["v"]))


def _case_temporal_conv(rng):
    params = {
        "x": rng.standard_normal((2, 7, 3)),
        "w": rng.standard_normal((3, 3, 4)),
        "b": rng.standard_normal((4,)),
    }
    stride = int(rng.choice([1, 2]))
    padding = str(rng.choice(["zero", "circular"]))
    t_out = -(-7 // stride)
    project = _projector(rng, (2, t_out, 4))
    return params, lambda t: project(
        tz.temporal_conv(t["x"], t["w"], t["b"], stride=stride, padding=padding)
    )


OP_CASES = {
    "matmul": _case_matmul,
    "add": _case_add,
    "sub": _case_sub,
    "mul": _case_mul,
    "scalar_mul": _case_scalar_mul,
    "add_scalar": _case_add_scalar,
    "exp": _case_exp,
    "log": _case_log,
    "relu": _case_relu,
    "reshape": _case_reshape,
    "concat_flatten": _case_concat_flatten,
    "gather1d": _case_gather1d,
    "sum_over_axes": _case_sum_over_axes,
    "mean_over_axes": _case_mean_over_axes,
    "softmax_cross_entropy": _case_softmax_cross_entropy,
    "l2_normalize": _case_l2_normalize,
    "temporal_conv": _case_temporal_conv,
}


def registered_ops() -> list[str]:
    return sorted(OP_CASES)


def run_op_checks(
    ops=None,
    trials: int = 20,
    seed: int = 0,
    h: float = DEFAULT_STEP,
    tol: float = OP_TOLERANCE,
) -> list[GradCheckResult]:
    names = registered_ops() if ops is None else list(ops)
    unknown = [n for n in names if n not in OP_CASES]
    if unknown:
        raise ValueError(f"unknown op(s) for gradient check: {unknown}; known: {registered_ops()}")
    results = []
    for name in names:
        worst = 0.0
        worst_param = ""
        failures = []
        for trial in range(trials):
            rng = seeded_rng(seed, f"gradcheck/{name}/{trial}")
            params, fn = OP_CASES[name](rng)
            errs = compare_gradients(fn, params, h=h)
            for pname, err in errs.items():
                if err > worst:
                    worst, worst_param = err, pname
                if err >= tol:
                    failures.append((trial, pname, err))
        results.append(GradCheckResult(name, trials, worst, tol, worst_param, failures))
    return results


# ---------------------------------------------------------------------------
# full-pipeline check on a tiny configuration


def _build_pipeline_case(seed: int):
    """One random instance of the complete training loss on tiny shapes.

    Frozen pieces (input, bank contents, mined sample indices) are data;
    the returned fn is a smooth function of the parameters.  Seeds whose
    forward pass lands too close to a relu kink or a degenerate embedding
    norm are rejected by the caller.
    """
    from .contrast import ContrastConfig, MemoryBank, info_nce, sample_contrast
    from .decoupling import DecouplerParams, decouple, init_decoupler
    from .encoder import EncoderConfig, encode, classify, init_params

    rng = seeded_rng(seed, "gradcheck/pipeline")
    cfg = EncoderConfig(
        joints=3, frames=8, channels=8, temporal_stride=2, hidden=(4,), kernel_size=3,
        joint_mixing="learned",  # exercise every trainable tensor kind
    )
    num_classes = 3
    params = init_params(cfg, num_classes, seed=seed)
    decoupler = init_decoupler(
        joints=cfg.joints, out_frames=cfg.out_frames, channels=cfg.channels, reduction=2, dim=5, seed=seed + 1
    )
    arrays = {k: t.data.copy() for k, t in params.items()}
    arrays.update({f"decouple.{k}": t.data.copy() for k, t in decoupler.named().items()})

    coords = rng.standard_normal((cfg.joints, cfg.frames, 3))
    label = int(rng.integers(0, num_classes))
    anchor_index = 0

    bank_size = 8
    banks = {}
    for name in ("spatial", "temporal"):
        bank = MemoryBank(length=bank_size, dim=5, name=name, seed=seed)
        bank_labels = rng.integers(0, num_classes, size=bank_size)
        bank_labels[1] = label
        bank_labels[2] = (label + 1) % num_classes
        for i in range(1, 7):
            bank.update(i, Tensor(rng.standard_normal(5)), int(bank_labels[i]))
        banks[name] = bank
    ccfg = ContrastConfig(tau=0.8, n_pos_hard=2, n_neg_hard=2, n_neg_rand=2)

    def rebuild(tensors: dict[str, Tensor]):
        enc_params = {k: v for k, v in tensors.items() if not k.startswith("decouple.")}
        dec = DecouplerParams(
            spatial_reduce=tensors["decouple.spatial_reduce"],
            temporal_reduce=tensors["decouple.temporal_reduce"],
            spatial_embed=tensors["decouple.spatial_embed"],
            temporal_embed=tensors["decouple.temporal_embed"],
            reduction=2,
            dim=5,
        )
        return enc_params, dec

    def embeddings(tensors: dict[str, Tensor]):
        enc_params, dec = rebuild(tensors)
        feat = encode(enc_params, cfg, coords)
        return decouple(feat, dec), enc_params, feat

    with tz.using_precision("float64"), tz.trace_relu_gaps() as gaps:
        pair0, _, _ = embeddings({k: Tensor(v, requires_grad=False) for k, v in arrays.items()})
        min_gap = min(gaps) if gaps else np.inf
        norms = (float(np.linalg.norm(pair0.spatial.data)), float(np.linalg.norm(pair0.temporal.data)))
        samples = {
            "spatial": sample_contrast(
                banks["spatial"], pair0.spatial.data, label, anchor_index, ccfg, banks["spatial"].rng
            ),
            "temporal": sample_contrast(
                banks["temporal"], pair0.temporal.data, label, anchor_index, ccfg, banks["temporal"].rng
            ),
        }

    def fn(tensors: dict[str, Tensor]) -> Tensor:
        pair, enc_params, feat = embeddings(tensors)
        logits = classify(enc_params, feat)
        loss = tz.softmax_cross_entropy(logits, label)
        spa, _ = info_nce(pair.spatial, samples["spatial"], banks["spatial"], ccfg)
        tem, _ = info_nce(pair.temporal, samples["temporal"], banks["temporal"], ccfg)
        return tz.add(tz.add(loss, spa), tem)

    usable = min_gap > 1e-3 and min(norms) > 1e-2
    return arrays, fn, usable


def run_pipeline_check(
    trials: int = 20, seed: int = 0, h: float = DEFAULT_STEP, tol: float = PIPELINE_TOLERANCE
) -> GradCheckResult:
    worst = 0.0
    worst_param = ""
    failures = []
    done = 0
    attempt = 0
    while done < trials:
        if attempt > trials * 20:
            raise NumericError("pipeline gradcheck: could not find enough well-conditioned instances")
        arrays, fn, usable = _build_pipeline_case(seed * 1000 + attempt)
        attempt += 1
        if not usable:
            continue
        errs = compare_gradients(fn, arrays, h=h)
        for pname, err in errs.items():
            if err > worst:
                worst, worst_param = err, pname
            if err >= tol:
                failures.append((done, pname, err))
        done += 1
    return GradCheckResult("full_pipeline", trials, worst, tol, worst_param, failures)
