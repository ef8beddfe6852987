"""Deep Knowledge Tracing.

An LSTM over one-hot (skill, correctness) inputs emitting per-skill
next-attempt correctness probabilities, trained by per-sequence gradient
descent with the prediction-consistent regularizers: a current-step
reconstruction term and L1/L2 waviness penalties on consecutive
prediction vectors.

Everything is plain numpy with hand-written backpropagation through time,
so training is bitwise deterministic for a fixed (seed, data, config).
"""

import base64
import json
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import SkillCatalog, StudentSequence
from .estimator import AttemptPrediction


class DktError(Exception):
    pass


class IndexOutOfRange(DktError):
    pass


class NonFiniteLoss(DktError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class DktConfig:
    hidden_size: int = 64
    learning_rate: float = 0.01
    epochs: int = 50
    lambda_r: float = 0.1
    lambda_w1: float = 0.03
    lambda_w2: float = 3.0
    seed: int = 42
    max_grad_norm: float = 5.0

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if min(self.lambda_r, self.lambda_w1, self.lambda_w2) < 0:
            raise ValueError("regularization weights must be non-negative")
        if self.learning_rate <= 0 or self.epochs < 1 or self.max_grad_norm <= 0:
            raise ValueError("invalid optimizer settings")


# parameter keys: Wx (4H, 2S), Wh (4H, H), b (4H,) in [input, forget,
# output, candidate] gate order; Wy (S, H), by (S,)
PARAM_KEYS = ("Wx", "Wh", "b", "Wy", "by")


@dataclass
class DktModel:
    params: Dict[str, np.ndarray]
    catalog: SkillCatalog
    config: DktConfig
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None

    @property
    def num_skills(self) -> int:
        return len(self.catalog)


def encode_input(skill_index: int, correct: bool, num_skills: int) -> np.ndarray:
    """One-hot of length 2S: position skill_index + S * [correct]."""
    if not 0 <= skill_index < num_skills:
        raise IndexOutOfRange(f"skill index {skill_index} not in [0, {num_skills})")
    x = np.zeros(2 * num_skills)
    x[skill_index + num_skills * int(correct)] = 1.0
    return x


def init_params(num_skills: int, config: DktConfig) -> Dict[str, np.ndarray]:
    """Uniform +-1/sqrt(fan_in) init; zero biases except forget gate at 1."""
    rng = np.random.default_rng(config.seed & 0xFFFFFFFFFFFFFFFF)
    H, S = config.hidden_size, num_skills

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    b = np.zeros(4 * H)
    b[H : 2 * H] = 1.0
    return {
        "Wx": uniform((4 * H, 2 * S), 2 * S),
        "Wh": uniform((4 * H, H), H),
        "b": b,
        "Wy": uniform((S, H), H),
        "by": np.zeros(S),
    }


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _encode_steps(
    seq: StudentSequence, catalog: SkillCatalog
) -> List[Tuple[int, bool]]:
    steps = []
    for skill_id, _item, correct in seq.steps:
        if skill_id not in catalog:
            raise IndexOutOfRange(f"skill {skill_id!r} not in catalog")
        steps.append((catalog.index[skill_id], bool(correct)))
    return steps


def _forward_pass(params: Dict[str, np.ndarray], steps: List[Tuple[int, bool]]):
    """Returns (ys, caches). ys has T+1 rows: y_0 from the initial state,
    then y_t after consuming each input."""
    H = params["Wh"].shape[1]
    S = params["Wy"].shape[0]
    Wx, Wh, b, Wy, by = (params[k] for k in PARAM_KEYS)
    h = np.zeros(H)
    c = np.zeros(H)
    ys = [_sigmoid(by.copy())]  # Wy @ h0 is zero
    caches = []
    for skill_idx, correct in steps:
        col = skill_idx + S * int(correct)
        z = Wx[:, col] + Wh @ h + b
        gi = _sigmoid(z[:H])
        gf = _sigmoid(z[H : 2 * H])
        go = _sigmoid(z[2 * H : 3 * H])
        gg = np.tanh(z[3 * H :])
        c_new = gf * c + gi * gg
        tc = np.tanh(c_new)
        h_new = go * tc
        ys.append(_sigmoid(Wy @ h_new + by))
        caches.append((col, gi, gf, go, gg, c, tc, h, h_new))
        h, c = h_new, c_new
    return np.asarray(ys), caches


def forward(model: DktModel, sequence: StudentSequence) -> np.ndarray:
    """T x S matrix; row t is the prediction vector after consuming
    inputs 1..t (the probability used for step t+1's skill)."""
    steps = _encode_steps(sequence, model.catalog)
    if not steps:
        raise DktError("sequence must be nonempty")
    ys, _ = _forward_pass(model.params, steps)
    return ys[1:]


def _seq_terms(ys: np.ndarray, steps: List[Tuple[int, bool]]):
    """Raw loss sums for one sequence: next-step CE, current-step CE,
    waviness L1 and squared L2 over consecutive prediction vectors."""
    T = len(steps)
    # next-step: y_t predicts the outcome of step t+1 (y_0 predicts step 1)
    ce_next = sum(
        -np.log(ys[t, steps[t][0]]) if steps[t][1] else -np.log1p(-ys[t, steps[t][0]])
        for t in range(T)
    )
    # current-step reconstruction: y_t at step t's own skill vs its outcome
    ce_cur = sum(
        -np.log(ys[t + 1, steps[t][0]])
        if steps[t][1]
        else -np.log1p(-ys[t + 1, steps[t][0]])
        for t in range(T)
    )
    diffs = ys[1:] - ys[:-1]
    l1 = float(np.abs(diffs).sum())
    l2 = float((diffs**2).sum())
    return float(ce_next), float(ce_cur), l1, l2, T


def loss(
    params: Dict[str, np.ndarray],
    sequences: Sequence[StudentSequence],
    catalog: SkillCatalog,
    config: DktConfig,
) -> float:
    """Composite objective, averaged per predicted step / transition:
    CE_next + lambda_r * CE_current + lambda_w1 * w1 + lambda_w2 * w2^2,
    with waviness terms additionally normalized by the number of skills."""
    S = len(catalog)
    tot = np.zeros(4)
    n_steps = 0
    for seq in sequences:
        steps = _encode_steps(seq, catalog)
        if not steps:
            continue
        ys, _ = _forward_pass(params, steps)
        ce_n, ce_c, l1, l2, T = _seq_terms(ys, steps)
        tot += (ce_n, ce_c, l1, l2)
        n_steps += T
    if n_steps == 0:
        raise DktError("need at least one nonempty sequence")
    return float(
        tot[0] / n_steps
        + config.lambda_r * tot[1] / n_steps
        + config.lambda_w1 * tot[2] / (S * n_steps)
        + config.lambda_w2 * tot[3] / (S * n_steps)
    )


def _backward_pass(
    params: Dict[str, np.ndarray],
    steps: List[Tuple[int, bool]],
    ys: np.ndarray,
    caches,
    weights: Tuple[float, float, float, float],
) -> Dict[str, np.ndarray]:
    """BPTT for the weighted composite loss on one sequence.

    weights = (w_next, w_cur, w_w1, w_w2) are the final multipliers of the
    raw sums from _seq_terms.
    """
    H = params["Wh"].shape[1]
    Wx, Wh, b, Wy, by = (params[k] for k in PARAM_KEYS)
    w_next, w_cur, w_w1, w_w2 = weights
    T = len(steps)

    # d(loss)/d(y_t) for the full trajectory y_0..y_T
    dys = np.zeros_like(ys)
    for t in range(T):
        skill_idx, correct = steps[t]
        # next-step CE on y_t
        p = ys[t, skill_idx]
        dys[t, skill_idx] += w_next * ((p - 1.0) / (p * (1.0 - p)) if correct else 1.0 / (1.0 - p))
        # current-step CE on y_{t+1}
        p = ys[t + 1, skill_idx]
        dys[t + 1, skill_idx] += w_cur * ((p - 1.0) / (p * (1.0 - p)) if correct else 1.0 / (1.0 - p))
    diffs = ys[1:] - ys[:-1]
    wav = w_w1 * np.sign(diffs) + w_w2 * 2.0 * diffs
    dys[1:] += wav
    dys[:-1] -= wav

    grads = {k: np.zeros_like(params[k]) for k in PARAM_KEYS}
    # logits of y: da = dy * y (1 - y)
    das = dys * ys * (1.0 - ys)
    grads["by"] += das[0]  # y_0 = sigmoid(by); h_0 = 0 contributes nothing to Wy
    dh = np.zeros(H)
    dc = np.zeros(H)
    for t in range(T - 1, -1, -1):
        col, gi, gf, go, gg, c_prev, tc, h_prev, h_new = caches[t]
        da = das[t + 1]
        grads["Wy"] += np.outer(da, h_new)
        grads["by"] += da
        dh = dh + Wy.T @ da
        do = dh * tc
        dc = dc + dh * go * (1.0 - tc * tc)
        di = dc * gg
        dg = dc * gi
        df = dc * c_prev
        dz = np.concatenate(
            [
                di * gi * (1.0 - gi),
                df * gf * (1.0 - gf),
                do * go * (1.0 - go),
                dg * (1.0 - gg * gg),
            ]
        )
        grads["Wx"][:, col] += dz
        grads["Wh"] += np.outer(dz, h_prev)
        grads["b"] += dz
        dh = Wh.T @ dz
        dc = dc * gf
    return grads


def loss_and_grad(
    params: Dict[str, np.ndarray],
    sequences: Sequence[StudentSequence],
    catalog: SkillCatalog,
    config: DktConfig,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Composite loss and its analytic gradient over the given corpus."""
    S = len(catalog)
    encoded = [_encode_steps(seq, catalog) for seq in sequences]
    encoded = [st for st in encoded if st]
    if not encoded:
        raise DktError("need at least one nonempty sequence")
    n_steps = sum(len(st) for st in encoded)
    weights = (
        1.0 / n_steps,
        config.lambda_r / n_steps,
        config.lambda_w1 / (S * n_steps),
        config.lambda_w2 / (S * n_steps),
    )
    total_loss = 0.0
    grads = {k: np.zeros_like(params[k]) for k in PARAM_KEYS}
    for steps in encoded:
        ys, caches = _forward_pass(params, steps)
        ce_n, ce_c, l1, l2, _ = _seq_terms(ys, steps)
        total_loss += (
            weights[0] * ce_n + weights[1] * ce_c + weights[2] * l1 + weights[3] * l2
        )
        seq_grads = _backward_pass(params, steps, ys, caches, weights)
        for k in PARAM_KEYS:
            grads[k] += seq_grads[k]
    return float(total_loss), grads


def _clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def train(
    sequences: Sequence[StudentSequence],
    catalog: SkillCatalog,
    config: DktConfig = DktConfig(),
) -> DktModel:
    """Per-sequence gradient descent in a seed-shuffled order.

    Deterministic given (seed, data, config); raises NonFiniteLoss with
    the offending epoch on divergence.
    """
    usable = [s for s in sequences if s.steps]
    if not usable:
        raise DktError("need at least one nonempty sequence")
    params = init_params(len(catalog), config)
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0xFFFFFFFFFFFFFFFF, 1])
    )
    initial = loss(params, usable, catalog, config)
    for epoch in range(config.epochs):
        order = rng.permutation(len(usable))
        for idx in order:
            seq_loss, grads = loss_and_grad(params, [usable[idx]], catalog, config)
            if not np.isfinite(seq_loss):
                raise NonFiniteLoss(epoch)
            _clip_gradients(grads, config.max_grad_norm)
            for k in PARAM_KEYS:
                params[k] -= config.learning_rate * grads[k]
    final = loss(params, usable, catalog, config)
    if not np.isfinite(final):
        raise NonFiniteLoss(config.epochs)
    return DktModel(
        params=params,
        catalog=catalog,
        config=config,
        initial_loss=initial,
        final_loss=final,
    )


def predict_attempts(
    model: DktModel, sequence: StudentSequence
) -> List[AttemptPrediction]:
    """Pre-observation probability for each step's skill: y_{t-1}[skill_t],
    with y_0 from the initial state. Non-finite outputs become Invalid
    markers (probability None) for the estimator's omission policy."""
    steps = _encode_steps(sequence, model.catalog)
    if not steps:
        return []
    ys, _ = _forward_pass(model.params, steps)
    out = []
    for t, (skill_id, item_id, _correct) in enumerate(sequence.steps):
        skill_idx = model.catalog.index[skill_id]
        p = float(ys[t, skill_idx])
        prob: Optional[float] = p if np.isfinite(p) and 0.0 <= p <= 1.0 else None
        out.append(
            AttemptPrediction(
                student_id=sequence.student_id,
                skill_id=skill_id,
                item_id=item_id,
                probability=prob,
            )
        )
    return out


def save_checkpoint(model: DktModel) -> bytes:
    """Self-describing JSON container; loading reproduces predictions bitwise."""
    doc = {
        "kind": "dkt",
        "skills": list(model.catalog.skills),
        "config": model.config.__dict__,
        "params": {
            k: {
                "shape": list(v.shape),
                "data": base64.b64encode(np.ascontiguousarray(v).tobytes()).decode(),
            }
            for k, v in model.params.items()
        },
    }
    return json.dumps(doc, sort_keys=True).encode("utf-8")


def load_checkpoint(blob: bytes) -> DktModel:
    doc = json.loads(blob.decode("utf-8"))
    if doc.get("kind") != "dkt":
        raise DktError(f"not a dkt checkpoint: kind={doc.get('kind')!r}")
    params = {
        k: np.frombuffer(base64.b64decode(v["data"]), dtype=np.float64).reshape(
            v["shape"]
        ).copy()
        for k, v in doc["params"].items()
    }
    return DktModel(
        params=params,
        catalog=SkillCatalog(doc["skills"]),
        config=DktConfig(**doc["config"]),
    )
