"""Dynamic Key-Value Memory Networks.

A static key memory attended by skill-query embeddings and a per-student
value memory updated by erase/add writes. The read path is
r_t = sum_i w_t(i) Mv_t(i), f_t = tanh(W1 [r_t; k_t] + b1),
p_t = logistic(w2 . f_t + b2); the write path erases with
e_t = logistic(E v_t + be) and adds a_t = tanh(A v_t + ba).

Pure numpy with hand-written backpropagation through the read/write
recurrence; deterministic for a fixed (seed, data, config).
"""

import base64
import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import SkillCatalog, StudentSequence
from .estimator import AttemptPrediction


class DkvmnError(Exception):
    pass


class NonFiniteLoss(DkvmnError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class DkvmnConfig:
    memory_slots: int = 8
    key_dim: int = 16
    value_dim: int = 16
    learning_rate: float = 0.01
    epochs: int = 50
    seed: int = 42
    max_grad_norm: float = 5.0

    def __post_init__(self):
        if min(self.memory_slots, self.key_dim, self.value_dim) < 1:
            raise ValueError("memory_slots, key_dim and value_dim must be >= 1")
        if self.learning_rate <= 0 or self.epochs < 1 or self.max_grad_norm <= 0:
            raise ValueError("invalid optimizer settings")


# Mk (N, dk) static key memory; Mv0 (N, dv) trained initial value memory,
# copied per student; Kemb (S, dk) query embeddings; Vemb (2S, dv) answer
# embeddings; W1/b1 summary layer (summary dim = key_dim); w2/b2 output;
# E/be erase transform; A/ba add transform.
PARAM_KEYS = ("Mk", "Mv0", "Kemb", "Vemb", "W1", "b1", "w2", "b2", "E", "be", "A", "ba")


@dataclass
class DkvmnModel:
    params: Dict[str, np.ndarray]
    catalog: SkillCatalog
    config: DkvmnConfig
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None


def init_params(num_skills: int, config: DkvmnConfig) -> Dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed & 0xFFFFFFFFFFFFFFFF)
    N, dk, dv, S = config.memory_slots, config.key_dim, config.value_dim, num_skills

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return {
        "Mk": uniform((N, dk), dk),
        "Mv0": uniform((N, dv), dv),
        "Kemb": uniform((S, dk), dk),
        "Vemb": uniform((2 * S, dv), dv),
        "W1": uniform((dk, dv + dk), dv + dk),
        "b1": np.zeros(dk),
        "w2": uniform((dk,), dk),
        "b2": np.zeros(1),
        "E": uniform((dv, dv), dv),
        "be": np.zeros(dv),
        "A": uniform((dv, dv), dv),
        "ba": np.zeros(dv),
    }


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def attention(k: np.ndarray, Mk: np.ndarray) -> np.ndarray:
    """softmax(Mk . k): positive weights over the N slots summing to 1."""
    return _softmax(Mk @ k)


def read_predict(
    Mv: np.ndarray, w: np.ndarray, k: np.ndarray, params: Dict[str, np.ndarray]
) -> float:
    """Attention-weighted read followed by the summary and output layers."""
    r = w @ Mv
    f = np.tanh(params["W1"] @ np.concatenate([r, k]) + params["b1"])
    return float(_sigmoid(params["w2"] @ f + params["b2"][0]))


def write(
    Mv: np.ndarray, w: np.ndarray, v: np.ndarray, params: Dict[str, np.ndarray]
) -> np.ndarray:
    """Erase/add update; returns a new state, the input is not modified."""
    e = _sigmoid(params["E"] @ v + params["be"])
    a = np.tanh(params["A"] @ v + params["ba"])
    return Mv * (1.0 - np.outer(w, e)) + np.outer(w, a)


def _encode_steps(
    seq: StudentSequence, catalog: SkillCatalog
) -> List[Tuple[int, bool]]:
    steps = []
    for skill_id, _item, correct in seq.steps:
        if skill_id not in catalog:
            raise DkvmnError(f"skill {skill_id!r} not in catalog")
        steps.append((catalog.index[skill_id], bool(correct)))
    return steps


def _forward_pass(params: Dict[str, np.ndarray], steps: List[Tuple[int, bool]], S: int):
    """Per-step probabilities plus the caches needed for backprop."""
    Mv = params["Mv0"].copy()
    probs = np.empty(len(steps))
    caches = []
    for t, (q, correct) in enumerate(steps):
        k = params["Kemb"][q]
        w = attention(k, params["Mk"])
        r = w @ Mv
        f = np.tanh(params["W1"] @ np.concatenate([r, k]) + params["b1"])
        p = float(_sigmoid(params["w2"] @ f + params["b2"][0]))
        col_v = q + S * int(correct)
        v = params["Vemb"][col_v]
        e = _sigmoid(params["E"] @ v + params["be"])
        a = np.tanh(params["A"] @ v + params["ba"])
        Mv_in = Mv
        Mv = Mv * (1.0 - np.outer(w, e)) + np.outer(w, a)
        probs[t] = p
        caches.append((q, col_v, k, w, r, f, p, v, e, a, Mv_in))
    return probs, caches


def predict_sequence(model: DkvmnModel, sequence: StudentSequence) -> np.ndarray:
    steps = _encode_steps(sequence, model.catalog)
    if not steps:
        raise DkvmnError("sequence must be nonempty")
    probs, _ = _forward_pass(model.params, steps, len(model.catalog))
    return probs


def loss(
    params: Dict[str, np.ndarray],
    sequences: Sequence[StudentSequence],
    catalog: SkillCatalog,
    config: DkvmnConfig,
) -> float:
    """Mean cross-entropy of the per-attempt predictions."""
    total = 0.0
    n = 0
    for seq in sequences:
        steps = _encode_steps(seq, catalog)
        if not steps:
            continue
        probs, _ = _forward_pass(params, steps, len(catalog))
        for (q, correct), p in zip(steps, probs):
            total += -np.log(p) if correct else -np.log1p(-p)
        n += len(steps)
    if n == 0:
        raise DkvmnError("need at least one nonempty sequence")
    return float(total / n)


def _backward_pass(
    params: Dict[str, np.ndarray],
    steps: List[Tuple[int, bool]],
    caches,
    weight: float,
) -> Dict[str, np.ndarray]:
    """BPTT through the read/write recurrence for weight * sum of CE terms."""
    Mk, W1, w2, E, A = (params[k] for k in ("Mk", "W1", "w2", "E", "A"))
    dv_dim = params["Mv0"].shape[1]
    grads = {k: np.zeros_like(params[k]) for k in PARAM_KEYS}
    dMv = np.zeros_like(params["Mv0"])  # grad w.r.t. state after step t's write
    for t in range(len(steps) - 1, -1, -1):
        q, col_v, k, w, r, f, p, v, e, a, Mv_in = caches[t]
        correct = steps[t][1]

        # write: Mv_out = Mv_in * (1 - w e^T) + w a^T
        G = dMv * Mv_in
        dw = dMv @ a - G @ e
        de = -(G.T @ w)
        da = dMv.T @ w
        dMv_in = dMv * (1.0 - np.outer(w, e))
        dz_e = de * e * (1.0 - e)
        grads["E"] += np.outer(dz_e, v)
        grads["be"] += dz_e
        dv = E.T @ dz_e
        dz_a = da * (1.0 - a * a)
        grads["A"] += np.outer(dz_a, v)
        grads["ba"] += dz_a
        dv += A.T @ dz_a
        grads["Vemb"][col_v] += dv

        # prediction: CE through the output sigmoid
        dlogit = weight * (p - (1.0 if correct else 0.0))
        grads["w2"] += dlogit * f
        grads["b2"][0] += dlogit
        df = dlogit * w2
        dz1 = df * (1.0 - f * f)
        grads["W1"] += np.outer(dz1, np.concatenate([r, k]))
        grads["b1"] += dz1
        dconcat = W1.T @ dz1
        dr = dconcat[:dv_dim]
        dk = dconcat[dv_dim:]

        # read: r = w @ Mv_in
        dMv_in += np.outer(w, dr)
        dw += Mv_in @ dr

        # attention: w = softmax(Mk k)
        dlogits = w * (dw - float(dw @ w))
        grads["Mk"] += np.outer(dlogits, k)
        dk = dk + Mk.T @ dlogits
        grads["Kemb"][q] += dk

        dMv = dMv_in
    grads["Mv0"] += dMv
    return grads


def loss_and_grad(
    params: Dict[str, np.ndarray],
    sequences: Sequence[StudentSequence],
    catalog: SkillCatalog,
    config: DkvmnConfig,
) -> Tuple[float, Dict[str, np.ndarray]]:
    encoded = [_encode_steps(seq, catalog) for seq in sequences]
    encoded = [st for st in encoded if st]
    if not encoded:
        raise DkvmnError("need at least one nonempty sequence")
    n = sum(len(st) for st in encoded)
    weight = 1.0 / n
    total = 0.0
    grads = {k: np.zeros_like(params[k]) for k in PARAM_KEYS}
    for steps in encoded:
        probs, caches = _forward_pass(params, steps, len(catalog))
        for (q, correct), p in zip(steps, probs):
            total += weight * (-np.log(p) if correct else -np.log1p(-p))
        seq_grads = _backward_pass(params, steps, caches, weight)
        for key in PARAM_KEYS:
            grads[key] += seq_grads[key]
    return float(total), grads


def _clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def train(
    sequences: Sequence[StudentSequence],
    catalog: SkillCatalog,
    config: DkvmnConfig = DkvmnConfig(),
) -> DkvmnModel:
    """Per-sequence gradient descent on the cross-entropy, seed-shuffled."""
    usable = [s for s in sequences if s.steps]
    if not usable:
        raise DkvmnError("need at least one nonempty sequence")
    params = init_params(len(catalog), config)
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0xFFFFFFFFFFFFFFFF, 2])
    )
    initial = loss(params, usable, catalog, config)
    for epoch in range(config.epochs):
        order = rng.permutation(len(usable))
        for idx in order:
            seq_loss, grads = loss_and_grad(params, [usable[idx]], catalog, config)
            if not np.isfinite(seq_loss):
                raise NonFiniteLoss(epoch)
            _clip_gradients(grads, config.max_grad_norm)
            for key in PARAM_KEYS:
                params[key] -= config.learning_rate * grads[key]
    final = loss(params, usable, catalog, config)
    if not np.isfinite(final):
        raise NonFiniteLoss(config.epochs)
    return DkvmnModel(
        params=params,
        catalog=catalog,
        config=config,
        initial_loss=initial,
        final_loss=final,
    )


def predict_attempts(
    model: DkvmnModel, sequence: StudentSequence
) -> List[AttemptPrediction]:
    """Pre-observation probability for each attempt; non-finite outputs
    become Invalid markers for the estimator's omission policy."""
    steps = _encode_steps(sequence, model.catalog)
    if not steps:
        return []
    probs, _ = _forward_pass(model.params, steps, len(model.catalog))
    out = []
    for (skill_id, item_id, _correct), p in zip(sequence.steps, probs):
        p = float(p)
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


def save_checkpoint(model: DkvmnModel) -> bytes:
    doc = {
        "kind": "dkvmn",
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


def load_checkpoint(blob: bytes) -> DkvmnModel:
    doc = json.loads(blob.decode("utf-8"))
    if doc.get("kind") != "dkvmn":
        raise DkvmnError(f"not a dkvmn checkpoint: kind={doc.get('kind')!r}")
    params = {
        k: np.frombuffer(base64.b64decode(v["data"]), dtype=np.float64).reshape(
            v["shape"]
        ).copy()
        for k, v in doc["params"].items()
    }
    return DkvmnModel(
        params=params,
        catalog=SkillCatalog(doc["skills"]),
        config=DkvmnConfig(**doc["config"]),
    )
