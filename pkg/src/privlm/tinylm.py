"""A tiny trainable language model with exact hand-derived gradients.

One attention block plus a feed-forward layer over whole-word tokens, small
enough to verify every gradient against finite differences yet big enough to
memorize a desk-scale corpus verbatim. Supports a bidirectional (masked
objective) and a causal (next-token objective) attention mode, plain SGD with
a linear learning-rate decay, and a per-example clipped/noised SGD step.

Forward pass, all float64, per example of real length T, with a
parameter-free RMS normalization rn(x) = x / sqrt(mean(x^2) + eps) applied
row-wise before each sublayer and before the head (it adds no weight arrays
but keeps plain SGD stable at the learning rates memorization needs):

    X  = Wtok[ids] + Wpos[:T]
    N0 = rn(X)
    S  = (N0 Wq)(N0 Wk)^T / sqrt(d) + Brel[t - j]
    A  = softmax(S) (N0 Wv)            S masked to -inf above the diagonal
    X1 = X + A Wo                      when the attention mode is causal
    N1 = rn(X1)
    X2 = X1 + relu(N1 W1 + b1) W2 + b2
    Z  = rn(X2)[slots] Wout            logits only at target slots

Brel is a relative-offset attention bias indexed by the query/key distance,
initialized to the local prior -0.5 |t - j|; it gives gradient descent a
usable neighborhood-attention channel from step one instead of requiring it
to emerge from pairwise position-embedding alignment.
The normalization backward is dx = (dy - y * rowmean(dy * y)) / r with
y = x / r. Loss is the mean cross-entropy over in-loss slots; slots outside
the loss contribute exactly zero gradient (their logits are never computed).
"""

from __future__ import annotations

import json
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence as Seq

import numpy as np

from .maskplan import TrainingExample
from .seeds import derive_seed

_MAGIC = b"PRIVLMCKPT1\n"


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss; carries epoch/batch diagnostics."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 32
    context_length: int = 64
    hidden_dim: int = 64
    attention: str = "causal"  # "causal" | "bidirectional"
    layers: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.vocab_size, self.embed_dim, self.hidden_dim, self.layers) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.context_length < 2:
            raise ValueError("context_length must be >= 2")
        if self.attention not in ("causal", "bidirectional"):
            raise ValueError(f"unknown attention mode: {self.attention!r}")
        if self.layers != 1:
            raise ValueError("only a single block is supported")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "context_length": self.context_length,
            "hidden_dim": self.hidden_dim,
            "attention": self.attention,
            "layers": self.layers,
            "seed": self.seed,
        }


PARAM_FIELDS = (
    "w_tok", "w_pos", "w_q", "w_k", "w_v", "w_o", "b_rel",
    "w_ff1", "b_ff1", "w_ff2", "b_ff2", "w_out",
)


@dataclass
class Parameters:
    w_tok: np.ndarray
    w_pos: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    b_rel: np.ndarray  # attention bias by query/key offset, length 2*ctx - 1
    w_ff1: np.ndarray
    b_ff1: np.ndarray
    w_ff2: np.ndarray
    b_ff2: np.ndarray
    w_out: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def copy(self) -> "Parameters":
        return Parameters(**{k: v.copy() for k, v in self.arrays().items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays().values())


def zero_grads(params: Parameters) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays().items()}


_LOCAL_ATTENTION_SLOPE = 0.5


def init_model(config: ModelConfig) -> Parameters:
    """Seeded zero-mean normal init, scale 1/sqrt(fan-in) per weight matrix.

    Bias vectors are deterministic: the feed-forward biases start at zero and
    the relative attention bias starts at the local-attention prior
    -0.5 * |offset|, so neighborhood context is usable from step one instead
    of having to emerge from position-embedding alignment.
    """
    rng = np.random.default_rng(config.seed)
    d, h, v, t = config.embed_dim, config.hidden_dim, config.vocab_size, config.context_length

    def normal(shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        return rng.standard_normal(shape) / np.sqrt(fan_in)

    offsets = np.arange(-(t - 1), t)
    return Parameters(
        w_tok=normal((v, d), d),
        w_pos=normal((t, d), d),
        w_q=normal((d, d), d),
        w_k=normal((d, d), d),
        w_v=normal((d, d), d),
        w_o=normal((d, d), d),
        b_rel=-_LOCAL_ATTENTION_SLOPE * np.abs(offsets).astype(float),
        w_ff1=normal((d, h), d),
        b_ff1=np.zeros(h),
        w_ff2=normal((h, d), h),
        b_ff2=np.zeros(d),
        w_out=normal((d, v), d),
    )


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


_RMS_EPS = 1e-8


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _rms_norm(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = np.sqrt((x * x).mean(axis=-1, keepdims=True) + _RMS_EPS)
    return x / r, r


def _rms_backward(dy: np.ndarray, y: np.ndarray, r: np.ndarray) -> np.ndarray:
    return (dy - y * (dy * y).mean(axis=-1, keepdims=True)) / r


def _offset_index(T: int, bias_len: int) -> np.ndarray:
    center = (bias_len - 1) // 2
    t = np.arange(T)
    return t[:, None] - t[None, :] + center


def forward_hidden(
    params: Parameters, ids: np.ndarray, causal: bool, cache: bool = False
):
    """Normalized hidden states rn(X2) for a batch of equal-length rows (B, T).

    Returns (N2, cache_tuple_or_None); N2 @ w_out gives the logits. Batched
    rows must share the real length T; padding must be sliced off by the
    caller.
    """
    ids = np.atleast_2d(ids)
    B, T = ids.shape
    d = params.w_tok.shape[1]
    X = params.w_tok[ids] + params.w_pos[:T]
    N0, r0 = _rms_norm(X)
    Q = N0 @ params.w_q
    K = N0 @ params.w_k
    V = N0 @ params.w_v
    offsets = _offset_index(T, len(params.b_rel))
    S = Q @ K.transpose(0, 2, 1) / np.sqrt(d) + params.b_rel[offsets]
    if causal:
        blocked = np.triu(np.ones((T, T), dtype=bool), k=1)
        S = np.where(blocked, -np.inf, S)
    P = _softmax(S)
    A = P @ V
    X1 = X + A @ params.w_o
    N1, r1 = _rms_norm(X1)
    U = N1 @ params.w_ff1 + params.b_ff1
    H = np.maximum(U, 0.0)
    X2 = X1 + H @ params.w_ff2 + params.b_ff2
    N2, r2 = _rms_norm(X2)
    if not cache:
        return N2, None
    return N2, (ids, N0, r0, Q, K, V, P, A, N1, r1, U, H, N2, r2)


def slot_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-slot cross-entropy -log softmax(logits)[target]."""
    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1))
    return log_norm - z[np.arange(len(targets)), targets]


def evaluate(
    params: Parameters, example: TrainingExample, causal: bool
) -> tuple[np.ndarray, float]:
    """Logits at every target slot plus the mean loss over in-loss slots.

    A fully out-of-loss example yields loss 0 (and, via loss_and_grads,
    exactly zero gradients).
    """
    T = example.length
    if T == 0:
        return np.zeros((0, params.w_out.shape[1])), 0.0
    ids = example.input_ids[:T]
    if ids.max() >= params.w_tok.shape[0]:
        raise ValueError("token id exceeds vocabulary size")
    N2, _ = forward_hidden(params, ids, causal)
    slots = np.flatnonzero(example.has_target[:T])
    logits = N2[0, slots] @ params.w_out
    loss_slots = np.flatnonzero(example.in_loss[:T])
    if len(loss_slots) == 0:
        return logits, 0.0
    Z = N2[0, loss_slots] @ params.w_out
    losses = slot_cross_entropy(Z, example.target_ids[loss_slots])
    return logits, float(losses.mean())


def loss_and_grads(
    params: Parameters, example: TrainingExample, causal: bool
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean in-loss cross-entropy and its exact gradients for one example."""
    grads = zero_grads(params)
    T = example.length
    if T == 0:
        return 0.0, grads
    loss_slots = np.flatnonzero(example.in_loss[:T])
    M = len(loss_slots)
    if M == 0:
        return 0.0, grads

    ids = example.input_ids[:T]
    if ids.max() >= params.w_tok.shape[0]:
        raise ValueError("token id exceeds vocabulary size")
    _, cache = forward_hidden(params, ids, causal, cache=True)
    _, N0, r0, Q, K, V, P, A, N1, r1, U, H, N2, r2 = cache
    d = params.w_tok.shape[1]
    targets = example.target_ids[loss_slots]

    N2s = N2[0, loss_slots]
    Z = N2s @ params.w_out
    probs = _softmax(Z)
    loss = float(slot_cross_entropy(Z, targets).mean())

    dZ = probs
    dZ[np.arange(M), targets] -= 1.0
    dZ /= M

    grads["w_out"] = N2s.T @ dZ
    dN2 = np.zeros((T, d))
    dN2[loss_slots] = dZ @ params.w_out.T
    dX2 = _rms_backward(dN2, N2[0], r2[0])

    # X2 = X1 + relu(rn(X1) W1 + b1) W2 + b2
    dF = dX2
    grads["w_ff2"] = H[0].T @ dF
    grads["b_ff2"] = dF.sum(axis=0)
    dU = (dF @ params.w_ff2.T) * (U[0] > 0.0)
    grads["w_ff1"] = N1[0].T @ dU
    grads["b_ff1"] = dU.sum(axis=0)
    dX1 = dX2 + _rms_backward(dU @ params.w_ff1.T, N1[0], r1[0])

    # X1 = X + (P rn(X) Wv) Wo
    dAO = dX1
    grads["w_o"] = A[0].T @ dAO
    dA = dAO @ params.w_o.T
    dP = dA @ V[0].T
    dV = P[0].T @ dA
    dS = (dP - (dP * P[0]).sum(axis=-1, keepdims=True)) * P[0]
    offsets = _offset_index(T, len(params.b_rel))
    np.add.at(grads["b_rel"], offsets, dS)
    dS = dS / np.sqrt(d)
    dQ = dS @ K[0]
    dK = dS.T @ Q[0]
    grads["w_q"] = N0[0].T @ dQ
    grads["w_k"] = N0[0].T @ dK
    grads["w_v"] = N0[0].T @ dV
    dN0 = dQ @ params.w_q.T + dK @ params.w_k.T + dV @ params.w_v.T
    dX = dX1 + _rms_backward(dN0, N0[0], r0[0])

    np.add.at(grads["w_tok"], ids, dX)
    grads["w_pos"][:T] = dX
    return loss, grads


def grad_check(
    params: Parameters,
    example: TrainingExample,
    epsilon: float,
    causal: bool = False,
    num_coords: int = 120,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central finite
    differences over randomly sampled coordinates.

    Coordinates with magnitude below 1e-4 are compared on that absolute
    floor, since finite differences cannot resolve them at these epsilons.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-6, 1e-3]")
    _, grads = loss_and_grads(params, example, causal)
    rng = np.random.default_rng(seed)
    names = list(PARAM_FIELDS)
    sizes = np.array([params.arrays()[n].size for n in names])
    worst = 0.0
    for _ in range(max(num_coords, 100)):
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        arr = getattr(params, name)
        flat_idx = int(rng.integers(arr.size))
        idx = np.unravel_index(flat_idx, arr.shape)
        orig = arr[idx]
        arr[idx] = orig + epsilon
        _, loss_plus = evaluate(params, example, causal)
        arr[idx] = orig - epsilon
        _, loss_minus = evaluate(params, example, causal)
        arr[idx] = orig
        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        analytic = grads[name][idx]
        denom = max(abs(analytic), abs(numeric), 1e-4)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DpConfig:
    clip_norm: float
    noise_multiplier: float

    def __post_init__(self) -> None:
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 8
    learning_rate: float = 1e-4
    seed: int = 0
    dp: DpConfig | None = None

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class Checkpoint:
    params: Parameters
    config: ModelConfig
    provenance: dict

    def __post_init__(self) -> None:
        for key in ("scheme", "epoch"):
            if key not in self.provenance:
                raise ValueError(f"checkpoint provenance missing {key!r}")

    @property
    def causal(self) -> bool:
        return self.config.attention == "causal"

    def serialize(self) -> bytes:
        arrays = [
            {"name": n, "shape": list(a.shape), "dtype": "<f8"}
            for n, a in self.params.arrays().items()
        ]
        header = json.dumps(
            {"config": self.config.to_dict(), "provenance": self.provenance, "arrays": arrays},
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        blob = b"".join(
            np.ascontiguousarray(a, dtype="<f8").tobytes() for a in self.params.arrays().values()
        )
        return _MAGIC + header + b"\n" + blob

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.serialize())

    def digest(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()

    @classmethod
    def deserialize(cls, data: bytes) -> "Checkpoint":
        if not data.startswith(_MAGIC):
            raise ValueError("not a checkpoint file (bad magic)")
        rest = data[len(_MAGIC):]
        header_end = rest.index(b"\n")
        header = json.loads(rest[:header_end])
        blob = rest[header_end + 1:]
        arrays = {}
        offset = 0
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            n_bytes = int(np.prod(shape)) * 8
            arrays[spec["name"]] = (
                np.frombuffer(blob[offset : offset + n_bytes], dtype="<f8")
                .reshape(shape)
                .copy()
            )
            offset += n_bytes
        return cls(
            params=Parameters(**arrays),
            config=ModelConfig(**header["config"]),
            provenance=header["provenance"],
        )

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.deserialize(Path(path).read_bytes())


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def _apply_update(
    params: Parameters,
    grad_sum: dict[str, np.ndarray],
    batch_size: int,
    lr: float,
    dp: DpConfig | None,
    noise_rng: np.random.Generator | None,
) -> None:
    for name in PARAM_FIELDS:
        update = grad_sum[name]
        if dp is not None and dp.noise_multiplier > 0:
            update = update + noise_rng.normal(
                0.0, dp.noise_multiplier * dp.clip_norm, size=update.shape
            )
        getattr(params, name)[...] -= lr * (update / batch_size)


def _batch_grad_sum(
    params: Parameters,
    batch: Seq[TrainingExample],
    causal: bool,
    dp: DpConfig | None,
) -> tuple[dict[str, np.ndarray], list[float]]:
    total = zero_grads(params)
    losses = []
    for ex in batch:
        loss, grads = loss_and_grads(params, ex, causal)
        losses.append(loss)
        if dp is not None:
            norm = _global_norm(grads)
            factor = min(1.0, dp.clip_norm / norm) if norm > 0 else 1.0
            for name in PARAM_FIELDS:
                total[name] += grads[name] * factor
        else:
            for name in PARAM_FIELDS:
                total[name] += grads[name]
    return total, losses


def dp_sgd_step(
    params: Parameters,
    batch: Seq[TrainingExample],
    clip_norm: float,
    noise_multiplier: float,
    rng: np.random.Generator,
    learning_rate: float,
    causal: bool = True,
) -> Parameters:
    """One clipped/noised SGD step: per-example gradients rescaled to global
    norm <= clip_norm, summed, Gaussian noise of stddev noise * clip_norm
    added coordinate-wise, averaged by batch size, applied at the given rate.
    With noise 0 and an infinite clip norm this reproduces the plain step
    bit for bit.
    """
    dp = DpConfig(clip_norm=clip_norm, noise_multiplier=noise_multiplier)
    out = params.copy()
    grad_sum, _ = _batch_grad_sum(out, batch, causal, dp)
    _apply_update(out, grad_sum, len(batch), learning_rate, dp, rng)
    return out


def train(
    model_config: ModelConfig,
    params: Parameters,
    examples_for_epoch: Callable[[int], Seq[TrainingExample]],
    train_config: TrainConfig,
    milestones: Seq[int],
    provenance: dict,
) -> tuple[list[Checkpoint], list[float]]:
    """Plain SGD with per-step linear decay of the learning rate to zero.

    examples_for_epoch(e) supplies epoch e's examples (masked schemes
    re-sample their plan per epoch); milestones are epochs at which an
    immutable checkpoint is emitted. Returns (checkpoints, mean loss per
    epoch). Deterministic given the config seeds.
    """
    milestones = sorted(milestones)
    if milestones and not all(1 <= m <= train_config.epochs for m in milestones):
        raise ValueError("milestones must lie within 1..epochs")
    causal = model_config.attention == "causal"
    params = params.copy()
    noise_rng = np.random.default_rng(derive_seed(train_config.seed, "dp-noise"))

    first = list(examples_for_epoch(1))
    n_batches = max(1, -(-len(first) // train_config.batch_size))
    total_steps = train_config.epochs * n_batches
    step = 0
    checkpoints: list[Checkpoint] = []
    epoch_losses: list[float] = []
    for epoch in range(1, train_config.epochs + 1):
        examples = first if epoch == 1 else list(examples_for_epoch(epoch))
        order = np.random.default_rng(
            derive_seed(train_config.seed, "shuffle", epoch)
        ).permutation(len(examples))
        losses: list[float] = []
        for b in range(0, len(examples), train_config.batch_size):
            batch = [examples[i] for i in order[b : b + train_config.batch_size]]
            lr = train_config.learning_rate * (1.0 - step / total_steps)
            grad_sum, batch_losses = _batch_grad_sum(params, batch, causal, train_config.dp)
            losses.extend(batch_losses)
            if not np.isfinite(batch_losses).all():
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {b // train_config.batch_size}: "
                    f"{batch_losses}"
                )
            _apply_update(
                params, grad_sum, len(batch), lr, train_config.dp, noise_rng
            )
            step += 1
        epoch_losses.append(float(np.mean(losses)) if losses else 0.0)
        if epoch in milestones:
            checkpoints.append(
                Checkpoint(
                    params=params.copy(),
                    config=model_config,
                    provenance={**provenance, "epoch": epoch},
                )
            )
    return checkpoints, epoch_losses


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def ranked_tokens(logits: np.ndarray, top_k: int) -> np.ndarray:
    """Token ids by logit descending, ties broken by ascending id."""
    order = np.lexsort((np.arange(logits.shape[-1]), -logits))
    return order[:top_k]


def predict_masked(
    checkpoint: Checkpoint, token_ids: Seq[int], top_k: int
) -> list[tuple[int, np.ndarray]]:
    """Ranked token ids for every MASK position of a bidirectional model.

    Returns (position, ids) pairs; ids are ordered by logit descending with
    ties broken by ascending token id.
    """
    from .corpus import MASK_ID

    if checkpoint.causal:
        raise ValueError("predict_masked requires a bidirectional checkpoint")
    vocab_size = checkpoint.config.vocab_size
    if not 1 <= top_k <= vocab_size:
        raise ValueError("top_k must lie in 1..vocab_size")
    ids = np.asarray(token_ids, dtype=np.int64)
    if len(ids) > checkpoint.config.context_length:
        raise ValueError("sequence longer than context length")
    X2, _ = forward_hidden(checkpoint.params, ids, causal=False)
    out = []
    for pos in np.flatnonzero(ids == MASK_ID):
        logits = X2[0, pos] @ checkpoint.params.w_out
        out.append((int(pos), ranked_tokens(logits, top_k)))
    return out


def generate(
    checkpoint: Checkpoint, prefix_ids: Seq[int], length: int, mode: str = "greedy"
) -> list[int]:
    """Greedy argmax continuation of exactly `length` tokens (deterministic;
    argmax ties resolve to the lowest token id). The context window slides
    once the running sequence exceeds the model's context length.
    """
    if not checkpoint.causal:
        raise ValueError("generate requires a causal checkpoint")
    if mode != "greedy":
        raise ValueError(f"unsupported generation mode: {mode!r}")
    ctx = checkpoint.config.context_length
    if len(prefix_ids) > ctx:
        raise ValueError("prefix longer than context length")
    if len(prefix_ids) == 0:
        raise ValueError("prefix must be non-empty")
    ids = list(prefix_ids)
    out: list[int] = []
    for _ in range(length):
        window = np.asarray(ids[-ctx:], dtype=np.int64)
        X2, _ = forward_hidden(checkpoint.params, window, causal=True)
        logits = X2[0, -1] @ checkpoint.params.w_out
        nxt = int(np.argmax(logits))
        out.append(nxt)
        ids.append(nxt)
    return out
