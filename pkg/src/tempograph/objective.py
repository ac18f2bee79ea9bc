"""ARC/REL losses, the joint objective, the optimizer and the training loop."""

from __future__ import annotations

import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .model import BiaffineScorer
from .preprocess import WindowInstance, sample_mask
from .tensor import NonFiniteError, Tensor

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def arc_loss(s_arc, arc_gold: np.ndarray, loss_mask: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of sigmoid(s_arc) against the gold arcs.

    Only masked off-diagonal cells count; the mean is over those cells.
    """
    s_arc = _tensor(s_arc)
    n = s_arc.shape[-1]
    mask = np.asarray(loss_mask, dtype=bool) & ~np.eye(n, dtype=bool)
    count = mask.sum()
    if count == 0:
        raise ValueError("arc loss mask selects no cells")
    return T.bce_with_logits(s_arc, arc_gold, mask / count)


def _rel_pairs(rel_gold: np.ndarray, use_arc_module: bool, loss_mask) -> tuple[np.ndarray, np.ndarray]:
    n = rel_gold.shape[0]
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    if use_arc_module:
        sel = upper & (rel_gold != 0)
    else:
        sel = upper if loss_mask is None else upper & np.asarray(loss_mask, dtype=bool)
    return np.nonzero(sel)


def rel_loss(
    s_rel, rel_gold: np.ndarray, use_arc_module: bool = True, loss_mask: np.ndarray | None = None
) -> Tensor:
    """Softmax cross-entropy over the upper triangle (i < j), averaged per pair.

    With the ARC module active only pairs carrying a gold relation count and
    logit ``k`` stands for label id ``k + 1``.  Without it NONE is class 0 and
    every (masked) upper-triangle pair counts.
    """
    s_rel = _tensor(s_rel)
    rel_gold = np.asarray(rel_gold)
    L = s_rel.shape[-1]
    ii, jj = _rel_pairs(rel_gold, use_arc_module, loss_mask)
    targets = rel_gold[ii, jj] - (1 if use_arc_module else 0)
    if len(targets) and targets.max() >= L:
        raise ValueError(f"gold label id {targets.max()} >= label count {L}")
    return T.softmax_cross_entropy(T.gather(s_rel, (ii, jj)), targets)


def joint_loss(arc_l, rel_l) -> Tensor:
    """Unweighted sum of the ARC and REL losses."""
    for v in (arc_l, rel_l):
        val = v.data if isinstance(v, Tensor) else v
        if not np.all(np.isfinite(val)):
            raise NonFiniteError("joint loss received a non-finite component")
    return T.add(_tensor(arc_l), _tensor(rel_l))


def batch_loss(
    model: BiaffineScorer,
    batch: Sequence[WindowInstance],
    masks: Sequence[np.ndarray],
    *,
    training: bool = True,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, float, float]:
    """Joint loss averaged over the windows of a padded batch.

    Each window contributes its own per-window ARC mean and REL mean, so the
    result equals the average of the single-window joint losses.
    """
    ids, lengths = model.batch_ids([w.tokens for w in batch])
    s_arc, s_rel = model.forward(ids, lengths, training=training, rng=rng)
    B, Tn = ids.shape
    use_arc = model.config.use_arc_module
    rel_idx, rel_t, rel_w = [], [], []
    if use_arc:
        arc_t = np.zeros((B, Tn, Tn))
        arc_w = np.zeros((B, Tn, Tn))
    for b, (w, m) in enumerate(zip(batch, masks)):
        n = w.n
        mask = np.asarray(m, dtype=bool) & ~np.eye(n, dtype=bool)
        if use_arc:
            arc_t[b, :n, :n] = w.arc_gold
            arc_w[b, :n, :n] = mask / (mask.sum() * B)
        ii, jj = _rel_pairs(w.rel_gold, use_arc, mask)
        if len(ii):
            rel_idx.append((np.full(len(ii), b), ii, jj))
            rel_t.append(w.rel_gold[ii, jj] - (1 if use_arc else 0))
            rel_w.append(np.full(len(ii), 1.0 / (len(ii) * B)))
    if rel_idx:
        idx = tuple(np.concatenate(parts) for parts in zip(*rel_idx))
        rl = T.softmax_cross_entropy(T.gather(s_rel, idx), np.concatenate(rel_t),
                                     np.concatenate(rel_w))
    else:
        rl = T.tsum(T.mul(s_rel, 0.0))
    if use_arc:
        al = T.bce_with_logits(s_arc, arc_t, arc_w)
        return joint_loss(al, rl), al.item(), rl.item()
    return rl, 0.0, rl.item()


@dataclass
class OptimizerState:
    lr: float = 5e-5
    mu: float = 0.9
    nu: float = 0.9
    epsilon: float = 1e-12
    clip_norm: float = 5.0
    decay: float = 0.75
    decay_interval: int = 5000
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self, step: int | None = None) -> float:
        t = self.step_count + 1 if step is None else step
        return self.lr * self.decay ** ((t - 1) // self.decay_interval)


class Adam:
    """Adam with global-norm clipping and stepwise learning-rate decay."""

    def __init__(self, params: dict[str, Tensor], state: OptimizerState | None = None, **hyper):
        self.params = params
        self.state = state if state is not None else OptimizerState(**hyper)

    def step(self) -> float:
        """Apply one update from ``p.grad``; returns the pre-clip gradient norm."""
        st = self.state
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {name}")
            grads[name] = g
        norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
        scale = st.clip_norm / norm if norm > st.clip_norm else 1.0
        lr = st.current_lr()
        st.step_count += 1
        t = st.step_count
        bc1 = 1 - st.mu ** t
        bc2 = 1 - st.nu ** t
        for name, p in self.params.items():
            g = grads[name] * scale if scale != 1.0 else grads[name]
            m = st.m.get(name)
            if m is None:
                m = st.m[name] = np.zeros_like(p.data)
                st.v[name] = np.zeros_like(p.data)
            v = st.v[name]
            m *= st.mu
            m += (1 - st.mu) * g
            v *= st.nu
            v += (1 - st.nu) * (g * g)
            p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + st.epsilon)).astype(p.data.dtype)
        return norm


@dataclass
class TrainResult:
    curve: list[dict] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    dev_scores: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    best_params: dict | None = None
    epochs_run: int = 0
    epoch_seconds: list[float] = field(default_factory=list)  # cumulative, incl. dev scoring


def _epoch_batches(windows, batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffled batches; within pools of 8 batches windows are grouped by
    length so padding stays small."""
    order = rng.permutation(len(windows))
    if batch_size == 1:
        return [[int(k)] for k in order]
    pool = 8 * batch_size
    batches = []
    for start in range(0, len(order), pool):
        chunk = sorted(order[start : start + pool], key=lambda k: (windows[k].n, k))
        batches += [chunk[s : s + batch_size] for s in range(0, len(chunk), batch_size)]
    return [batches[k] for k in rng.permutation(len(batches))]


def _epoch_mask(w: WindowInstance, seed: int, epoch: int) -> np.ndarray:
    key = [seed, epoch, zlib.crc32(w.doc_id.encode("utf-8")), w.index]
    return sample_mask(w.arc_gold, np.random.SeedSequence(key))


def train(
    model: BiaffineScorer,
    windows: Sequence[WindowInstance],
    *,
    epochs: int = 40,
    seed: int = 0,
    batch_size: int = 1,
    optimizer: OptimizerState | None = None,
    resample_masks: bool = True,
    dev_fn: Callable[[BiaffineScorer], float] | None = None,
    target_score: float | None = None,
    log_every: int = 0,
) -> TrainResult:
    """Train ``model`` in place.

    Windows are shuffled each epoch with a generator seeded from ``seed``.
    When ``resample_masks`` is set, each epoch after the first redraws the
    negative-pair sample.  With ``dev_fn`` a copy of the parameters of the
    best-scoring epoch is kept in ``result.best_params`` (the model itself
    keeps the final parameters); ``target_score`` stops training as soon as
    the dev score reaches it.
    """
    windows = [w for w in windows if w.arc_gold is not None]
    if not any(w.rel_gold.any() for w in windows):
        raise ValueError("training needs at least one window with a gold relation")
    rng = np.random.default_rng(seed)
    opt = Adam(model.trainable(), optimizer)
    result = TrainResult()
    best = -math.inf
    step = 0
    start = time.perf_counter()
    for epoch in range(epochs):
        losses = []
        for idx in _epoch_batches(windows, batch_size, rng):
            batch = [windows[k] for k in idx]
            masks = [
                _epoch_mask(w, seed, epoch) if resample_masks and epoch > 0 else w.loss_mask
                for w in batch
            ]
            model.zero_grad()
            try:
                loss, al, rl = batch_loss(model, batch, masks, training=True, rng=rng)
                loss.backward()
                opt.step()
            except NonFiniteError as exc:
                raise TrainingDiverged(
                    f"training diverged at epoch {epoch + 1}, step {step + 1}: {exc}"
                ) from exc
            step += 1
            joint = loss.item()
            losses.append(joint)
            result.curve.append({"step": step, "epoch": epoch + 1, "arc_loss": al,
                                 "rel_loss": rl, "joint": joint})
            if log_every and step % log_every == 0:
                logger.info("epoch %d step %d joint %.4f", epoch + 1, step, joint)
        result.epoch_losses.append(float(np.mean(losses)))
        result.epochs_run = epoch + 1
        msg = f"epoch {epoch + 1}: mean joint loss {result.epoch_losses[-1]:.4f}"
        if dev_fn is not None:
            score = float(dev_fn(model))
            result.dev_scores.append(score)
            msg += f", dev {score:.4f}"
            if score > best:
                best, result.best_epoch = score, epoch + 1
                result.best_params = {k: p.data.copy() for k, p in model.params.items()}
        result.epoch_seconds.append(time.perf_counter() - start)
        logger.info(msg)
        if target_score is not None and result.dev_scores and result.dev_scores[-1] >= target_score:
            break
    return result


LOSS_CURVE_HEADER = "# tempograph-loss-curve version 1"


def write_loss_curve(path, curve: Sequence[dict]) -> None:
    """Tab-separated loss curve, one row per optimizer step, after a ``#`` header line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(LOSS_CURVE_HEADER + "\n")
        fh.write("step\tepoch\tarc_loss\trel_loss\tjoint\n")
        for r in curve:
            fh.write(f"{r['step']}\t{r['epoch']}\t{r['arc_loss']:.8g}\t{r['rel_loss']:.8g}\t{r['joint']:.8g}\n")
