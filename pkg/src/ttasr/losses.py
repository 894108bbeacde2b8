"""Transducer and CTC losses as log-space forward-backward programs.

Both losses marginalize over monotone alignments between acoustic frames
and label tokens, with the blank id 0 meaning "consume one frame". The
transducer walk starts at (t=0, u=0); a label emission at (t, u) moves to
(t, u+1), a blank moves to (t+1, u), and every complete path leaves the
lattice through the final blank at (T-1, U). All recursions run in
float64 log space with a stable two-argument log-add, and the gradients
are exact (they come from the same alpha/beta quantities, not from
differentiating through the recursion numerically).

Small-instance brute-force enumerators are provided as independent
oracles; they share no recursion code with the DP implementations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, custom_op, log_softmax

NEG_INF = float("-inf")
_NORM_ATOL = 1e-8
_BRUTE_MAX_T = 5
_BRUTE_MAX_U = 4


def _lae(a: float, b: float) -> float:
    """log(exp(a) + exp(b)) without overflow."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    d = a - b
    if d >= 0.0:
        return a + math.log1p(math.exp(-d))
    return b + math.log1p(math.exp(d))


@dataclass
class LossResult:
    """Negative log-likelihood in nats plus d loss / d log_probs."""

    loss: float
    grad: np.ndarray
    infeasible: bool = field(default=False)


def _check_lattice(log_probs: np.ndarray, labels, expect_dims: int) -> np.ndarray:
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != expect_dims:
        raise ValueError(f"expected a {expect_dims}-D log-prob array, got {lp.ndim}-D")
    vocab = lp.shape[-1]
    for y in labels:
        if not 1 <= y < vocab:
            raise ValueError(f"label id {y} outside [1, {vocab - 1}]")
    return lp


def _check_normalized(lp: np.ndarray) -> None:
    lse = np.log(np.exp(lp - lp.max(axis=-1, keepdims=True)).sum(axis=-1)) + lp.max(
        axis=-1
    )
    if not np.all(np.abs(lse) < _NORM_ATOL):
        raise ValueError("log-prob slices are not normalized distributions")


def rnnt_loss(log_probs, labels, check_normalized: bool = True) -> LossResult:
    """Exact transducer loss and gradient for one utterance.

    log_probs: (T, U+1, V+1) with entry [t, u, k] = log p(k | t, u).
    labels: U ids in [1, V].
    """
    labels = list(labels)
    lp = _check_lattice(log_probs, labels, 3)
    num_frames, u_rows, _ = lp.shape
    num_labels = len(labels)
    if u_rows != num_labels + 1:
        raise ValueError(
            f"lattice has {u_rows} label rows but {num_labels} labels need "
            f"{num_labels + 1}"
        )
    if num_frames < 1:
        raise ValueError("need at least one frame")
    if check_normalized:
        _check_normalized(lp)

    blank = lp[:, :, 0]  # (T, U+1)
    if num_labels:
        emit = lp[:, np.arange(num_labels), labels]  # (T, U), edge (t,u)->(t,u+1)
    else:
        emit = np.zeros((num_frames, 0))

    alpha = np.full((num_frames, num_labels + 1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(num_frames):
        row = alpha[t]
        if t > 0:
            row[:] = alpha[t - 1] + blank[t - 1]
        for u in range(1, num_labels + 1):
            row[u] = _lae(row[u], row[u - 1] + emit[t, u - 1])

    log_p = alpha[num_frames - 1, num_labels] + blank[num_frames - 1, num_labels]

    # beta[t, u]: completion log-prob when leaving node (t, u); the exit
    # row beta_ext[T, u] is 0 at u=U (the terminal blank lands there).
    beta = np.full((num_frames, num_labels + 1), NEG_INF)
    for t in range(num_frames - 1, -1, -1):
        if t == num_frames - 1:
            nxt = np.full(num_labels + 1, NEG_INF)
            nxt[num_labels] = 0.0
        else:
            nxt = beta[t + 1]
        row = beta[t]
        row[:] = blank[t] + nxt
        for u in range(num_labels - 1, -1, -1):
            row[u] = _lae(row[u], emit[t, u] + row[u + 1])

    grad = np.zeros_like(lp)
    exit_next = np.vstack([beta[1:], np.full((1, num_labels + 1), NEG_INF)])
    exit_next[num_frames - 1, num_labels] = 0.0
    grad[:, :, 0] = -np.exp(alpha + blank + exit_next - log_p)
    if num_labels:
        tt, uu = np.meshgrid(
            np.arange(num_frames), np.arange(num_labels), indexing="ij"
        )
        grad[tt, uu, np.asarray(labels)[uu]] = -np.exp(
            alpha[:, :-1] + emit + beta[:, 1:] - log_p
        )
    return LossResult(loss=-log_p, grad=grad)


def brute_force_rnnt(log_probs, labels) -> float:
    """Path-enumeration oracle for tiny transducer instances.

    Walks every interleaving of U label moves among the first T-1+U
    steps, always finishing with the terminal blank at (T-1, U).
    """
    labels = list(labels)
    lp = _check_lattice(log_probs, labels, 3)
    num_frames = lp.shape[0]
    num_labels = len(labels)
    if num_frames > _BRUTE_MAX_T or num_labels > _BRUTE_MAX_U:
        raise ValueError(
            f"brute force capped at T<={_BRUTE_MAX_T}, U<={_BRUTE_MAX_U}"
        )
    total = NEG_INF
    moves = num_frames - 1 + num_labels
    for emit_positions in itertools.combinations(range(moves), num_labels):
        t = u = 0
        score = 0.0
        for step in range(moves):
            if step in emit_positions:
                score += lp[t, u, labels[u]]
                u += 1
            else:
                score += lp[t, u, 0]
                t += 1
        score += lp[num_frames - 1, num_labels, 0]  # terminal blank
        total = _lae(total, score)
    return -total


def ctc_min_frames(labels) -> int:
    """Shortest frame count that can carry the label sequence."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_loss(log_probs, labels, check_normalized: bool = True) -> LossResult:
    """Exact CTC loss and gradient for one utterance.

    log_probs: (T, V+1) frame posteriors, blank id 0. Infeasible label
    lengths return a tagged infinite loss instead of raising, so training
    can skip the item.
    """
    labels = list(labels)
    lp = _check_lattice(log_probs, labels, 2)
    num_frames, vocab = lp.shape
    if check_normalized:
        _check_normalized(lp)
    if ctc_min_frames(labels) > num_frames:
        return LossResult(loss=math.inf, grad=np.zeros_like(lp), infeasible=True)

    expanded = [0]
    for y in labels:
        expanded.extend((y, 0))
    ext = np.asarray(expanded)
    num_states = ext.size
    # skip transition s-2 -> s allowed where the expanded label differs
    can_skip = np.zeros(num_states, dtype=bool)
    can_skip[2:] = (ext[2:] != 0) & (ext[2:] != ext[:-2])

    frame_ext = lp[:, ext]  # (T, S)
    alpha = np.full((num_frames, num_states), NEG_INF)
    alpha[0, 0] = frame_ext[0, 0]
    if num_states > 1:
        alpha[0, 1] = frame_ext[0, 1]
    for t in range(1, num_frames):
        stay = alpha[t - 1]
        step = np.concatenate(([NEG_INF], alpha[t - 1, :-1]))
        prev = np.logaddexp(stay, step)
        skip = np.concatenate(([NEG_INF, NEG_INF], alpha[t - 1, :-2]))[:num_states]
        prev = np.where(can_skip, np.logaddexp(prev, skip), prev)
        alpha[t] = frame_ext[t] + prev

    log_p = alpha[num_frames - 1, num_states - 1]
    if num_states > 1:
        log_p = _lae(log_p, alpha[num_frames - 1, num_states - 2])

    beta = np.full((num_frames, num_states), NEG_INF)
    beta[num_frames - 1, num_states - 1] = frame_ext[num_frames - 1, num_states - 1]
    if num_states > 1:
        beta[num_frames - 1, num_states - 2] = frame_ext[
            num_frames - 1, num_states - 2
        ]
    for t in range(num_frames - 2, -1, -1):
        stay = beta[t + 1]
        step = np.concatenate((beta[t + 1, 1:], [NEG_INF]))
        nxt = np.logaddexp(stay, step)
        skip_src = np.concatenate((beta[t + 1, 2:], [NEG_INF, NEG_INF]))[:num_states]
        can_skip_fwd = np.zeros(num_states, dtype=bool)
        can_skip_fwd[:-2] = can_skip[2:]
        nxt = np.where(can_skip_fwd, np.logaddexp(nxt, skip_src), nxt)
        beta[t] = frame_ext[t] + nxt

    # posterior over expanded states; own emission is counted twice in
    # alpha + beta, so subtract it once (guarding -inf - -inf)
    dead = np.isneginf(alpha) | np.isneginf(beta)
    occ_log = np.where(dead, NEG_INF, alpha + beta - np.where(dead, 0.0, frame_ext))
    occupancy = np.exp(occ_log - log_p)
    grad = np.zeros_like(lp)
    np.add.at(grad.T, ext, occupancy.T)
    grad = -grad
    return LossResult(loss=-log_p, grad=grad)


def brute_force_ctc(log_probs, labels) -> float:
    """Full enumeration oracle: every frame labeling whose collapse matches.

    Independent of the alpha/beta recursion and of any path-topology
    convention: it scores all (V+1)^T frame label sequences directly.
    """
    labels = list(labels)
    lp = _check_lattice(log_probs, labels, 2)
    num_frames, vocab = lp.shape
    if num_frames > _BRUTE_MAX_T:
        raise ValueError(f"brute force capped at T<={_BRUTE_MAX_T}")
    target = tuple(labels)
    total = NEG_INF
    for path in itertools.product(range(vocab), repeat=num_frames):
        collapsed = []
        prev = None
        for k in path:
            if k != prev and k != 0:
                collapsed.append(k)
            prev = k
        if tuple(collapsed) != target:
            continue
        score = sum(lp[t, k] for t, k in enumerate(path))
        total = _lae(total, score)
    return -total


def grad_wrt_logits(log_probs: np.ndarray, grad_log_probs: np.ndarray) -> np.ndarray:
    """Push a log-prob gradient through the softmax that produced it."""
    probs = np.exp(log_probs)
    return grad_log_probs - probs * grad_log_probs.sum(axis=-1, keepdims=True)


def rnnt_loss_node(logits: Tensor, labels) -> Tensor:
    """Scalar graph node: transducer loss of a (T, U+1, V+1) logits tensor."""
    lp = log_softmax(
        Tensor(logits.data.astype(np.float64))
    ).data  # normalization in float64 regardless of model dtype
    result = rnnt_loss(lp, labels, check_normalized=False)
    glogits = grad_wrt_logits(lp, result.grad).astype(logits.data.dtype)
    loss = np.asarray(result.loss, dtype=logits.data.dtype)
    return custom_op(loss, (logits,), lambda g: (g * glogits,))


def ctc_loss_node(logits: Tensor, labels) -> tuple[Tensor | None, LossResult]:
    """Scalar graph node for CTC on (T, V+1) logits; None when infeasible."""
    lp = log_softmax(Tensor(logits.data.astype(np.float64))).data
    result = ctc_loss(lp, labels, check_normalized=False)
    if result.infeasible:
        return None, result
    glogits = grad_wrt_logits(lp, result.grad).astype(logits.data.dtype)
    loss = np.asarray(result.loss, dtype=logits.data.dtype)
    return custom_op(loss, (logits,), lambda g: (g * glogits,)), result
