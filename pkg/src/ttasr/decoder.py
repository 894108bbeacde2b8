"""Frame-synchronous greedy and beam decoding over the transducer.

Both decoders walk the encoder frames left to right; a hypothesis emits
labels within the current frame (capped per frame) and consumes the frame
by taking blank. Beam search prunes the union of frame-completed and
still-emitting hypotheses to the beam width after every emission wave,
merging equal label sequences by log-add; with width 1 and unique
argmaxes this reduces exactly to the greedy walk.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import no_grad

DEFAULT_MAX_SYMBOLS_PER_FRAME = 5


@dataclass
class Hypothesis:
    """Emitted label ids (never blank) with their accumulated log-score."""

    ids: tuple[int, ...]
    log_prob: float
    state: list = field(default=None, repr=False)
    q: np.ndarray = field(default=None, repr=False)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def _sort_key(item):
    origin, hyp = item
    return (-hyp.log_prob, len(hyp.ids), hyp.ids)


def greedy_decode(
    model,
    feat,
    max_symbols_per_frame: int = DEFAULT_MAX_SYMBOLS_PER_FRAME,
) -> Hypothesis:
    """Follow the argmax of the joint at every step.

    Non-blank argmax emits and advances the label history (at most
    max_symbols_per_frame times per frame); blank consumes the frame.
    """
    if max_symbols_per_frame < 1:
        raise ValueError("max_symbols_per_frame must be >= 1")
    with no_grad():
        acoustic = model.encoder(feat).data
        label_enc = model.label_encoder
        q, state = label_enc.step(0, label_enc.initial_state())
        ids: list[int] = []
        log_prob = 0.0
        for t in range(acoustic.shape[0]):
            emitted = 0
            while True:
                ll = _log_softmax(model.joint.single(acoustic[t], q.data[0]))
                k = int(np.argmax(ll))
                if k == 0 or emitted >= max_symbols_per_frame:
                    log_prob += float(ll[0])
                    break
                ids.append(k)
                log_prob += float(ll[k])
                q, state = label_enc.step(k, state)
                emitted += 1
    return Hypothesis(ids=tuple(ids), log_prob=log_prob)


def beam_decode(
    model,
    feat,
    beam_width: int,
    max_symbols_per_frame: int = DEFAULT_MAX_SYMBOLS_PER_FRAME,
) -> Hypothesis:
    """Width-limited search over emission orders, merging equal sequences.

    Every wave expands all live hypotheses by one symbol; the union of
    frame-completed and live hypotheses is pruned to beam_width with a
    deterministic total order (score, then shorter ids, then lexicographic).
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    if max_symbols_per_frame < 1:
        raise ValueError("max_symbols_per_frame must be >= 1")
    with no_grad():
        acoustic = model.encoder(feat).data
        label_enc = model.label_encoder
        q0, state0 = label_enc.step(0, label_enc.initial_state())
        beam = [Hypothesis(ids=(), log_prob=0.0, state=state0, q=q0.data[0])]

        for t in range(acoustic.shape[0]):
            done: dict[tuple, Hypothesis] = {}
            active = beam
            # wave max_symbols_per_frame takes blanks only, capping emissions
            for wave in range(max_symbols_per_frame + 1):
                if not active:
                    break
                children: dict[tuple, Hypothesis] = {}
                for hyp in active:
                    ll = _log_softmax(model.joint.single(acoustic[t], hyp.q))
                    blank_score = hyp.log_prob + float(ll[0])
                    settled = done.get(hyp.ids)
                    if settled is None:
                        done[hyp.ids] = Hypothesis(
                            ids=hyp.ids, log_prob=blank_score,
                            state=hyp.state, q=hyp.q,
                        )
                    else:
                        settled.log_prob = float(
                            np.logaddexp(settled.log_prob, blank_score)
                        )
                    if wave < max_symbols_per_frame:
                        for k in range(1, ll.size):
                            child_ids = hyp.ids + (k,)
                            # distinct parents cannot collide on child ids
                            children[child_ids] = Hypothesis(
                                ids=child_ids,
                                log_prob=hyp.log_prob + float(ll[k]),
                                state=hyp.state,  # parent state; stepped if kept
                                q=hyp.q,
                            )
                pool = [("done", h) for h in done.values()]
                pool += [("live", h) for h in children.values()]
                pool.sort(key=_sort_key)
                kept = pool[:beam_width]
                done = {h.ids: h for origin, h in kept if origin == "done"}
                active = []
                for origin, h in kept:
                    if origin != "live":
                        continue
                    q, state = label_enc.step(h.ids[-1], h.state)
                    h.state, h.q = state, q.data[0]
                    active.append(h)
            beam = sorted(
                done.values(), key=lambda h: (-h.log_prob, len(h.ids), h.ids)
            )[:beam_width]

        best = beam[0]
    return Hypothesis(ids=best.ids, log_prob=best.log_prob)
