"""Two-phase optimization: CTC pretraining of the acoustic encoder, then
transducer fine-tuning of the full model.

The learning rate follows the warmup schedule
    lr(step) = lambda * d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)
under Adam(0.9, 0.98, 1e-9) with global-norm gradient clipping. Training
is single-threaded and, given a seed, bit-exactly resumable from any
checkpoint in the float32 default dtype: checkpoints carry parameters,
optimizer moments, the step counter, and the sampler RNG state.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import Utterance, _resolve_audio_path, read_wav
from .errors import CheckpointError, ConfigError, NumericError
from .features import FbankConfig, FeatureMatrix, compute_fbank, normalize
from .network import (
    CtcModel,
    ModelConfig,
    TransducerModel,
    load_checkpoint,
    load_parameters,
    save_checkpoint,
)
from .tokenizer import Lexicon, ModelingUnit, Vocabulary, build_vocabulary, to_units

PHASES = ("ctc_pretrain", "rnnt_finetune")


@dataclass
class TrainConfig:
    manifest: str = ""
    out_dir: str = "runs/default"
    unit: str = "syllable_tone"
    vocab: str | None = None  # path; built from the manifest when omitted
    lexicon: str | None = None  # path; packaged lexicon when omitted
    phase: str = "rnnt_finetune"
    warmup_steps: int = 8000
    lam: float = 0.5  # schedule scale, JSON key "lambda"
    d_model: int | None = None  # schedule dimension; model d_model when None
    batch_size: int = 8
    max_steps: int = 200
    seed: int = 0
    grad_clip: float = 5.0
    log_every: int = 10
    checkpoint_every: int = 100
    init_encoder_from: str | None = None  # CTC checkpoint to transplant

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        return cls(**data)


def lr_schedule(step: int, config: TrainConfig, d_model: int | None = None) -> float:
    """Linear warmup to step = warmup_steps, then inverse-sqrt decay."""
    if step < 1:
        raise ValueError("schedule steps are 1-based")
    dim = config.d_model if config.d_model is not None else d_model
    if dim is None:
        raise ValueError("d_model needed for the schedule")
    return (
        config.lam
        * dim ** -0.5
        * min(step ** -0.5, step * config.warmup_steps ** -1.5)
    )


class Adam:
    """Adam with bias correction; moments keyed by parameter name."""

    beta1 = 0.9
    beta2 = 0.98
    eps = 1e-9

    def __init__(self, params: dict):
        self.params = params
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self, lr: float, grad_clip: float | None = None):
        grads = {
            k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in self.params.items()
        }
        if grad_clip is not None:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > grad_clip:
                scale = grad_clip / norm
                grads = {k: g * scale for k, g in grads.items()}
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, tensor in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            tensor.data = tensor.data - (lr * update).astype(tensor.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for k, t in self.params.items():
            self.m[k] = arrays[f"adam.m.{k}"].astype(t.data.dtype).reshape(t.data.shape)
            self.v[k] = arrays[f"adam.v.{k}"].astype(t.data.dtype).reshape(t.data.shape)


@dataclass
class TrainItem:
    """One prepared utterance: normalized features plus label ids."""

    audio: str
    feat: FeatureMatrix
    label_ids: tuple[int, ...]
    text: str


def prepare_items(
    utterances: list[Utterance],
    unit: ModelingUnit,
    vocab: Vocabulary,
    lexicon: Lexicon | None,
    manifest_path: str | None = None,
    fbank: FbankConfig = FbankConfig(),
    audio_by_path: dict | None = None,
) -> list[TrainItem]:
    """Featurize and label-encode a manifest (features cached in memory)."""
    items = []
    for utt in utterances:
        if not utt.text:
            raise ValueError(f"{utt.audio_path}: training utterance has empty text")
        if audio_by_path is not None and utt.audio_path in audio_by_path:
            audio = audio_by_path[utt.audio_path]
        else:
            path = (
                _resolve_audio_path(manifest_path, utt.audio_path)
                if manifest_path
                else utt.audio_path
            )
            audio = read_wav(path)
        feat = normalize(compute_fbank(audio, fbank))
        ids = tuple(vocab.id_of(t) for t in to_units(utt.text, unit, lexicon))
        items.append(
            TrainItem(audio=utt.audio_path, feat=feat, label_ids=ids, text=utt.text)
        )
    return items


def _build_model(phase: str, model_cfg: ModelConfig):
    return CtcModel(model_cfg) if phase == "ctc_pretrain" else TransducerModel(model_cfg)


def _item_loss(model, item: TrainItem):
    """Scalar loss node or None (infeasible CTC item)."""
    if isinstance(model, CtcModel):
        node, result = model.loss(item.feat, item.label_ids)
        return node
    return model.loss(item.feat, item.label_ids)


class TrainLogger:
    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def log(self, **fields):
        self._fh.write(json.dumps(fields) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def train_loop(
    items: list[TrainItem],
    model,
    config: TrainConfig,
    out_dir,
    resume_from: str | None = None,
    loss_callback=None,
) -> Path:
    """Run forward/loss/backward/update steps; returns the final checkpoint.

    Deterministic for a fixed seed; resuming from a step-k checkpoint
    reproduces the uninterrupted run bit-exactly in float32.
    loss_callback(step, mean_loss) runs every step; a truthy return stops
    training early (the final checkpoint is still written).
    """
    if not items:
        raise ValueError("no training items")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    optimizer = Adam(model.parameters())
    rng = np.random.default_rng(config.seed)
    step = 0

    if resume_from is not None:
        ckpt_cfg, arrays, extra = load_checkpoint(resume_from)
        if ckpt_cfg != model.config:
            raise CheckpointError("checkpoint model config differs from the run config")
        if extra.get("phase") != config.phase:
            raise CheckpointError(
                f"checkpoint phase {extra.get('phase')!r} != run phase {config.phase!r}"
            )
        load_parameters(model, {k: v for k, v in arrays.items() if not k.startswith("adam.")})
        optimizer.load_state_arrays(arrays)
        step = int(extra["step"])
        optimizer.t = int(extra.get("adam_t", step))
        rng.bit_generator.state = extra["rng_state"]

    logger = TrainLogger(out_dir / "train_log.jsonl")
    d_model = model.config.d_model
    last_good = None
    try:
        while step < config.max_steps:
            step += 1
            t0 = time.monotonic()
            batch_idx = rng.permutation(len(items))[: config.batch_size]
            model.zero_grad()
            nodes = []
            skipped = 0
            for i in batch_idx:
                node = _item_loss(model, items[int(i)])
                if node is None:
                    skipped += 1
                    continue
                nodes.append(node)
            losses = [float(n.data) for n in nodes]
            for node in nodes:
                node.backward(np.asarray(1.0 / len(nodes), dtype=node.data.dtype))
            mean_loss = float(np.mean(losses)) if losses else float("nan")
            if losses and not math.isfinite(mean_loss):
                raise NumericError(
                    f"non-finite loss at step {step}; last good checkpoint: "
                    f"{last_good}"
                )
            lr = lr_schedule(step, config, d_model)
            if losses:
                optimizer.step(lr, grad_clip=config.grad_clip)
            wall_ms = 1000.0 * (time.monotonic() - t0)
            stop = bool(loss_callback(step, mean_loss)) if loss_callback else False
            if step % config.log_every == 0 or step == config.max_steps:
                entry = dict(
                    step=step, phase=config.phase, loss=mean_loss, lr=lr,
                    wall_ms=round(wall_ms, 3),
                )
                if skipped:
                    entry["skipped_infeasible"] = skipped
                logger.log(**entry)
            if config.checkpoint_every and step % config.checkpoint_every == 0:
                last_good = _save_state(
                    out_dir / f"{config.phase}_step{step}.ckpt",
                    model, optimizer, rng, step, config,
                )
            if stop:
                break
        final = _save_state(
            out_dir / f"{config.phase}_final.ckpt", model, optimizer, rng,
            step, config,
        )
    finally:
        logger.close()
    return final


def _save_state(path, model, optimizer, rng, step, config: TrainConfig) -> Path:
    arrays = {k: t.data for k, t in model.parameters().items()}
    arrays.update(optimizer.state_arrays())
    save_checkpoint(
        path,
        model.config,
        arrays,
        extra={
            "step": step,
            "adam_t": optimizer.t,
            "phase": config.phase,
            "rng_state": rng.bit_generator.state,
            "train_config": config.to_dict(),
        },
    )
    return Path(path)


def synthetic_corpus(
    n: int, seed: int = 0, min_duration: float = 1.0, duration_step: float = 0.05
) -> list[tuple[str, "AudioBuffer", Utterance]]:
    """Deterministic desk-scale corpus: seeded audio paired with built-in
    phrases, alternating 8 kHz and 16 kHz."""
    from .audio_io import synth_utterance
    from .tokenizer import default_phrases

    if n < 1:
        raise ValueError("corpus size must be >= 1")
    phrases = default_phrases()
    out = []
    for i in range(n):
        rate = 16000 if i % 2 == 0 else 8000
        duration = min_duration + duration_step * (i % 5)
        audio = synth_utterance(seed + i, rate, duration)
        name = f"utt{i:04d}.wav"
        out.append(
            (name, audio, Utterance(audio_path=name, sample_rate=rate,
                                    text=phrases[i % len(phrases)]))
        )
    return out


@dataclass
class OverfitReport:
    """Loss curves and WER trajectory of one overfit run."""

    unit: str
    steps_to_zero_wer: int | None
    final_wer: float
    ctc_losses: list = field(default_factory=list)
    rnnt_losses: list = field(default_factory=list)
    wer_trajectory: list = field(default_factory=list)
    wall_seconds: float = 0.0


def _train_set_wer(model, items, unit, vocab, lexicon) -> float:
    from .decoder import greedy_decode
    from .metrics import aggregate, score_pair

    counts = []
    for item in items:
        hyp = greedy_decode(model, item.feat)
        tokens = [vocab.token_of(i) for i in hyp.ids]
        counts.append(score_pair(item.text, tokens, unit, lexicon).wer)
    return aggregate(counts).error_rate


def overfit_tiny_corpus(
    unit: ModelingUnit | str,
    out_dir,
    num_utterances: int = 20,
    seed: int = 0,
    ctc_steps: int = 150,
    max_finetune_steps: int = 2000,
    eval_every: int = 50,
    batch_size: int = 8,
) -> OverfitReport:
    """Memorize a synthetic corpus with the tiny model, CTC phase first.

    Runs CTC pretraining of the encoder, transplants it into the
    transducer, fine-tunes until the greedy train-set WER reaches zero
    (or the step budget runs out), and reports both loss curves.
    """
    unit = ModelingUnit.parse(unit) if isinstance(unit, str) else unit
    out_dir = Path(out_dir)
    t_start = time.monotonic()

    corpus = synthetic_corpus(num_utterances, seed=seed)
    lexicon = Lexicon.default() if unit.needs_lexicon else None
    utterances = [utt for _, _, utt in corpus]
    audio_by_path = {name: audio for name, audio, _ in corpus}
    vocab = build_vocabulary((u.text for u in utterances), unit, lexicon)
    items = prepare_items(
        utterances, unit, vocab, lexicon, audio_by_path=audio_by_path
    )

    model_cfg = ModelConfig.tiny(vocab_size=len(vocab), seed=seed)
    schedule = dict(warmup_steps=200, lam=0.5, batch_size=batch_size, seed=seed,
                    checkpoint_every=0, log_every=50)

    report = OverfitReport(unit=unit.value, steps_to_zero_wer=None, final_wer=1.0)

    ctc_cfg = TrainConfig(
        out_dir=str(out_dir / "ctc"), unit=unit.value, phase="ctc_pretrain",
        max_steps=ctc_steps, **schedule,
    )
    ctc_model = CtcModel(model_cfg)
    ctc_ckpt = train_loop(
        items, ctc_model, ctc_cfg, ctc_cfg.out_dir,
        loss_callback=lambda s, l: report.ctc_losses.append(l),
    )

    rnnt_cfg = TrainConfig(
        out_dir=str(out_dir / "rnnt"), unit=unit.value, phase="rnnt_finetune",
        max_steps=max_finetune_steps, **schedule,
    )
    model = TransducerModel(model_cfg)
    _, arrays, _ = load_checkpoint(ctc_ckpt)
    load_parameters(model, arrays, prefix="encoder.")

    def callback(step, loss):
        report.rnnt_losses.append(loss)
        if step % eval_every == 0 or step == max_finetune_steps:
            wer = _train_set_wer(model, items, unit, vocab, lexicon)
            report.wer_trajectory.append((step, wer))
            if wer == 0.0:
                report.steps_to_zero_wer = step
                return True
        return False

    train_loop(items, model, rnnt_cfg, rnnt_cfg.out_dir, loss_callback=callback)
    report.final_wer = (
        report.wer_trajectory[-1][1] if report.wer_trajectory else 1.0
    )
    report.wall_seconds = time.monotonic() - t_start
    return report


def run_phase(
    config: TrainConfig,
    model_cfg: ModelConfig | None = None,
    resume: str | None = None,
) -> Path:
    """File-based entry point: manifest in, final checkpoint out."""
    from .audio_io import load_manifest

    utterances = load_manifest(config.manifest)
    if not utterances:
        raise ValueError(f"{config.manifest}: empty manifest")
    unit = ModelingUnit.parse(config.unit)
    lexicon = (
        Lexicon.from_tsv(config.lexicon) if config.lexicon
        else (Lexicon.default() if unit.needs_lexicon else None)
    )
    if config.vocab:
        vocab = Vocabulary.load(config.vocab)
    else:
        vocab = build_vocabulary((u.text for u in utterances), unit, lexicon)
    if model_cfg is None:
        model_cfg = ModelConfig(vocab_size=len(vocab))
    if model_cfg.vocab_size != len(vocab):
        raise ConfigError(
            f"model vocab_size {model_cfg.vocab_size} != vocabulary size {len(vocab)}"
        )
    items = prepare_items(
        utterances, unit, vocab, lexicon, manifest_path=config.manifest
    )
    model = _build_model(config.phase, model_cfg)
    if config.phase == "rnnt_finetune" and config.init_encoder_from:
        _, arrays, _ = load_checkpoint(config.init_encoder_from)
        load_parameters(model, arrays, prefix="encoder.")
    final = train_loop(items, model, config, config.out_dir, resume_from=resume)
    # stamp decode metadata so a checkpoint is self-contained
    cfg, arrays, extra = load_checkpoint(final)
    extra.update({"unit": unit.value, "vocab_tokens": list(vocab.tokens)})
    save_checkpoint(final, cfg, arrays, extra=extra)
    return final
