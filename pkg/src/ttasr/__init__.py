"""Desk-scale Mandarin transformer-transducer toolkit.

Pipeline pieces: mix-bandwidth log-mel features over 8/16 kHz audio,
three Chinese modeling-unit tokenizers, a conv + truncated-self-attention
transducer with exact reverse-mode gradients, RNN-T/CTC losses with
brute-force oracles, greedy/beam decoding, WER/CER scoring, and a
two-phase trainer, all behind one `ttasr` command.
"""

__version__ = "0.1.0"
