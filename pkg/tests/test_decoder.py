import numpy as np
import pytest

from conftest import micro_config, random_features
from ttasr.decoder import beam_decode, greedy_decode
from ttasr.network import TransducerModel


def tiny_model(seed: int) -> TransducerModel:
    return TransducerModel(
        micro_config(
            vocab_size=4,
            feat_dim=8,
            conv_channels=(2, 2, 2),
            conv_kernels=((3, 3), (3, 3), (3, 3)),
            num_blocks=1,
            seed=seed,
        )
    )


def tiny_features(seed: int):
    rng = np.random.default_rng(seed + 1000)
    return random_features(rng, d=8, frames=12)


class TestGreedy:
    def test_always_blank_model_emits_nothing(self):
        model = tiny_model(0)
        model.joint.b2.data[0] += 50.0
        hyp = greedy_decode(model, tiny_features(0))
        assert hyp.ids == ()
        assert hyp.log_prob <= 0.0

    def test_symbol_cap_bounds_length(self):
        model = tiny_model(1)
        model.joint.b2.data[2] += 50.0  # always prefers one label
        feat = tiny_features(1)
        hyp = greedy_decode(model, feat, max_symbols_per_frame=1)
        frames = model.encoder.frontend.output_frames(feat.num_frames)
        assert len(hyp.ids) <= frames

    def test_deterministic(self):
        model = tiny_model(2)
        feat = tiny_features(2)
        a = greedy_decode(model, feat)
        b = greedy_decode(model, feat)
        assert a.ids == b.ids and a.log_prob == b.log_prob

    def test_no_blank_emitted(self):
        for seed in range(5):
            hyp = greedy_decode(tiny_model(seed), tiny_features(seed))
            assert 0 not in hyp.ids

    def test_cap_validated(self):
        with pytest.raises(ValueError):
            greedy_decode(tiny_model(0), tiny_features(0), max_symbols_per_frame=0)


class TestBeam:
    def test_width_validated(self):
        with pytest.raises(ValueError):
            beam_decode(tiny_model(0), tiny_features(0), beam_width=0)

    def test_width_one_matches_greedy(self):
        """With unique per-step argmaxes the width-1 beam is the greedy walk."""
        for seed in range(50):
            model = tiny_model(seed)
            feat = tiny_features(seed)
            greedy = greedy_decode(model, feat)
            beam = beam_decode(model, feat, beam_width=1)
            assert beam.ids == greedy.ids, seed
            assert beam.log_prob == pytest.approx(greedy.log_prob, abs=1e-9)

    def test_score_monotone_in_width(self):
        for seed in range(10):
            model = tiny_model(seed)
            feat = tiny_features(seed)
            scores = [
                beam_decode(model, feat, beam_width=w).log_prob
                for w in (1, 2, 3, 5)
            ]
            for narrow, wide in zip(scores, scores[1:]):
                assert wide >= narrow - 1e-12

    def test_no_blank_and_score_bound(self):
        for seed in range(5):
            hyp = beam_decode(tiny_model(seed), tiny_features(seed), beam_width=3)
            assert 0 not in hyp.ids
            assert hyp.log_prob <= 0.0

    def test_deterministic(self):
        model = tiny_model(3)
        feat = tiny_features(3)
        a = beam_decode(model, feat, beam_width=4)
        b = beam_decode(model, feat, beam_width=4)
        assert a.ids == b.ids and a.log_prob == b.log_prob
