import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttasr.errors import OovError
from ttasr.tokenizer import (
    BLANK_TOKEN,
    Lexicon,
    ModelingUnit,
    TokenSequence,
    Vocabulary,
    build_vocabulary,
    decode,
    default_phrases,
    encode,
    to_units,
)

IF = ModelingUnit.INITIAL_FINAL_TONE
SYL = ModelingUnit.SYLLABLE_TONE
CHAR = ModelingUnit.CHARACTER


@pytest.fixture(scope="module")
def lexicon():
    return Lexicon.default()


class TestToUnits:
    def test_three_renderings(self, lexicon):
        assert to_units("您好", IF, lexicon) == ["n", "in2", "#", "h", "ao3", "#"]
        assert to_units("您好", SYL, lexicon) == ["nin2", "hao3"]
        assert to_units("您好", CHAR) == ["您", "好"]

    def test_empty_text(self, lexicon):
        for unit in ModelingUnit:
            assert to_units("", unit, lexicon) == []

    def test_zero_initial_syllable(self, lexicon):
        # no initial token: final-with-tone then the separator
        assert to_units("爱", IF, lexicon) == ["ai4", "#"]
        assert to_units("安", IF, lexicon) == ["an1", "#"]

    def test_oov_reports_char_and_offset(self, lexicon):
        with pytest.raises(OovError) as exc:
            to_units("好Q", SYL, lexicon)
        assert exc.value.char == "Q"
        assert exc.value.offset == 1

    def test_lexicon_required(self):
        with pytest.raises(ValueError):
            to_units("好", SYL, None)


class TestVocabulary:
    def test_build_sizes(self, lexicon):
        assert len(build_vocabulary(["您好"], SYL, lexicon)) == 3
        assert len(build_vocabulary(["您好"], IF, lexicon)) == 6

    def test_blank_first_then_first_seen(self, lexicon):
        vocab = build_vocabulary(["您好"], IF, lexicon)
        assert vocab.tokens == (BLANK_TOKEN, "n", "in2", "#", "h", "ao3")

    def test_empty_corpus(self, lexicon):
        with pytest.raises(ValueError):
            build_vocabulary([], SYL, lexicon)

    def test_stable_across_runs(self, lexicon):
        corpus = ["谢谢", "再见", "您好"]
        a = build_vocabulary(corpus, SYL, lexicon)
        b = build_vocabulary(corpus, SYL, lexicon)
        assert a.tokens == b.tokens

    def test_save_load(self, tmp_path, lexicon):
        vocab = build_vocabulary(["您好"], SYL, lexicon)
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        lines = path.read_text("utf-8").splitlines()
        assert lines[0] == BLANK_TOKEN
        assert Vocabulary.load(path) == vocab

    def test_blank_must_be_first(self):
        with pytest.raises(ValueError):
            Vocabulary(("a", BLANK_TOKEN))

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary((BLANK_TOKEN, "a", "a"))

    def test_id_lookup(self, lexicon):
        vocab = build_vocabulary(["您好"], SYL, lexicon)
        assert vocab.id_of("nin2") == 1
        assert vocab.token_of(2) == "hao3"
        with pytest.raises(KeyError):
            vocab.id_of("zay4")


class TestEncodeDecode:
    @pytest.mark.parametrize("unit", [IF, SYL, CHAR])
    def test_roundtrip_matches_units(self, unit, lexicon):
        vocab = build_vocabulary(["您好"], unit, lexicon)
        seq = encode("您好", unit, vocab, lexicon)
        assert decode(seq.ids, vocab) == to_units("您好", unit, lexicon)

    def test_decode_blank_rejected(self, lexicon):
        vocab = build_vocabulary(["您好"], SYL, lexicon)
        with pytest.raises(ValueError, match="blank"):
            decode([0], vocab)

    def test_encode_oov(self, lexicon):
        vocab = build_vocabulary(["您好"], SYL, lexicon)
        with pytest.raises(OovError) as exc:
            encode("您X", SYL, vocab, lexicon)
        assert exc.value.offset == 1

    def test_encode_out_of_vocab_token(self, lexicon):
        vocab = build_vocabulary(["您好"], SYL, lexicon)
        with pytest.raises(KeyError):
            encode("再见", SYL, vocab, lexicon)


class TestTokenSequence:
    def test_blank_id_rejected(self):
        with pytest.raises(ValueError):
            TokenSequence(ids=(1, 0, 2), unit=SYL)

    def test_length_caps(self):
        TokenSequence(ids=tuple([1] * 40), unit=SYL)
        with pytest.raises(ValueError):
            TokenSequence(ids=tuple([1] * 41), unit=SYL)
        TokenSequence(ids=tuple([1] * 119), unit=IF)
        with pytest.raises(ValueError):
            TokenSequence(ids=tuple([1] * 120), unit=IF)


class TestLexicon:
    def test_split_convention(self, lexicon):
        assert lexicon.split("nin2") == ("n", "in2")
        assert lexicon.split("zhong1") == ("zh", "ong1")
        assert lexicon.split("ai4") == ("", "ai4")

    def test_bad_tsv_columns(self, tmp_path):
        path = tmp_path / "lex.tsv"
        path.write_text("你\tni3\tn\n", encoding="utf-8")
        with pytest.raises(ValueError, match="4 TSV columns"):
            Lexicon.from_tsv(path)

    def test_bad_tone_digit(self, tmp_path):
        path = tmp_path / "lex.tsv"
        path.write_text("你\tnix\tn\ti\n", encoding="utf-8")
        with pytest.raises(ValueError, match="tone digit"):
            Lexicon.from_tsv(path)

    def test_phrase_list_fully_covered(self, lexicon):
        for phrase in default_phrases():
            for char in phrase:
                assert char in lexicon, f"{char!r} missing from packaged lexicon"


_LEXICON = Lexicon.default()
_CHARS = sorted({c for p in default_phrases() for c in p})


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(_CHARS), min_size=1, max_size=12))
def test_unit_length_relationships(chars):
    """Syllable and character token counts match 1:1; the initial/final
    rendering is 2-3 tokens per character."""
    text = "".join(chars)
    n_char = len(to_units(text, CHAR))
    n_syl = len(to_units(text, SYL, _LEXICON))
    n_if = len(to_units(text, IF, _LEXICON))
    assert n_syl == n_char
    assert 2 * n_char <= n_if <= 3 * n_char
