import itertools
from functools import lru_cache

import pytest
from hypothesis import given, strategies as st

from phonmatch.g2p import (LETTER_TO_PHONEME, PHONEME_TO_ID, PHONEMES, VOCAB_SIZE, LexiconError, PhonemeSequence,
                           edit_distance, g2p_convert, load_lexicon, normalized_levenshtein, parse_lexicon)


class TestInventory:
    def test_size(self):
        assert len(PHONEMES) == 39 and VOCAB_SIZE == 40

    def test_pad_reserved(self):
        assert sorted(PHONEME_TO_ID.values()) == list(range(1, 40))

    def test_fallback_table_is_total(self):
        assert set(LETTER_TO_PHONEME) == set("abcdefghijklmnopqrstuvwxyz")
        assert set(LETTER_TO_PHONEME.values()) <= set(PHONEMES)


class TestLexicon:
    def test_stress_stripped(self):
        lex = parse_lexicon(["GO  G OW1"])
        assert lex["go"].phonemes == ("G", "OW")

    def test_friend(self):
        lex = parse_lexicon(["FRIEND  F R EH1 N D"])
        assert lex["friend"].phonemes == ("F", "R", "EH", "N", "D")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("")
        assert len(load_lexicon(path)) == 0

    def test_case_insensitive(self):
        lex = parse_lexicon(["Go  G OW1"])
        assert "GO" in lex and lex["Go"] == lex["go"]

    def test_first_pronunciation_wins(self):
        lex = parse_lexicon(["READ  R IY1 D", "READ(2)  R EH1 D", "READ  R EH1 D"])
        assert lex["read"].phonemes == ("R", "IY", "D")

    def test_comments_and_blank_lines(self):
        lex = parse_lexicon([";;; header", "", "HI  HH AY1"])
        assert list(lex) == ["hi"]

    def test_malformed_line_reports_number(self):
        with pytest.raises(LexiconError, match="line 2"):
            parse_lexicon(["GO  G OW1", "LONELY"])

    def test_unknown_symbol_named(self):
        with pytest.raises(LexiconError, match="XX"):
            parse_lexicon(["GO  G XX1"])

    def test_read_only(self, lexicon):
        with pytest.raises(TypeError):
            lexicon["go"] = PhonemeSequence(("G",))

    def test_bundled_lexicon_matches_reference(self, lexicon):
        # a handful of entries checked against CMUdict
        assert str(lexicon["friend"]) == "F R EH N D"
        assert str(lexicon["galaxy"]) == "G AE L AH K S IY"
        assert str(lexicon["hello"]) == "HH AH L OW"


class TestConvert:
    def test_single_lookup(self, lexicon):
        assert g2p_convert("go", lexicon).phonemes == ("G", "OW")

    def test_word_order(self, lexicon):
        out = g2p_convert("hi galaxy", lexicon)
        assert out.phonemes == lexicon["hi"].phonemes + lexicon["galaxy"].phonemes
        assert out.oov == ()

    def test_oov_fallback(self, lexicon):
        out = g2p_convert("zzxq", lexicon)
        assert out.phonemes == ("Z", "Z", "K", "K")
        assert out.oov == ("zzxq",)

    def test_punctuation_and_case(self, lexicon):
        assert g2p_convert("  Hi, GALAXY! ", lexicon) == g2p_convert("hi galaxy", lexicon)

    @pytest.mark.parametrize("text", ["", "   ", "?!.", "123"])
    def test_empty_after_normalisation(self, lexicon, text):
        with pytest.raises(ValueError):
            g2p_convert(text, lexicon)

    @given(st.text(alphabet="abcdefghij ,.", min_size=1, max_size=30))
    def test_pure(self, text):
        from phonmatch.g2p import default_lexicon
        lex = default_lexicon()
        try:
            first = g2p_convert(text, lex)
        except ValueError:
            with pytest.raises(ValueError):
                g2p_convert(text, lex)
            return
        again = g2p_convert(text, lex)
        assert first == again and first.oov == again.oov and len(first) >= 1

    def test_pad_never_inside(self, lexicon):
        for word in lexicon:
            assert 0 not in g2p_convert(word, lexicon).ids


class TestLevenshtein:
    def test_identity(self):
        assert normalized_levenshtein(("G", "OW"), ("G", "OW")) == 0.0

    def test_one_substitution(self):
        assert normalized_levenshtein(list("FREND"), list("TREND")) == pytest.approx(0.2)
        assert normalized_levenshtein(("F", "R", "EH", "N", "D"), ("T", "R", "EH", "N", "D")) == 0.2

    def test_disjoint(self):
        assert normalized_levenshtein(("A", "B", "C"), ("D", "E", "F")) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            normalized_levenshtein((), ("A",))

    @pytest.mark.parametrize("a,b,expected", [("kitten", "sitting", 3), ("", "abc", 3), ("flaw", "lawn", 2)])
    def test_known_distances(self, a, b, expected):
        assert edit_distance(a, b) == expected

    def test_exhaustive_against_recursive_definition(self):
        seqs = [s for n in range(7) for s in itertools.product("abc", repeat=n)]
        for a in seqs:
            @lru_cache(maxsize=None)
            def d(i, b):
                # distance between a[:i] and b, straight from the recursive definition
                if i == 0 or not b:
                    return i + len(b)
                return min(d(i - 1, b) + 1, d(i, b[:-1]) + 1, d(i - 1, b[:-1]) + (a[i - 1] != b[-1]))

            for b in seqs:
                assert edit_distance(a, b) == d(len(a), b), (a, b)

    @given(st.lists(st.sampled_from("abc"), min_size=1, max_size=6),
           st.lists(st.sampled_from("abc"), min_size=1, max_size=6))
    def test_symmetric_and_bounded(self, a, b):
        d = normalized_levenshtein(a, b)
        assert d == normalized_levenshtein(b, a)
        assert 0.0 <= d <= 1.0
        assert (d == 0.0) == (a == b)
