import json

import numpy as np
import pytest

from phonmatch.audio import read_wav
from phonmatch.criterion import phoneme_labels, utterance_label
from phonmatch.data import (DataError, ManifestEntry, build_closed_vocab_trials, build_training_pairs,
                            extract_features, iterate_batches, load_manifest, make_trial, pad_batch, write_manifest)
from phonmatch.g2p import g2p_convert
from phonmatch.model import StubEmbedder
from phonmatch.synth import PHONEME_DURATION, phoneme_template, render_phonemes, synth_dataset

COMMANDS = ["yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"]


def _entries(words, per=1):
    return [ManifestEntry(f"{w}_{i}", f"/nowhere/{w}_{i}.wav", w) for w in words for i in range(per)]


def _write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


class TestManifest:
    def test_three_lines(self, tmp_path):
        path = tmp_path / "m.jsonl"
        _write_jsonl(path, [{"id": str(i), "audio": f"a{i}.wav", "transcript": "go"} for i in range(3)])
        entries = load_manifest(path)
        assert [e.id for e in entries] == ["0", "1", "2"]
        assert entries[0].audio_path == str(tmp_path / "a0.wav")

    def test_duplicate_id_named(self, tmp_path):
        path = tmp_path / "m.jsonl"
        _write_jsonl(path, [{"id": "x", "audio": "a", "transcript": "go"}] * 2)
        with pytest.raises(DataError, match="'x'"):
            load_manifest(path)

    def test_missing_field_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        _write_jsonl(path, [{"id": "a", "audio": "a", "transcript": "go"}, {"id": "b", "audio": "b"}])
        with pytest.raises(DataError, match=":2: missing field"):
            load_manifest(path)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("{not json\n")
        with pytest.raises(DataError, match=":1:"):
            load_manifest(path)

    def test_empty(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("")
        assert load_manifest(path) == []

    def test_round_trip(self, tmp_path):
        entries = [ManifestEntry("a", str(tmp_path / "w" / "a.wav"), "hi galaxy")]
        write_manifest(tmp_path / "m.jsonl", entries)
        assert load_manifest(tmp_path / "m.jsonl") == entries


class TestClosedVocab:
    def test_command_vocabulary_row(self, lexicon):
        trials = build_closed_vocab_trials(_entries(["go"]), COMMANDS, lexicon)
        assert len(trials) == 10
        assert [t.keyword for t in trials if t.y_utt == 1] == ["go"]
        assert sorted(t.keyword for t in trials if t.y_utt == 0) == sorted(
            ["yes", "no", "up", "down", "left", "right", "on", "off", "stop"])

    def test_single_word_vocabulary(self, lexicon):
        trials = build_closed_vocab_trials(_entries(["go"], per=3), ["go"], lexicon)
        assert all(t.y_utt == 1 for t in trials) and len(trials) == 3

    def test_counting(self, lexicon):
        vocab = ["yes", "no", "up", "down"]
        trials = build_closed_vocab_trials(_entries(vocab), vocab, lexicon)
        assert len(trials) == 16 and sum(t.y_utt for t in trials) == 4

    def test_out_of_vocabulary_transcript(self, lexicon):
        with pytest.raises(DataError, match="not in the vocabulary"):
            build_closed_vocab_trials(_entries(["hello"]), COMMANDS, lexicon)

    def test_labels_recomputed_from_scratch(self, lexicon):
        for t in build_closed_vocab_trials(_entries(COMMANDS), COMMANDS, lexicon):
            assert t.y_utt == utterance_label(t.keyword, t.entry.transcript)
            expected = phoneme_labels(g2p_convert(t.keyword, lexicon), g2p_convert(t.entry.transcript, lexicon))
            assert list(t.y_phon) == expected.tolist()

    def test_distance(self, lexicon):
        t = make_trial(ManifestEntry("a", "a.wav", "trend"), "friend", lexicon)
        assert t.distance == pytest.approx(0.2) and t.y_phon == (0, 1, 1, 1, 1)


class TestTrainingPairs:
    def test_positives_only(self, lexicon):
        trials = build_training_pairs(_entries(COMMANDS[:3]), 0, 0, lexicon)
        assert len(trials) == 3 and all(t.y_utt for t in trials)

    def test_deterministic(self, lexicon):
        a = build_training_pairs(_entries(COMMANDS), 3, 7, lexicon)
        b = build_training_pairs(_entries(COMMANDS), 3, 7, lexicon)
        assert [t.trial_id for t in a] == [t.trial_id for t in b]

    def test_counting(self, lexicon):
        trials = build_training_pairs(_entries(COMMANDS), 3, 0, lexicon)
        assert len(trials) == 40 and sum(t.y_utt for t in trials) == 10

    def test_negatives_distinct_and_foreign(self, lexicon):
        trials = build_training_pairs(_entries(COMMANDS), 5, 1, lexicon)
        for e in _entries(COMMANDS):
            negs = [t.keyword for t in trials if t.entry.id == e.id and not t.y_utt]
            assert len(set(negs)) == 5 and e.transcript not in negs

    def test_single_transcript(self, lexicon):
        with pytest.raises(DataError):
            build_training_pairs(_entries(["go"], per=3), 1, 0, lexicon)

    def test_too_many_negatives(self, lexicon):
        with pytest.raises(DataError):
            build_training_pairs(_entries(["go", "no"]), 2, 0, lexicon)


class TestPadBatch:
    def _trials(self, lexicon, words):
        return [make_trial(ManifestEntry(w, "x.wav", w), w, lexicon) for w in words]

    def test_equal_lengths(self, lexicon):
        trials = self._trials(lexicon, ["go", "no"])
        batch = pad_batch(trials, [np.ones((10, 40))] * 2, [np.ones((3, 96))] * 2)
        assert batch.phoneme_mask.all()
        assert batch.mel_lengths.tolist() == [10, 10]

    def test_uneven_phoneme_lengths(self, lexicon):
        trials = self._trials(lexicon, ["friend", "bug"])  # 5 and 3 phonemes
        batch = pad_batch(trials, [np.ones((10, 40)), np.ones((12, 40))], [np.ones((3, 96))] * 2)
        assert batch.phoneme_mask.sum(axis=1).tolist() == [5, 3]
        assert batch.phoneme_ids[1, 3:].tolist() == [0, 0]
        assert not batch.mel[0, 10:].any()

    def test_single_item(self, lexicon):
        trials = self._trials(lexicon, ["go"])
        mel = np.random.default_rng(0).standard_normal((7, 40)).astype(np.float32)
        batch = pad_batch(trials, [mel], [np.ones((3, 96))])
        assert batch.mel[0].tobytes() == mel.tobytes()

    def test_empty(self):
        with pytest.raises(DataError):
            pad_batch([], [], [])

    def test_unpad_round_trip(self, lexicon):
        rng = np.random.default_rng(1)
        trials = self._trials(lexicon, ["friend", "go", "galaxy", "up"])
        mels = [rng.standard_normal((n, 40)).astype(np.float32) for n in (9, 14, 5, 11)]
        pres = [rng.standard_normal((n, 96)).astype(np.float32) for n in (3, 4, 3, 5)]
        batch = pad_batch(trials, mels, pres)
        for (mel, pre, ids, y), m, p, t in zip(batch.unpad(), mels, pres, trials):
            assert mel.tobytes() == m.tobytes() and pre.tobytes() == p.tobytes()
            assert tuple(ids) == t.keyword_phonemes.ids and tuple(y) == t.y_phon

    def test_iterate_covers_everything_once(self, lexicon):
        trials = self._trials(lexicon, COMMANDS)
        feats = {t.entry.id: type("F", (), {"mel": np.ones((5, 40)), "pre": np.ones((3, 96))})() for t in trials}
        ids = [tid for b in iterate_batches(trials, feats, 3, np.random.default_rng(0)) for tid in b.trial_ids]
        assert sorted(ids) == sorted(t.trial_id for t in trials)


class TestSynth:
    def test_deterministic(self, tmp_path, lexicon):
        a = synth_dataset(["go", "friend"], 2, 5, tmp_path / "a", lexicon)
        b = synth_dataset(["go", "friend"], 2, 5, tmp_path / "b", lexicon)
        for ea, eb in zip(load_manifest(a), load_manifest(b)):
            assert open(ea.audio_path, "rb").read() == open(eb.audio_path, "rb").read()
        assert json.loads((tmp_path / "a" / "spec.json").read_text())["seed"] == 5

    def test_duration(self, lexicon):
        w = render_phonemes(g2p_convert("bat", lexicon), np.random.default_rng(0))
        assert 3 * PHONEME_DURATION * 0.8 <= w.duration <= 3 * PHONEME_DURATION * 1.2

    def test_shared_prefix(self, lexicon):
        a = render_phonemes(g2p_convert("late", lexicon))
        b = render_phonemes(g2p_convert("light", lexicon))
        n = len(phoneme_template("L"))
        assert a.samples[:n].tobytes() == b.samples[:n].tobytes()
        assert a.samples[n:2 * n].tobytes() != b.samples[n:2 * n].tobytes()

    def test_features(self, tmp_path, lexicon):
        manifest = synth_dataset(["go"], 2, 0, tmp_path, lexicon)
        entries = load_manifest(manifest)
        feats = extract_features(entries, StubEmbedder(0))
        w = read_wav(entries[0].audio_path)
        assert feats[entries[0].id].mel.shape == ((len(w) - 400) // 160 + 1, 40)
        assert feats[entries[0].id].pre.shape == (1, 96)
