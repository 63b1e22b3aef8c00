import filecmp
import json

import numpy as np
import pytest
from helpers import probe_accuracy, xor_dataset
from hypothesis import given, settings
from hypothesis import strategies as st

from modfusion.audio import save_mel_csv
from modfusion.data import (SYNTH_CLASSES, DataError, Example, SampleManifest, class_histogram, collate,
                            gen_synth, iterate_batches, load_dataset, parse_manifest, serialize_manifest,
                            synth_label, validate_manifest)
from modfusion.text import PAD_INDEX, UNK_INDEX

text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=20)
record = st.builds(SampleManifest, id=st.text("abcxyz0123-_", min_size=1, max_size=8), label=st.sampled_from(["a", "b"]),
                   text=text, split=st.sampled_from(["train", "valid", "test"]),
                   mel_path=st.one_of(st.none(), st.just("mel/x.csv")), wav_path=st.one_of(st.none(), st.just("a.wav")))


@settings(max_examples=60, deadline=None)
@given(st.lists(record, max_size=6))
def test_manifest_round_trip(records):
    assert parse_manifest(serialize_manifest(records)) == records


def test_manifest_is_line_json():
    line = serialize_manifest([SampleManifest("s1", "a", "héllo", "train", "m.csv")]).splitlines()[0]
    assert json.loads(line)["text"] == "héllo"


def test_manifest_bad_line():
    with pytest.raises(DataError, match="line 2"):
        parse_manifest('{"id": "a", "label": "x", "text": "", "split": "train"}\nnot json\n')


class TestValidate:
    def test_duplicate_ids(self):
        recs = [SampleManifest("a", "x", "", "train"), SampleManifest("a", "x", "", "valid")]
        with pytest.raises(DataError, match="duplicate"):
            validate_manifest(recs, ["x"])

    def test_unknown_label(self):
        with pytest.raises(DataError, match="class list"):
            validate_manifest([SampleManifest("a", "y", "", "train")], ["x"])

    def test_unknown_split(self):
        with pytest.raises(DataError, match="split"):
            validate_manifest([SampleManifest("a", "x", "", "dev")], ["x"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="missing"):
            validate_manifest([SampleManifest("a", "x", "", "train", "nope.csv")], ["x"], tmp_path)


def test_load_dataset_vocab_from_train_only(tmp_path):
    save_mel_csv(tmp_path / "m.csv", np.zeros((2, 80)))
    recs = [SampleManifest("a", "x", "alpha beta", "train", "m.csv"),
            SampleManifest("b", "y", "gamma", "valid", "m.csv"),
            SampleManifest("c", "x", "", "test")]
    ds = load_dataset(recs, ["x", "y"], tmp_path)
    assert "gamma" not in ds.vocab
    assert ds.split("valid")[0].tokens == [UNK_INDEX]
    assert ds.split("test")[0].mel.shape == (1, 80)
    assert ds.split("valid")[0].label == 1


def test_collate_pads_and_masks():
    exs = [Example("a", [2, 3, 4], np.ones((2, 80)), 0), Example("b", [], np.ones((5, 80)), 1)]
    b = collate(exs)
    assert b.tokens.tolist() == [[2, 3, 4], [UNK_INDEX, PAD_INDEX, PAD_INDEX]]
    assert b.text_mask.tolist() == [[True] * 3, [True, False, False]]
    assert b.mel.shape == (2, 5, 80) and b.audio_mask.sum(axis=1).tolist() == [2, 5]
    assert np.all(b.mel[0, 2:] == 0.0)


def test_iterate_batches_covers_everything():
    exs = [Example(str(i), [2], np.ones((1, 80)), i % 2) for i in range(7)]
    sizes = [len(b) for b in iterate_batches(exs, 3, np.random.default_rng(0))]
    assert sizes == [3, 3, 1]


class TestSynth:
    def test_label_construction(self):
        assert [synth_label(a, b) for a in (0, 1) for b in (0, 1)] == [0, 1, 3, 2]

    def test_deterministic_files(self, tmp_path):
        gen_synth(200, 7, tmp_path / "a")
        gen_synth(200, 7, tmp_path / "b")
        cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
        mel_cmp = filecmp.dircmp(tmp_path / "a" / "mel", tmp_path / "b" / "mel")
        match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / "mel", tmp_path / "b" / "mel",
                                                   mel_cmp.common_files, shallow=False)
        assert not mismatch and not errors and len(match) == 200

    def test_balanced(self, tmp_path):
        for n in (8, 37, 200):
            recs = gen_synth(n, 3, tmp_path / str(n))
            hist = class_histogram(recs, SYNTH_CLASSES)
            assert all(abs(v - n / 4) <= 1 for v in hist.values()), hist

    def test_too_small(self, tmp_path):
        with pytest.raises(ValueError):
            gen_synth(7, 0, tmp_path)

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            gen_synth(8, 0, blocker / "sub")

    def test_single_modality_probe_near_chance(self, tmp_path):
        ds = xor_dataset(tmp_path, n=400, valid_fraction=0.25, test_fraction=0.25)
        for modality in ("text", "audio"):
            assert probe_accuracy(ds, modality, "train", "test") <= 0.65

    def test_both_modalities_are_informative(self, tmp_path):
        # each modality alone pins down one bit: well above the 0.25 floor
        ds = xor_dataset(tmp_path, n=400, valid_fraction=0.25, test_fraction=0.25)
        for modality in ("text", "audio"):
            assert probe_accuracy(ds, modality, "train", "test") >= 0.4
