import struct
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecg2text.dataset_io import (BOS, CLASSES, EOS, LEAD_NAMES, PAD, SPECIALS, UNK, EcgRecord,
                                 build_vocab, detokenize, load_manifest, pad_ids,
                                 parse_record, read_record, save_record, split_tokens, tokenize,
                                 write_manifest, write_record)
from ecg2text.errors import DuplicateRecord, ManifestError, RecordFormatError, UnknownLabel


def oracle_serialize(record_id, fs, raw, gains, names=LEAD_NAMES):
    """Independent writer: header lines by hand, samples with struct."""
    n = raw.shape[1]
    head = f"{record_id} 12 {fs} {n}\n" + "".join(f"{nm} {g}\n" for nm, g in zip(names, gains))
    body = b"".join(struct.pack("<12h", *raw[:, t]) for t in range(n))
    return head, body


def test_unit_gain_scaling():
    raw = np.zeros((12, 3), dtype=int)
    raw[0, 1] = 1000
    h, b = oracle_serialize("r", 100, raw, [1000] * 12)
    rec = parse_record(h, b)
    assert rec.leads[0, 1] == 1.0
    assert rec.fs == 100.0


def test_all_zero_bytes():
    h, _ = oracle_serialize("z", 100, np.zeros((12, 100), dtype=int), [1000] * 12)
    rec = parse_record(h, bytes(2 * 12 * 100))
    assert rec.leads.shape == (12, 100)
    assert not rec.leads.any()


def test_round_trip_against_independent_serializer(rng):
    for i in range(5):
        n = int(rng.integers(1, 300))
        raw = rng.integers(-32768, 32768, size=(12, n))
        gains = [int(g) for g in rng.choice([200, 500, 1000], size=12)]
        h, b = oracle_serialize(f"rec{i}", 100, raw, gains)
        assert write_record(parse_record(h, b)) == (h, b)


@given(st.integers(1, 50), st.integers(0, 2**31 - 1))
def test_gain_doubling_halves_voltage(n, seed):
    raw = np.random.default_rng(seed).integers(-32768, 32768, size=(12, n))
    h1, b = oracle_serialize("r", 100, raw, [500] * 12)
    h2, _ = oracle_serialize("r", 100, raw, [1000] * 12)
    assert np.array_equal(parse_record(h2, b).leads * 2, parse_record(h1, b).leads)


@pytest.mark.parametrize("mutate, msg", [
    (lambda h, b: (h, b[:-2]), "bytes"),
    (lambda h, b: (h.replace(" 12 ", " 11 ", 1), b), "12 channels"),
    (lambda h, b: (h.replace("I 1000", "I 0", 1), b), "gain"),
    (lambda h, b: (h.replace(" 100 ", " 0 ", 1), b), "fs"),
])
def test_header_errors(mutate, msg):
    h, b = oracle_serialize("r", 100, np.zeros((12, 4), dtype=int), [1000] * 12)
    with pytest.raises(RecordFormatError, match=msg):
        parse_record(*mutate(h, b))


def test_record_rejects_wrong_lead_count():
    with pytest.raises(RecordFormatError):
        EcgRecord("r", np.zeros((11, 5)), 100.0)


def test_record_file_round_trip(tmp_path):
    leads = np.round(np.random.default_rng(0).normal(size=(12, 50)), 3)
    rec = EcgRecord("x1", leads, 100.0)
    save_record(rec, tmp_path / "x1")
    back = read_record(tmp_path / "x1")
    assert np.array_equal(back.leads, leads)
    assert back.lead_names == LEAD_NAMES


# --- manifest ------------------------------------------------------------------

def _write_hea(folder, name):
    save_record(EcgRecord(name, np.zeros((12, 4)), 100.0), folder / name)


def test_manifest_rows(tmp_path):
    (tmp_path / "data").mkdir()
    for r in ("r1", "r2"):
        _write_hea(tmp_path / "data", r)
    (tmp_path / "m.csv").write_text(
        "record_id,path,labels,report\nr1,data/r1,NORM,sinus rhythm\n"
        "r2,data/r2,MI;HYP,\"inferior mi, lvh\"\n")
    e1, e2 = load_manifest(tmp_path / "m.csv")
    assert e1.labels == {"NORM"} and e1.report == "sinus rhythm"
    assert e2.labels == {"MI", "HYP"}
    assert e1.path == tmp_path / "data" / "r1"


@pytest.mark.parametrize("rows, exc", [
    ("r1,data/r1,XYZ,x\n", UnknownLabel),
    ("r1,data/r1,NORM,x\nr1,data/r1,MI,y\n", DuplicateRecord),
    ("r9,data/r9,NORM,x\n", ManifestError),
])
def test_manifest_errors(tmp_path, rows, exc):
    (tmp_path / "data").mkdir()
    _write_hea(tmp_path / "data", "r1")
    (tmp_path / "m.csv").write_text("record_id,path,labels,report\n" + rows)
    with pytest.raises(exc):
        load_manifest(tmp_path / "m.csv")


def test_manifest_writer_reader_agree(tmp_path):
    write_manifest(tmp_path / "m.csv", [("a", "a", ["CD", "MI"], "x, y")])
    (e,) = load_manifest(tmp_path / "m.csv", check_files=False)
    assert e.labels == {"CD", "MI"} and e.report == "x, y"


# --- vocabulary ----------------------------------------------------------------

def test_vocab_frequency_order():
    v = build_vocab(["a a b"])
    assert v.itos == SPECIALS + ("a", "b")
    assert v.id("a") == 4 and v.id("b") == 5


def test_vocab_threshold():
    assert build_vocab(["a b"], min_freq=2).content_tokens == ()


def test_vocab_empty_corpus():
    with pytest.raises(ValueError):
        build_vocab([])


SENTENCES = [
    "sinus rhythm", "sinus rhythm, normal ecg", "sinus bradycardia", "left axis deviation",
    "inferior myocardial infarction", "st depression in v5, v6", "t wave inversion",
    "left ventricular hypertrophy", "right bundle branch block", "sinus tachycardia",
    "atrial fibrillation", "first degree av block", "nonspecific st t change",
    "normal ecg", "anterior myocardial infarction, age undetermined", "lvh with strain",
    "incomplete right bundle branch block", "sinus rhythm. st elevation", "poor r progression",
    "low qrs voltages",
]


def test_vocab_matches_frequency_count_oracle():
    counts = Counter()
    for s in SENTENCES:
        word = ""
        for ch in s.lower() + " ":
            if ch.isalnum() or ch == "_":
                word += ch
                continue
            if word:
                counts[word] += 1
                word = ""
            if not ch.isspace():
                counts[ch] += 1
    expected = [t for t, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]
    assert build_vocab(SENTENCES).content_tokens == tuple(expected)
    assert build_vocab(SENTENCES) == build_vocab(list(SENTENCES))


def test_tokenize_cases():
    v = build_vocab(["sinus rhythm"])
    assert tokenize("", v, 8) == [BOS, EOS]
    assert tokenize("Sinus rhythm", v, 8) == [BOS, v.id("sinus"), v.id("rhythm"), EOS]
    assert tokenize("sinus zzz", v, 8) == [BOS, v.id("sinus"), UNK, EOS]


@given(st.lists(st.sampled_from(["a", "b", "c", "d", ","]), max_size=30), st.integers(3, 12))
def test_tokenize_shape_and_round_trip(words, m_max):
    v = build_vocab(["a b c d ,"])
    ids = tokenize(" ".join(words), v, m_max)
    assert ids[0] == BOS and ids[-1] == EOS and len(ids) <= m_max
    assert detokenize(ids, v).split() == words[: m_max - 2]


def test_split_tokens_punctuation():
    assert split_tokens("ST-T change, V5.") == ["st", "-", "t", "change", ",", "v5", "."]


def test_pad_ids():
    assert pad_ids([1, 5, 2], 5).tolist() == [1, 5, 2, PAD, PAD]


def test_classes_are_the_five_superclasses():
    assert set(CLASSES) == {"NORM", "MI", "STTC", "CD", "HYP"}
