import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sssd_ecg.data import (Dataset, EcgRecord, LabelVocabulary, decode_labels,
                           encode_labels, load_dataset, make_toy_corpus,
                           save_dataset, toy_vocabulary,
                           TOY_AMP_ON, TOY_AMP_OFF,
                           TOY_TWAVE_ON, TOY_TWAVE_OFF)


@pytest.fixture(scope="module")
def toy():
    return make_toy_corpus(100, 4, 1000, 7)


def test_encode_empty_statements():
    vocab = toy_vocabulary(71)
    vec = encode_labels([], vocab)
    assert vec.shape == (71,) and not vec.any()


def test_encode_single_statement_is_unit_vector():
    vocab = toy_vocabulary(71)
    vec = encode_labels([vocab.codes[0]], vocab)
    assert vec[0] == 1.0 and vec.sum() == 1.0


def test_encode_decode_exhaustive_roundtrip():
    vocab = LabelVocabulary(["NORM", "SR", "AFIB", "LVH", "IMI"])
    for subset_size in range(6):
        for subset in itertools.combinations(vocab.codes, subset_size):
            vec = encode_labels(list(subset), vocab)
            assert sorted(decode_labels(vec, vocab)) == sorted(subset)


def test_encode_unknown_statement():
    vocab = toy_vocabulary(4)
    with pytest.raises(ValueError, match="unknown statement"):
        encode_labels(["NOPE"], vocab)


@given(st.lists(st.sampled_from([f"TOY{i}" for i in range(8)]),
                unique=True))
@settings(max_examples=50, deadline=None)
def test_label_roundtrip_property(statements):
    vocab = toy_vocabulary(8)
    assert sorted(decode_labels(encode_labels(statements, vocab), vocab)) \
        == sorted(statements)


def test_toy_corpus_determinism():
    a = make_toy_corpus(20, 4, 500, 7)
    b = make_toy_corpus(20, 4, 500, 7)
    assert np.array_equal(a.signal_array(), b.signal_array())
    assert np.array_equal(a.label_array(), b.label_array())


def test_toy_corpus_seed_sensitivity():
    a = make_toy_corpus(20, 4, 500, 7)
    b = make_toy_corpus(20, 4, 500, 8)
    assert not np.array_equal(a.signal_array(), b.signal_array())


def test_toy_corpus_amplitude_margin(toy):
    # Cohort mean peak amplitude on lead I differs per label 0.
    sig = toy.signal_array()
    labels = toy.label_array()
    peak = sig[:, :, 0].max(axis=1)
    on = labels[:, 0] > 0.5
    margin = TOY_AMP_ON - TOY_AMP_OFF
    assert peak[on].mean() - peak[~on].mean() > 0.6 * margin


def test_toy_corpus_twave_polarity_margin(toy):
    # Label 2 flips T-wave polarity: records with a negative T wave have a
    # far deeper per-record minimum on lead I (R and P stay positive).
    sig = toy.signal_array()
    labels = toy.label_array()
    low = sig[:, :, 0].min(axis=1)
    on = labels[:, 2] > 0.5
    margin = abs(TOY_TWAVE_ON - TOY_TWAVE_OFF)
    assert low[~on].mean() - low[on].mean() > 0.3 * margin


def test_toy_corpus_invalid_params():
    for bad in [(5, 4, 1000, 0), (100, 1, 1000, 0), (100, 4, 50, 0)]:
        with pytest.raises(ValueError, match="toy config invalid"):
            make_toy_corpus(*bad)


def test_fold_partition(toy):
    train, val, test = (toy.indices_for(s) for s in ("train", "val", "test"))
    all_idx = sorted(train + val + test)
    assert all_idx == list(range(len(toy)))
    assert not (set(train) & set(val)) and not (set(val) & set(test))


def test_save_load_roundtrip_bit_exact(tmp_path, toy):
    save_dataset(toy, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert np.array_equal(loaded.signal_array(), toy.signal_array())
    assert np.array_equal(loaded.label_array(), toy.label_array())
    assert loaded.vocabulary.codes == toy.vocabulary.codes
    assert [r.fold for r in loaded.records] == [r.fold for r in toy.records]
    assert [r.record_id for r in loaded.records] \
        == [r.record_id for r in toy.records]
    # Loading is pure: a second load is equal.
    again = load_dataset(tmp_path / "ds")
    assert np.array_equal(again.signal_array(), loaded.signal_array())


def test_load_missing_corpus(tmp_path):
    with pytest.raises(FileNotFoundError, match="corpus not found"):
        load_dataset(tmp_path / "nope")


def test_load_empty_metadata(tmp_path, toy):
    save_dataset(toy, tmp_path / "ds")
    meta = json.loads((tmp_path / "ds" / "meta.json").read_text())
    meta["n_records"] = 0
    (tmp_path / "ds" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ValueError, match="schema violation"):
        load_dataset(tmp_path / "ds")


def test_load_corrupt_signal(tmp_path, toy):
    save_dataset(toy, tmp_path / "ds")
    raw = np.frombuffer((tmp_path / "ds" / "signals.f32le").read_bytes(),
                        dtype="<f4").copy()
    raw[5] = np.nan
    (tmp_path / "ds" / "signals.f32le").write_bytes(raw.tobytes())
    with pytest.raises(ValueError, match="corrupt signal"):
        load_dataset(tmp_path / "ds")


def test_record_invariants():
    with pytest.raises(ValueError, match="schema violation"):
        EcgRecord(signal=np.zeros((100, 5)), sampling_rate=100,
                  record_id="x", fold=1)
    with pytest.raises(ValueError, match="corrupt signal"):
        EcgRecord(signal=np.full((100, 12), np.inf), sampling_rate=100,
                  record_id="x", fold=1)
    with pytest.raises(ValueError, match="schema violation"):
        EcgRecord(signal=np.zeros((100, 12)), sampling_rate=100,
                  record_id="x", fold=11)


def test_vocabulary_rejects_duplicates():
    with pytest.raises(ValueError, match="schema violation"):
        LabelVocabulary(["A", "A"])
