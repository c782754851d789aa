import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crce.dataset import (
    CERTAINTY_LABELS,
    CERTAINTY_WEIGHTS,
    ConceptEntry,
    ConceptRecord,
    CorefConceptDataset,
    DatasetParseError,
    UnknownCertaintyError,
    canonical_certainty,
    certainty_to_weight,
    dataset_digest,
    load_dataset,
    normalize_text,
    sample_dataset_path,
    save_dataset,
    validate_dataset,
    validate_record,
)


def entries(n, prefix="item", certainty="Normal"):
    return [ConceptEntry(f"{prefix} {i}", certainty) for i in range(n)]


def approved_record(**overrides):
    kwargs = dict(
        target="Horse",
        category="object",
        state="approved",
        revision=1,
        coref_train=entries(10, "coref"),
        coref_test=entries(5, "coref test"),
        retain_train=entries(10, "retain"),
        retain_test=entries(5, "retain test"),
    )
    kwargs.update(overrides)
    return ConceptRecord(**kwargs)


class TestCertaintyWeights:
    def test_bijection_onto_weights(self):
        weights = [certainty_to_weight(label) for label in CERTAINTY_LABELS]
        assert weights == [1.0, 0.8, 0.6, 0.4, 0.2]
        assert len(set(weights)) == len(CERTAINTY_LABELS)

    def test_very_high_is_one(self):
        assert certainty_to_weight("Very High") == 1.0

    def test_normal_is_middle(self):
        assert certainty_to_weight("Normal") == 0.6

    def test_unknown_label_names_the_string(self):
        with pytest.raises(UnknownCertaintyError) as exc_info:
            certainty_to_weight("Banana")
        assert "Banana" in str(exc_info.value)

    def test_tolerant_read(self):
        assert canonical_certainty("very  high") == "Very High"
        assert canonical_certainty(" LOW ") == "Low"

    def test_non_string_rejected(self):
        with pytest.raises(UnknownCertaintyError):
            canonical_certainty(None)


class TestNormalization:
    def test_case_and_punctuation_insensitive(self):
        assert normalize_text("Bella Swan (Twilight)") == normalize_text("bella swan twilight")

    def test_whitespace_collapse(self):
        assert normalize_text("  pet   dog ") == "pet dog"


class TestValidateRecord:
    def test_clean_approved_record(self):
        assert validate_record(approved_record()) == []

    def test_short_coref_train_flagged(self):
        record = approved_record(coref_train=entries(9, "coref"))
        codes = [(v.code, v.path) for v in validate_record(record)]
        assert ("LIST_LENGTH", "coref_train") in codes

    def test_draft_allows_any_lengths(self):
        record = approved_record(state="draft", coref_train=entries(15, "pool"), coref_test=[])
        assert validate_record(record) == []

    def test_coref_retain_overlap(self):
        record = approved_record()
        record.coref_train[0] = ConceptEntry("cat", "High")
        record.retain_train[0] = ConceptEntry("Cat", "High")
        codes = {v.code for v in validate_record(record)}
        assert "SET_OVERLAP" in codes

    def test_target_in_retain(self):
        record = approved_record()
        record.retain_train[0] = ConceptEntry("horse", "High")
        codes = {v.code for v in validate_record(record)}
        assert "TARGET_IN_RETAIN" in codes

    def test_duplicate_within_coref_union(self):
        record = approved_record()
        record.coref_test[0] = ConceptEntry("Coref 3", "Low")  # dup of coref_train[3]
        codes = {v.code for v in validate_record(record)}
        assert "DUPLICATE_TEXT" in codes

    def test_empty_text_flagged(self):
        record = approved_record()
        record.coref_train[2] = ConceptEntry("   ", "High")
        violations = validate_record(record)
        assert any(v.code == "EMPTY_TEXT" and "coref_train[2]" in v.path for v in violations)

    def test_unknown_certainty_flagged(self):
        record = approved_record()
        record.retain_test[1] = ConceptEntry("okapi", "Medium")
        violations = validate_record(record)
        assert any(v.code == "UNKNOWN_CERTAINTY" for v in violations)

    def test_unknown_category(self):
        record = approved_record(category="vehicle")
        assert any(v.code == "UNKNOWN_CATEGORY" for v in validate_record(record))


class TestPersistence:
    def test_round_trip_identity(self, tmp_path):
        dataset = CorefConceptDataset(concepts=[approved_record()])
        path = tmp_path / "ds.json"
        save_dataset(dataset, path)
        loaded = load_dataset(path)
        assert loaded.to_dict() == dataset.to_dict()
        assert dataset_digest(loaded) == dataset_digest(dataset)

    def test_save_load_save_stable(self, tmp_path):
        dataset = CorefConceptDataset(concepts=[approved_record()])
        first = tmp_path / "a.json"
        second = tmp_path / "b.json"
        save_dataset(dataset, first)
        save_dataset(load_dataset(first), second)
        assert first.read_text() == second.read_text()

    def test_missing_certainty_names_entry(self, tmp_path):
        payload = CorefConceptDataset(concepts=[approved_record()]).to_dict()
        del payload["concepts"][0]["corefs"]["train"][3]["certainty"]
        path = tmp_path / "broken.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(DatasetParseError) as exc_info:
            load_dataset(path)
        assert "corefs.train[3]" in str(exc_info.value)

    def test_schema_version_mismatch(self, tmp_path):
        payload = {"version": "0.9", "concepts": []}
        path = tmp_path / "old.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(DatasetParseError) as exc_info:
            load_dataset(path)
        assert "version" in str(exc_info.value)

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"version": "1.0",\n  "concepts": [}')
        with pytest.raises(DatasetParseError) as exc_info:
            load_dataset(path)
        assert "line" in str(exc_info.value)

    def test_tolerant_certainty_read(self, tmp_path):
        payload = CorefConceptDataset(concepts=[approved_record()]).to_dict()
        payload["concepts"][0]["corefs"]["train"][0]["certainty"] = "very high"
        path = tmp_path / "ds.json"
        path.write_text(json.dumps(payload))
        loaded = load_dataset(path)
        assert loaded.concepts[0].coref_train[0].certainty == "Very High"


class TestSampleDataset:
    def test_loads_and_validates(self):
        dataset = load_dataset(sample_dataset_path())
        assert validate_dataset(dataset) == []
        assert len(dataset.concepts) == 4

    def test_horse_row(self):
        dataset = load_dataset(sample_dataset_path())
        horse = dataset.find("Horse")
        assert horse is not None
        assert horse.coref_train[0].text == "mare"
        assert horse.coref_train[0].certainty == "Very High"
        assert len(horse.coref_train) == 10 and len(horse.coref_test) == 5

    def test_bat_disambiguation(self):
        dataset = load_dataset(sample_dataset_path())
        bat = dataset.find("bat--bat-animal")
        assert bat is not None
        assert bat.disambiguation == "bat (animal)"

    def test_duplicate_targets_flagged(self):
        dataset = load_dataset(sample_dataset_path())
        dataset.concepts.append(dataset.concepts[0].copy())
        codes = {v.code for v in validate_dataset(dataset)}
        assert "DUPLICATE_TARGET" in codes


@st.composite
def valid_records(draw):
    def texts(prefix, n):
        return [f"{prefix}-{i}" for i in range(n)]

    labels = st.sampled_from(CERTAINTY_LABELS)
    target = draw(st.text(alphabet="abcdefgh", min_size=1, max_size=8))
    category = draw(st.sampled_from(["object", "ip", "celebrity"]))

    def side(prefix):
        train = [
            ConceptEntry(text, draw(labels)) for text in texts(prefix + "-train", 10)
        ]
        test = [ConceptEntry(text, draw(labels)) for text in texts(prefix + "-test", 5)]
        return train, test

    coref_train, coref_test = side("c")
    retain_train, retain_test = side("r")
    return ConceptRecord(
        target=target,
        category=category,
        state="approved",
        revision=draw(st.integers(min_value=0, max_value=100)),
        coref_train=coref_train,
        coref_test=coref_test,
        retain_train=retain_train,
        retain_test=retain_test,
    )


@given(records=st.lists(valid_records(), min_size=0, max_size=3))
@settings(max_examples=25, deadline=None)
def test_round_trip_property(tmp_path_factory, records):
    dataset = CorefConceptDataset(concepts=records)
    path = tmp_path_factory.mktemp("roundtrip") / "ds.json"
    save_dataset(dataset, path)
    assert load_dataset(path).to_dict() == dataset.to_dict()


def test_weights_dict_matches_label_order():
    assert list(CERTAINTY_WEIGHTS) == list(CERTAINTY_LABELS)
