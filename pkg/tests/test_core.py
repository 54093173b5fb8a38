import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poserefer.core import (
    CategoryVocabulary,
    Dataset,
    PoseTrack,
    Scene,
    SceneObject,
    Vec3,
    load_dataset,
    normalize_category,
    normalize_or_fallback,
    save_dataset,
    validate_reference,
)
from poserefer.errors import DatasetError, LabelError

from conftest import make_event, make_scene, make_track, make_uniform_frame


# --- normalize_category ------------------------------------------------------------

def test_normalize_compound_label():
    vocab = CategoryVocabulary(modifier_lexicon=frozenset({"red"}))
    assert normalize_category("RedVase", vocab) == "vase"
    assert "vase" in vocab.canonical


def test_normalize_already_canonical():
    vocab = CategoryVocabulary(modifier_lexicon=frozenset({"red"}))
    assert normalize_category("vase", vocab) == "vase"


def test_normalize_multiword_with_size_modifier():
    vocab = CategoryVocabulary(modifier_lexicon=frozenset({"small"}))
    assert normalize_category("SmallDiningTable", vocab) == "dining table"


def test_normalize_acronym_boundary():
    vocab = CategoryVocabulary(modifier_lexicon=frozenset())
    assert normalize_category("TVStand", vocab) == "tv stand"


def test_normalize_digits_are_separators():
    vocab = CategoryVocabulary(modifier_lexicon=frozenset())
    assert normalize_category("Chair2", vocab) == "chair"


def test_normalize_all_stripped_raises():
    vocab = CategoryVocabulary(modifier_lexicon=frozenset({"red", "small"}))
    with pytest.raises(LabelError, match="reduced to empty"):
        normalize_category("SmallRed", vocab)


def test_normalize_empty_label_raises():
    with pytest.raises(LabelError):
        normalize_category("", CategoryVocabulary())


def test_fallback_keeps_lowercase_raw():
    vocab = CategoryVocabulary(modifier_lexicon=frozenset({"red"}))
    assert normalize_or_fallback("Red", vocab) == "red"
    assert "red" not in vocab.canonical


@given(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126), min_size=1, max_size=30))
@settings(max_examples=200)
def test_normalize_idempotent_and_clean(raw):
    vocab = CategoryVocabulary()
    try:
        out = normalize_category(raw, vocab)
    except LabelError:
        return
    assert out == out.lower()
    assert not any(tok in vocab.modifier_lexicon for tok in out.split())
    assert normalize_category(out, vocab) == out


def test_vocabulary_disjoint_invariant():
    with pytest.raises(DatasetError, match="overlap"):
        CategoryVocabulary(modifier_lexicon=frozenset({"red"}), canonical={"red"})


# --- domain type invariants --------------------------------------------------------

def test_scene_needs_two_objects():
    with pytest.raises(DatasetError, match=">= 2 objects"):
        make_scene("r0", [(0.0, 0.0, 0.0)])


def test_scene_duplicate_object_id():
    obj = SceneObject("dup", Vec3(0, 0, 0), "A", "a")
    with pytest.raises(DatasetError, match="duplicate object_id"):
        Scene(room_id="r", objects=(obj, obj))


def test_category_must_be_lowercase():
    with pytest.raises(DatasetError, match="not lowercase"):
        SceneObject("o", Vec3(0, 0, 0), "Vase", "Vase")


def test_track_rejects_degenerate_direction():
    frames = [make_uniform_frame(direction=(0.0, 0.0, 0.0))]
    with pytest.raises(DatasetError, match="degenerate direction"):
        PoseTrack.from_frames(30.0, frames)


def test_track_rejects_bad_fps():
    with pytest.raises(DatasetError, match="fps"):
        PoseTrack.from_frames(0.0, [make_uniform_frame()])


def test_event_rejects_reversed_phrase():
    with pytest.raises(DatasetError, match="phrase_start_s"):
        make_event(start=2.0, end=1.0)


def test_dataset_validate_hold_frame_range(tiny_dataset):
    bad = make_event(ref_id="e0", room_id="r0", hold=400, target_id="r0_o0")
    ds = Dataset(
        scenes=tiny_dataset.scenes,
        tracks=tiny_dataset.tracks,
        events=[bad],
    )
    with pytest.raises(DatasetError, match="hold_frame"):
        ds.validate()


# --- validate_reference -------------------------------------------------------------

def test_validate_missing_target(tiny_dataset, tiny_store):
    ev = make_event(ref_id="e0", room_id="r0", target_id="nope")
    assert validate_reference(ev, tiny_dataset, tiny_store) == "missing_target"


def test_validate_clamped_window_accepted(tiny_dataset, tiny_store):
    # hold near the start clamps the arm window to [0, hold+10] and still passes
    ev = make_event(ref_id="e0", room_id="r0", hold=5, target_id="r0_o0")
    assert validate_reference(ev, tiny_dataset, tiny_store) is None


def test_validate_well_formed_accepted(tiny_dataset, tiny_store):
    assert validate_reference(tiny_dataset.events[0], tiny_dataset, tiny_store) is None


def test_validate_missing_utterance(tiny_dataset, tiny_store):
    ev = make_event(ref_id="e0", room_id="r0", target_id="r0_o0")
    object.__setattr__(ev, "utterance_key", "absent")
    assert validate_reference(ev, tiny_dataset, tiny_store) == "missing_utterance"


def test_validate_missing_scene_and_track(tiny_dataset, tiny_store):
    ev_scene = make_event(ref_id="e0", room_id="elsewhere")
    assert validate_reference(ev_scene, tiny_dataset, tiny_store) == "missing_scene"
    ev_track = make_event(ref_id="zz", room_id="r0", target_id="r0_o0")
    assert validate_reference(ev_track, tiny_dataset, tiny_store) == "missing_track"


# --- dataset I/O -------------------------------------------------------------------

def _dataset_equal(a: Dataset, b: Dataset) -> bool:
    if a.scenes != b.scenes or [e for e in a.events] != [e for e in b.events]:
        return False
    if set(a.tracks) != set(b.tracks):
        return False
    for k in a.tracks:
        ta, tb = a.tracks[k], b.tracks[k]
        if ta.fps != tb.fps:
            return False
        if not (np.array_equal(ta.directions, tb.directions)
                and np.array_equal(ta.origins, tb.origins)):
            return False
    return True


def test_save_load_round_trip(tiny_dataset, tmp_path):
    save_dataset(tiny_dataset, tmp_path)
    loaded = load_dataset(tmp_path)
    assert _dataset_equal(tiny_dataset, loaded)


def test_round_trip_bit_exact_floats(tiny_dataset, tmp_path):
    # adversarial float values survive save -> load exactly
    track = tiny_dataset.tracks["e0"]
    track.directions[0, 0, 0] = 0.1 + 0.2  # 0.30000000000000004
    track.origins[1, 2, 1] = 1e-17
    save_dataset(tiny_dataset, tmp_path)
    loaded = load_dataset(tmp_path)
    assert loaded.tracks["e0"].directions[0, 0, 0] == track.directions[0, 0, 0]
    assert loaded.tracks["e0"].origins[1, 2, 1] == 1e-17


def test_duplicate_ref_id_names_line(tiny_dataset, tmp_path):
    save_dataset(tiny_dataset, tmp_path)
    events_path = tmp_path / "events.jsonl"
    lines = events_path.read_text().splitlines()
    events_path.write_text("\n".join(lines + [lines[0]]) + "\n")
    with pytest.raises(DatasetError, match=r"line 3: duplicate ref_id"):
        load_dataset(tmp_path)


def test_malformed_json_names_line(tiny_dataset, tmp_path):
    save_dataset(tiny_dataset, tmp_path)
    with open(tmp_path / "scenes.jsonl", "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(DatasetError, match=r"scenes.jsonl line 3: invalid JSON"):
        load_dataset(tmp_path)


def test_empty_events_is_valid(tiny_dataset, tmp_path):
    ds = Dataset(scenes=tiny_dataset.scenes, tracks={}, events=[])
    save_dataset(ds, tmp_path)
    loaded = load_dataset(tmp_path)
    assert loaded.events == []
    assert set(loaded.scenes) == {"r0", "r1"}


def test_missing_field_is_reported(tiny_dataset, tmp_path):
    save_dataset(tiny_dataset, tmp_path)
    rec = json.loads((tmp_path / "events.jsonl").read_text().splitlines()[0])
    del rec["target_id"]
    (tmp_path / "events.jsonl").write_text(json.dumps(rec) + "\n")
    with pytest.raises(DatasetError, match="missing field 'target_id'"):
        load_dataset(tmp_path)
