import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roieval.corpus import (
    BoundingBox3D,
    GroundTruthRoI,
    SplitConfig,
    assign_roi_to_region,
    compute_region_ranges,
    load_corpus,
    normalize_ws,
    parse_annotation,
    serialize_annotation,
)
from roieval.errors import AnnotationError, ConfigError, SchemaError

CECUM = (
    "[Cecum] - [Focal hypermetabolism] - [Unclear] - [12.3] - [Soft tissue density] - "
    "[Focal] - [Very intense hypermetabolism] - [Colon cancer (cecum), Inflammatory bowel "
    "disease (Crohn's disease), Appendicitis/Abscess] - [Colonoscopy and biopsy, Abdominal "
    "MRI/CT, Blood tests] - [3] - [Very intense focal FDG uptake (SUVmax 12.3) in the cecum. "
    "Highly suggestive of colon cancer...]"
)
PLACEHOLDER = "[A] - [B] - [C] - [D] - [E] - [F] - [G] - [H] - [I] - [1] - [J]"


def test_cecum_instance():
    roi = parse_annotation(CECUM)
    assert roi.anatomic_region == "Cecum"
    assert roi.lesion_type == "Focal hypermetabolism"
    assert roi.size == "Unclear"
    assert roi.suv_max == 12.3
    assert roi.physical_region == 3
    assert roi.top3_diseases == (
        "Colon cancer (cecum)",
        "Inflammatory bowel disease (Crohn's disease)",
        "Appendicitis/Abscess",
    )
    assert roi.top3_examinations == ("Colonoscopy and biopsy", "Abdominal MRI/CT", "Blood tests")
    assert roi.note.startswith("Very intense focal FDG uptake (SUVmax 12.3)")


def test_cecum_serializes_back():
    assert serialize_annotation(parse_annotation(CECUM)) == normalize_ws(CECUM)


def test_placeholder_positional():
    roi = parse_annotation(PLACEHOLDER)
    assert [roi.anatomic_region, roi.lesion_type, roi.size, roi.suv_max_raw, roi.density,
            roi.morphology, roi.fdg_uptake] == list("ABCDEFG")
    assert roi.top3_diseases == ("H",)
    assert roi.top3_examinations == ("I",)
    assert roi.physical_region == 1
    assert roi.note == "J"
    assert roi.suv_max is None
    assert serialize_annotation(roi) == PLACEHOLDER


def test_whitespace_drift_normalized():
    messy = "[ Left   lung ]-[Nodule] - [8 mm]  -  [2.5] - [] - [] - [] - [] - [] - [2] - []"
    roi = parse_annotation(messy)
    assert roi.anatomic_region == "Left lung"
    assert roi.suv_max == 2.5
    assert roi.note is None
    assert serialize_annotation(roi) == (
        "[Left lung] - [Nodule] - [8 mm] - [2.5] - [] - [] - [] - [] - [] - [2] - []")


def test_non_numeric_suv_kept_raw():
    roi = parse_annotation(PLACEHOLDER.replace("[D]", "[3.1-4.5]"))
    assert roi.suv_max is None
    assert roi.suv_max_raw == "3.1-4.5"


@pytest.mark.parametrize(
    "line, field_index",
    [
        ("[A] - [B] - [C]", 2),
        (PLACEHOLDER + " - [K]", 10),
        (PLACEHOLDER.replace("[1]", "[4]"), 9),
        (PLACEHOLDER.replace("[1]", "[x]"), 9),
        (PLACEHOLDER.replace("[E]", "[E"), 4),
    ],
)
def test_parse_errors_carry_location(line, field_index):
    with pytest.raises(AnnotationError) as info:
        parse_annotation(line)
    assert info.value.field_index == field_index
    assert info.value.offset is not None


def test_offset_is_in_bytes():
    line = "[Gan phải] - [B] - [C] - [D] - [E] - [F] - [G] - [H] - [I] - [7] - [J]"
    with pytest.raises(AnnotationError) as info:
        parse_annotation(line)
    assert info.value.offset == line.encode("utf-8").index(b"[7]")


def test_stray_text_between_fields():
    with pytest.raises(AnnotationError):
        parse_annotation(PLACEHOLDER.replace(" - [B]", " x [B]"))


def test_list_field_capped_at_three():
    with pytest.raises(AnnotationError):
        parse_annotation(PLACEHOLDER.replace("[H]", "[a, b, c, d]"))


# --- round trip against a field-tuple generator -------------------------------

_word = st.text(
    alphabet=st.characters(
        whitelist_categories=("Lu", "Ll", "Nd"), whitelist_characters="/'.()-+ạảếđơ"),
    min_size=1, max_size=8,
).filter(lambda s: s.count("(") == s.count(")") and "-" not in s[:1])
_phrase = st.lists(_word, min_size=1, max_size=4).map(" ".join).map(normalize_ws)
_maybe = st.one_of(st.just(""), _phrase)
_item = _phrase.filter(lambda s: "," not in s)
_suv = st.one_of(
    st.floats(0.1, 60, allow_nan=False).map(lambda x: f"{x:.1f}"), _maybe)


@st.composite
def roi_records(draw):
    return GroundTruthRoI(
        anatomic_region=draw(_maybe),
        lesion_type=draw(_maybe),
        size=draw(_maybe),
        suv_max_raw=draw(_suv),
        density=draw(_maybe),
        morphology=draw(_maybe),
        fdg_uptake=draw(_maybe),
        top3_diseases=tuple(draw(st.lists(_item, max_size=3))),
        top3_examinations=tuple(draw(st.lists(_item, max_size=3))),
        physical_region=draw(st.sampled_from([1, 2, 3])),
        note=draw(st.one_of(st.none(), _phrase)),
    )


@settings(max_examples=300, deadline=None)
@given(roi_records())
def test_round_trip(roi):
    assert parse_annotation(serialize_annotation(roi)) == roi


@settings(max_examples=300, deadline=None)
@given(roi_records())
def test_serialize_idempotent(roi):
    s = serialize_annotation(roi)
    assert serialize_annotation(parse_annotation(s)) == s


def test_record_normalizes_on_construction():
    roi = GroundTruthRoI("  a  b ", "x", "", "", "", "", "", ("p", " "), (), 2, "")
    assert roi.anatomic_region == "a b"
    assert roi.top3_diseases == ("p",)
    assert roi.note is None
    with pytest.raises(SchemaError):
        GroundTruthRoI("a", "b", "", "", "", "", "", (), (), 4)


# --- region splitting ----------------------------------------------------------

def test_split_313():
    split = compute_region_ranges(313)
    assert split.head_neck == (0, 78)
    assert split.chest == (63, 187)
    assert split.abdomen_pelvis == (172, 313)


def test_split_too_few():
    with pytest.raises(ConfigError, match="too few slices"):
        compute_region_ranges(0)
    with pytest.raises(ConfigError, match="too few slices"):
        compute_region_ranges(59)


def test_split_fraction_order():
    with pytest.raises(ConfigError, match="not ordered"):
        compute_region_ranges(313, SplitConfig(head_fraction=0.7, chest_end_fraction=0.6))


@given(st.integers(60, 5000))
def test_split_overlap_by_set_intersection(total):
    split = compute_region_ranges(total)
    head = set(range(*split.head_neck))
    chest = set(range(*split.chest))
    abdomen = set(range(*split.abdomen_pelvis))
    assert len(head & chest) == 15
    assert len(chest & abdomen) == 15
    assert not head & abdomen
    assert head | chest | abdomen == set(range(total))
    assert split.head_neck.start == 0


def test_assign_region():
    split = compute_region_ranges(313)
    assert assign_roi_to_region(BoundingBox3D(0, 0, 10, 5, 5, 20), split) == 1
    assert assign_roi_to_region(BoundingBox3D(0, 0, 70, 5, 5, 90), split) == 2
    # inside the head/chest overlap band: both contain it, lower id wins
    assert assign_roi_to_region(BoundingBox3D(0, 0, 64, 5, 5, 70), split) == 1
    # straddles chest/abdomen without containment: more overlap with abdomen
    assert assign_roi_to_region(BoundingBox3D(0, 0, 150, 5, 5, 250), split) == 3
    with pytest.raises(ConfigError):
        assign_roi_to_region(BoundingBox3D(0, 0, 400, 5, 5, 410), split)


@given(st.floats(0, 312), st.floats(0.5, 100))
def test_assign_total_and_deterministic(z0, width):
    split = compute_region_ranges(313)
    box = BoundingBox3D(0, 0, z0, 1, 1, z0 + width)
    assert assign_roi_to_region(box, split) in (1, 2, 3)
    assert assign_roi_to_region(box, split) == assign_roi_to_region(box, split)


def test_bbox_invariants():
    with pytest.raises(SchemaError):
        BoundingBox3D(1, 0, 0, 1, 1, 1)
    with pytest.raises(SchemaError):
        BoundingBox3D(-1, 0, 0, 1, 1, 1)


# --- corpus file ---------------------------------------------------------------

def test_load_corpus_mixed_forms(tmp_path):
    path = tmp_path / "gt.json"
    path.write_text(json.dumps([
        {"report_id": "r1", "physical_region": 3, "report_text": "x",
         "rois": [CECUM, parse_annotation(PLACEHOLDER).to_dict()],
         "bboxes": [[1, 2, 3, 4, 5, 6], None]},
    ]), encoding="utf-8")
    (rec,) = load_corpus(path)
    assert rec.rois[0].bbox == BoundingBox3D(1, 2, 3, 4, 5, 6)
    assert rec.rois[1] == parse_annotation(PLACEHOLDER)


def test_load_corpus_duplicate_ids(tmp_path):
    path = tmp_path / "gt.json"
    path.write_text(json.dumps([{"report_id": "a", "rois": []}] * 2))
    with pytest.raises(SchemaError, match="duplicate"):
        load_corpus(path)
