import dataclasses

import numpy as np
import pytest

from canids.datasets import (
    DOS_CAN_ID,
    AttackKind,
    Dataset,
    DatasetSource,
    IdSchedule,
    SplitSpec,
    TrafficProfile,
    generate_benign,
    inject_attack,
    load_dataset,
    make_profile,
    save_dataset,
    split_contiguous,
    take_test_prefix,
)
from canids.errors import (
    InsufficientData,
    InvalidProfile,
    InvalidSpec,
    InvalidWindow,
    ParseError,
    RateNonPositive,
)
from canids.frames import SCHEMA_BENIGN, SCHEMA_RAW, CanFrame, Label


def _dataset(n, label=Label.BENIGN, source=DatasetSource.SYNTHETIC):
    frames = [CanFrame(0.01 * k, 0x110, 0, b"", label) for k in range(n)]
    return Dataset(frames, source)


def test_split_exact_fractions():
    train, val, test = split_contiguous(_dataset(1000), SplitSpec())
    assert (len(train), len(val), len(test)) == (750, 150, 100)


def test_split_degenerate_rounding():
    train, val, test = split_contiguous(_dataset(7), SplitSpec())
    assert (len(train), len(val), len(test)) == (5, 1, 1)


def test_split_is_contiguous_and_covers_input():
    ds = _dataset(997)
    train, val, test = split_contiguous(ds, SplitSpec())
    rebuilt = train.frames + val.frames + test.frames
    assert rebuilt == ds.frames


def test_split_ignores_seed():
    a = split_contiguous(_dataset(500), SplitSpec(seed=1))
    b = split_contiguous(_dataset(500), SplitSpec(seed=2))
    for x, y in zip(a, b):
        assert x.frames == y.frames


def test_split_fractions_must_sum_to_one():
    with pytest.raises(InvalidSpec):
        SplitSpec(0.5, 0.3, 0.3)


def test_split_rejects_attack_sources():
    ds = _dataset(200, source=DatasetSource.DOS_LOG)
    with pytest.raises(InvalidSpec):
        split_contiguous(ds, SplitSpec())


def test_take_test_prefix_preserves_order():
    ds = _dataset(300)
    prefix = take_test_prefix(ds, 100)
    assert prefix.frames == ds.frames[:100]


def test_take_test_prefix_zero_is_empty():
    assert len(take_test_prefix(_dataset(5), 0)) == 0


def test_take_test_prefix_requires_enough_frames():
    with pytest.raises(InsufficientData):
        take_test_prefix(_dataset(5), 6)


def test_single_schedule_without_jitter_is_exact():
    profile = TrafficProfile([IdSchedule(0x123, 1.0)], duration_s=10.0, seed=0)
    ds = generate_benign(profile)
    assert [f.timestamp for f in ds.frames] == pytest.approx(list(range(1, 11)))
    assert all(f.can_id == 0x123 for f in ds.frames)
    assert all(f.label is Label.BENIGN for f in ds.frames)


def test_generation_is_deterministic():
    profile = make_profile("small", seed=9)
    a = generate_benign(profile)
    b = generate_benign(profile)
    assert a.frames == b.frames


def test_generation_differs_across_seeds():
    a = generate_benign(make_profile("small", seed=1))
    b = generate_benign(make_profile("small", seed=2))
    assert a.frames != b.frames


def test_timestamps_non_decreasing():
    ds = generate_benign(make_profile("small", seed=4))
    times = [f.timestamp for f in ds.frames]
    assert all(t1 >= t0 for t0, t1 in zip(times, times[1:]))


def test_desk_profile_frame_volume():
    profile = make_profile("desk", seed=0)
    short = dataclasses.replace(profile, duration_s=60.0)
    ds = generate_benign(short)
    # sum(duration/period) estimate; phase offsets drop a few at the edges
    estimate = short.expected_frame_count()
    assert 0.99 * estimate <= len(ds.frames) <= 1.01 * estimate
    assert len(ds.frames) > 30_000
    assert len({f.can_id for f in ds.frames}) == 20


def test_desk_profile_meets_volume_floor():
    profile = make_profile("desk", seed=0)
    assert profile.expected_frame_count() >= 150_000


def test_profile_validation():
    with pytest.raises(InvalidProfile):
        TrafficProfile([], duration_s=1.0)
    with pytest.raises(InvalidProfile):
        TrafficProfile([IdSchedule(1, 0.0)], duration_s=1.0)
    with pytest.raises(InvalidProfile):
        TrafficProfile([IdSchedule(1, 1.0, jitter=1.0)], duration_s=1.0)
    with pytest.raises(InvalidProfile):
        make_profile("bogus")


def test_inject_rate_zero_is_identity():
    ds = generate_benign(make_profile("small", seed=3))
    out = inject_attack(ds, AttackKind.DOS, rate=0.0, window=(1.0, 5.0))
    assert out.frames == ds.frames


def test_inject_negative_rate_rejected():
    ds = generate_benign(make_profile("small", seed=3))
    with pytest.raises(RateNonPositive):
        inject_attack(ds, AttackKind.DOS, rate=-1.0, window=(1.0, 5.0))


def test_inject_count_and_dos_id():
    ds = generate_benign(make_profile("small", seed=3))
    out = inject_attack(ds, AttackKind.DOS, rate=100.0, window=(2.0, 6.5), seed=1)
    injected = [f for f in out.frames if f.label is Label.ATTACK]
    assert len(injected) == int(100.0 * 4.5)
    assert all(f.can_id == DOS_CAN_ID for f in injected)
    assert all(2.0 <= f.timestamp <= 6.5 for f in injected)


def test_fuzzy_ids_cover_many_values():
    ds = generate_benign(make_profile("small", seed=3))
    out = inject_attack(ds, AttackKind.FUZZY, rate=100.0, window=(1.0, 11.0), seed=5)
    injected = {f.can_id for f in out.frames if f.label is Label.ATTACK}
    assert len(injected) > 50
    assert all(i <= 0x7FF for i in injected)


def test_spoof_uses_given_id_and_requires_one():
    ds = generate_benign(make_profile("small", seed=3))
    out = inject_attack(
        ds, AttackKind.SPOOF, rate=50.0, window=(1.0, 5.0), spoof_id=0x316
    )
    injected = [f for f in out.frames if f.label is Label.ATTACK]
    assert injected and all(f.can_id == 0x316 for f in injected)
    with pytest.raises(InvalidSpec):
        inject_attack(ds, AttackKind.SPOOF, rate=50.0, window=(1.0, 5.0))


def test_inject_never_touches_existing_frames():
    ds = generate_benign(make_profile("small", seed=3))
    out = inject_attack(ds, AttackKind.FUZZY, rate=200.0, window=(1.0, 9.0), seed=2)
    survivors = [f for f in out.frames if f.label is Label.BENIGN]
    assert survivors == ds.frames
    times = [f.timestamp for f in out.frames]
    assert all(t1 >= t0 for t0, t1 in zip(times, times[1:]))


def test_inject_is_deterministic_per_seed():
    ds = generate_benign(make_profile("small", seed=3))
    a = inject_attack(ds, AttackKind.FUZZY, rate=100.0, window=(1.0, 9.0), seed=7)
    b = inject_attack(ds, AttackKind.FUZZY, rate=100.0, window=(1.0, 9.0), seed=7)
    assert a.frames == b.frames


def test_inject_window_validation():
    ds = generate_benign(make_profile("small", seed=3))
    with pytest.raises(InvalidWindow):
        inject_attack(ds, AttackKind.DOS, rate=1.0, window=(5.0, 5.0))
    with pytest.raises(InvalidWindow):
        inject_attack(ds, AttackKind.DOS, rate=1.0, window=(0.0, 1e9))


def test_save_load_roundtrip(tmp_path):
    ds = generate_benign(make_profile("small", seed=8))
    ds = inject_attack(ds, AttackKind.DOS, rate=20.0, window=(5.0, 15.0), seed=1)
    path = tmp_path / "capture.log"
    save_dataset(path, ds)
    loaded = load_dataset(path, SCHEMA_BENIGN)
    assert loaded.frames == ds.frames


def test_load_reports_label_counts(tmp_path, caplog):
    ds = generate_benign(make_profile("small", seed=8))
    path = tmp_path / "benign.log"
    save_dataset(path, ds)
    with caplog.at_level("INFO", logger="canids.datasets"):
        load_dataset(path, SCHEMA_BENIGN)
    assert any("benign=" in r.message for r in caplog.records)


def test_load_empty_file_warns(tmp_path, caplog):
    path = tmp_path / "empty.log"
    path.write_text("")
    with caplog.at_level("WARNING", logger="canids.datasets"):
        ds = load_dataset(path, SCHEMA_RAW)
    assert len(ds) == 0
    assert any("no records" in r.message for r in caplog.records)


def test_load_skip_policy_counts_bad_rows(tmp_path, caplog):
    path = tmp_path / "dirty.log"
    path.write_text("0.0,0316,1,05\nnot a record\n0.2,0316,1,05\n")
    with pytest.raises(ParseError):
        load_dataset(path, SCHEMA_RAW)
    with caplog.at_level("WARNING", logger="canids.datasets"):
        ds = load_dataset(path, SCHEMA_RAW, on_error="skip")
    assert len(ds) == 2
    assert any("skipped 1" in r.message for r in caplog.records)


def test_load_rejects_timestamp_regression(tmp_path):
    path = tmp_path / "bad.log"
    path.write_text("1.0,0316,1,05\n0.5,0316,1,05\n")
    with pytest.raises(ParseError):
        load_dataset(path, SCHEMA_RAW)
