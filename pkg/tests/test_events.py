import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evagcn.events import (
    DatasetManifest,
    EventCloud,
    EventFormatError,
    EventValidationError,
    SynthConfig,
    generate_synthetic,
    read_events,
    stratified_split,
    synthesize_dataset,
    write_events,
)


def random_cloud(rng, n, width=128, height=96):
    t = np.sort(rng.integers(0, 10**9, n))
    return EventCloud(rng.integers(0, width, n), rng.integers(0, height, n), t,
                      rng.choice([-1, 1], n), width, height)


def test_csv_single_row(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("0,0,0,1\n")
    cloud = read_events(path, width=128, height=128)
    assert len(cloud) == 1
    assert tuple(cloud[0]) == (0, 0, 0, 1)


def test_empty_files(tmp_path):
    csv = tmp_path / "empty.csv"
    csv.write_text("# sensor 32 32\n")
    assert len(read_events(csv)) == 0
    binp = tmp_path / "empty.evs"
    write_events(EventCloud.empty(32, 32), binp)
    assert binp.stat().st_size == 4 + 2 + 2 + 8
    assert read_events(binp) == EventCloud.empty(32, 32)


def test_unsorted_rows_are_sorted(tmp_path):
    path = tmp_path / "u.csv"
    path.write_text("1,1,30,1\n2,2,10,-1\n3,3,20,0\n")
    cloud = read_events(path, width=8, height=8)
    assert cloud.t.tolist() == [10, 20, 30]
    assert cloud.x.tolist() == [2, 3, 1]
    # 0 maps to -1
    assert cloud.p.tolist() == [-1, -1, 1]


def test_stable_sort_on_equal_timestamps(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("# sensor 8 8\n5,0,7,1\n1,0,3,1\n6,0,7,1\n2,0,7,1\n")
    assert read_events(path).x.tolist() == [1, 5, 6, 2]


def test_binary_layout_is_exact(tmp_path):
    cloud =EventCloud.from_events([(3, 4, 1000, 1), (7, 2, 2**40, -1)], 640, 480)
    path = tmp_path / "a.evs"
    write_events(cloud, path)
    raw = path.read_bytes()
    expected = b"EVS1" + struct.pack("<HHQ", 640, 480, 2)
    expected += struct.pack("<HHQb", 3, 4, 1000, 1) + struct.pack("<HHQb", 7, 2, 2**40, -1)
    assert raw == expected


@pytest.mark.parametrize("fmt,suffix", [("csv", ".csv"), ("binary", ".evs")])
def test_round_trip_random(tmp_path, fmt, suffix):
    cloud = random_cloud(np.random.default_rng(3), 10_000)
    path = tmp_path / f"r{suffix}"
    write_events(cloud, path, fmt)
    first = path.read_bytes()
    back = read_events(path, fmt)
    assert back == cloud
    write_events(back, path, fmt)
    assert path.read_bytes() == first


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 63), st.integers(0, 31), st.integers(0, 2**50),
                          st.sampled_from([-1, 1])), max_size=40))
def test_round_trip_property(tmp_path_factory, rows):
    cloud = EventCloud.from_events(rows, 64, 32).sorted()
    d = tmp_path_factory.mktemp("rt")
    for fmt, name in (("csv", "a.csv"), ("binary", "a.evs")):
        write_events(cloud, d / name, fmt)
        assert read_events(d / name, fmt) == cloud


def test_csv_errors_name_the_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# sensor 8 8\n1,1,1,1\n1,1,x,1\n")
    with pytest.raises(EventFormatError, match=":3:"):
        read_events(path)
    path.write_text("# sensor 8 8\n1,1,1,2\n")
    with pytest.raises(EventFormatError, match=":2:"):
        read_events(path)
    path.write_text("1,1,1\n")
    with pytest.raises(EventFormatError):
        read_events(path, width=8, height=8)


def test_csv_needs_sensor_size(tmp_path):
    path = tmp_path / "nosize.csv"
    path.write_text("1,1,1,1\n")
    with pytest.raises(EventFormatError, match="sensor"):
        read_events(path)


def test_out_of_bounds_is_validation_error(tmp_path):
    path = tmp_path / "oob.csv"
    path.write_text("8,0,0,1\n")
    with pytest.raises(EventValidationError):
        read_events(path, width=8, height=8)


def test_binary_errors_name_the_offset(tmp_path):
    path = tmp_path / "bad.evs"
    path.write_bytes(b"EVS2" + bytes(12))
    with pytest.raises(EventFormatError, match="offset 0"):
        read_events(path)
    good = EventCloud.from_events([(1, 1, 1, 1), (2, 2, 2, 1)], 8, 8)
    write_events(good, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(EventFormatError, match="offset 29"):
        read_events(path)
    bad = bytearray(raw)
    bad[-1] = 3
    path.write_bytes(bytes(bad))
    with pytest.raises(EventFormatError, match="offset 29"):
        read_events(path)


def test_generator_static_scene_without_noise_is_empty():
    cfg = SynthConfig(speed=0.0, noise_rate=0.0)
    for c in range(4):
        assert len(generate_synthetic(c, cfg, seed=1)) == 0


def test_generator_is_deterministic_and_valid():
    cfg = SynthConfig()
    for c in range(4):
        a = generate_synthetic(c, cfg, seed=11)
        b = generate_synthetic(c, cfg, seed=11)
        assert a == b
        a.validate()
        assert a.label == c
        assert 1_000 <= len(a) <= 10_000
    assert generate_synthetic(0, cfg, seed=11) != generate_synthetic(0, cfg, seed=12)
    with pytest.raises(ValueError):
        generate_synthetic(4, cfg)


def _rotation_sign(cloud, bins=12):
    # signed angular velocity of the centroid of the positive (leading-edge) events
    on = cloud.p > 0
    x, y, t = cloud.x[on] + 0.5, cloud.y[on] + 0.5, cloud.t[on]
    edges = np.linspace(t.min(), t.max() + 1, bins + 1)
    cx, cy = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (t >= lo) & (t < hi)
        cx.append(x[m].mean())
        cy.append(y[m].mean())
    cx, cy = np.array(cx) - np.mean(cx), np.array(cy) - np.mean(cy)
    # z-component of r x v in screen coordinates (y down): positive means clockwise on screen
    cross = cx[:-1] * np.diff(cy) - cy[:-1] * np.diff(cx)
    return np.sign(cross.sum())


def test_circle_classes_rotate_in_opposite_directions():
    cfg = SynthConfig(noise_rate=0.0)
    for seed in range(5):
        cw = _rotation_sign(generate_synthetic(2, cfg, seed))
        ccw = _rotation_sign(generate_synthetic(3, cfg, seed))
        assert cw == 1 and ccw == -1


def test_stratified_split_balance():
    labels = np.repeat(np.arange(4), 100)
    split = stratified_split(labels, 0.2, seed=0)
    split = np.array(split)
    for c in range(4):
        assert np.sum((labels == c) & (split == "test")) == 20
    assert split.tolist() == stratified_split(labels, 0.2, seed=0)


def test_synthesize_dataset(tmp_path):
    cfg = SynthConfig(num_steps=20)
    m = synthesize_dataset(tmp_path / "a", num_classes=2, samples_per_class=5, seed=3, config=cfg)
    assert len(m.split("train")) == 8 and len(m.split("test")) == 2
    assert len(list((tmp_path / "a" / "events").iterdir())) == 10
    loaded = DatasetManifest.load_file(tmp_path / "a" / "manifest.json")
    assert [s.id for s in loaded.samples] == [s.id for s in m.samples]
    s = loaded.samples[0]
    assert loaded.load(s).label == s.label
    synthesize_dataset(tmp_path / "b", num_classes=2, samples_per_class=5, seed=3, config=cfg)
    for f in sorted((tmp_path / "a" / "events").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / "events" / f.name).read_bytes()
    ja = (tmp_path / "a" / "manifest.json").read_text()
    jb = (tmp_path / "b" / "manifest.json").read_text()
    assert ja == jb


def test_manifest_invariants(tmp_path):
    from evagcn.events import Sample
    with pytest.raises(EventValidationError):
        DatasetManifest("x", 2, [Sample("a", "a.evs", 2, "train")])
    with pytest.raises(EventValidationError):
        DatasetManifest("x", 2, [Sample("a", "a.evs", 0, "train"), Sample("b", "a.evs", 1, "test")])
    with pytest.raises(EventValidationError):
        DatasetManifest("x", 1, [])
