import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psmforce.core import (
    AXES, CSV_HEADER, Condition, Dataset, DatasetError, Frame, Trajectory, Wrench,
    aggregate_trials, read_dataset, read_trajectory_csv, rmse, split_dataset, write_dataset,
    write_trajectory_csv,
)

from conftest import make_trajectory


def test_condition_parse_accepts_values_and_aliases():
    assert Condition.parse("free-space") is Condition.FREE_SPACE
    assert Condition.parse("SEAL_ONLY") is Condition.SEAL_ONLY
    assert Condition.parse("contact") is Condition.TROCAR_CONTACT
    with pytest.raises(ValueError):
        Condition.parse("underwater")


def test_wrench_vector_round_trip():
    w = Wrench.from_vector([1, 2, 3, 0.1, 0.2, 0.3])
    assert w.frame is Frame.BASE
    np.testing.assert_array_equal(w.as_vector(), [1, 2, 3, 0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        Wrench([np.nan, 0, 0], [0, 0, 0])


def test_trajectory_arrays_are_read_only():
    tr = make_trajectory()
    with pytest.raises(ValueError):
        tr.q[0, 0] = 1.0


def test_contact_trajectory_requires_wrench():
    tr = make_trajectory(condition="trocar-contact")
    assert tr.wrench.shape == (len(tr), 6)
    with pytest.raises(ValueError, match="wrench"):
        Trajectory(tr.t, tr.q, tr.qdot, tr.tau, Condition.TROCAR_CONTACT, None)
    with pytest.raises(ValueError, match="wrench"):
        Trajectory(tr.t, tr.q, tr.qdot, tr.tau, Condition.TROCAR, tr.wrench)
    inst = Trajectory(tr.t, tr.q, tr.qdot, tr.tau, Condition.TROCAR, tr.wrench, instrumented=True)
    assert inst.instrumented


def test_trajectory_rejects_bad_time_and_nan():
    tr = make_trajectory(n=5)
    t = tr.t.copy()
    t[3] = t[2]
    with pytest.raises(ValueError, match="increasing"):
        Trajectory(t, tr.q, tr.qdot, tr.tau, tr.condition)
    q = tr.q.copy()
    q[1, 1] = np.inf
    with pytest.raises(ValueError, match="non-finite"):
        Trajectory(tr.t, q, tr.qdot, tr.tau, tr.condition)


def test_samples_iterate_in_order():
    tr = make_trajectory(n=6)
    samples = list(tr)
    assert [s.t for s in samples] == list(tr.t)
    np.testing.assert_array_equal(samples[2].tau_meas, tr.tau[2])
    assert tr.features().shape == (6, 12)


def test_split_sizes_for_hundred_samples():
    ds = split_dataset(Dataset((make_trajectory(n=100),), 10.0), seed=7)
    assert [ds.split.size(n) for n in ("train", "validation", "test")] == [80, 10, 10]
    assert ds.split_seed == 7
    b = ds.split.train[0], ds.split.validation[0], ds.split.test[0]
    assert (b[0].stop, b[1].start, b[1].stop, b[2].start) == (80, 80, 90, 90)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=10, max_value=400), min_size=1, max_size=4))
def test_split_partitions_every_trajectory(lengths):
    trs = tuple(make_trajectory(n=n, seed=k) for k, n in enumerate(lengths))
    ds = split_dataset(Dataset(trs, 10.0))
    for k, n in enumerate(lengths):
        tr_b, va_b, te_b = (ds.split.blocks(name)[k] for name in ("train", "validation", "test"))
        assert tr_b.start == 0 and tr_b.stop == va_b.start and va_b.stop == te_b.start and te_b.stop == n
        assert len(va_b) == len(te_b) == math.floor(0.1 * n)
    assert sum(ds.split.size(name) for name in ("train", "validation", "test")) == ds.n_samples


def test_split_rejects_tiny_dataset():
    with pytest.raises(DatasetError, match="too small"):
        split_dataset(Dataset((make_trajectory(n=9),), 10.0))


def test_segments_need_a_split():
    ds = Dataset((make_trajectory(),), 10.0)
    with pytest.raises(DatasetError):
        ds.segments("train")


def test_prefix_spans_trajectories():
    ds = Dataset((make_trajectory(n=30, seed=1), make_trajectory(n=30, seed=2)), 10.0)
    p = ds.prefix(4.5)
    assert [len(tr) for tr in p.trajectories] == [30, 15]
    assert p.trajectories[1] == ds.trajectories[1].slice(0, 15)
    with pytest.raises(DatasetError, match="requested"):
        ds.prefix(7.0)


def test_csv_round_trip_is_bitwise(tmp_path):
    tr = make_trajectory(n=25, condition="trocar-contact", seed=3)
    path = tmp_path / "tr.csv"
    write_trajectory_csv(tr, path)
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    assert read_trajectory_csv(path) == tr


def test_header_only_csv_is_empty(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text(",".join(CSV_HEADER) + "\n")
    assert read_trajectory_csv(path) is None
    assert read_dataset(path).trajectories == ()


def test_malformed_row_reports_line(tmp_path):
    tr = make_trajectory(n=4)
    path = tmp_path / "bad.csv"
    write_trajectory_csv(tr, path)
    lines = path.read_text().splitlines()
    lines[3] = lines[3].replace(lines[3].split(",")[2], "abc", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match=r"bad\.csv:4:"):
        read_trajectory_csv(path)


def test_dataset_round_trip(tmp_path):
    ds = split_dataset(Dataset((make_trajectory(n=50, seed=1), make_trajectory(n=30, seed=2)), 10.0), seed=3)
    path = write_dataset(ds, tmp_path / "d" / "set.json")
    assert read_dataset(path) == ds


def test_rmse_matches_hand_value():
    pred = np.array([[1.0, 0.0], [3.0, 0.0]])
    truth = np.zeros((2, 2))
    np.testing.assert_allclose(rmse(pred, truth), [math.sqrt(5.0), 0.0])
    with pytest.raises(ValueError):
        rmse(pred, truth[:1])


def test_aggregate_uses_sample_std():
    per = [[1.0] * 6, [2.0] * 6, [4.0] * 6]
    st_ = aggregate_trials(per)
    assert st_.trials == 3
    np.testing.assert_allclose(st_.mean, [statistics.mean([1, 2, 4])] * 6)
    np.testing.assert_allclose(st_.std, [statistics.stdev([1, 2, 4])] * 6)
    np.testing.assert_array_equal(aggregate_trials([[1.0] * 6]).std, np.zeros(6))
    assert len(AXES) == 6
