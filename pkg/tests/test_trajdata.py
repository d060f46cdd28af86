from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from primflow.errors import ParseError
from primflow.trajdata import (
    denormalize,
    load_trajectories,
    load_truth,
    normalize,
    save_trajectories,
    save_truth,
    split,
    synth_generate,
    train_val_test_split,
    task_indices,
    task_vocabulary,
    window,
)
from primflow.types import SynthSpec, Trajectory

from conftest import make_trajectories


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def test_minimal_csv(tmp_path: Path) -> None:
    path = _write(
        tmp_path / "a.csv", "traj_id,task_id,t,c0,c1\na,walk,0,1.0,2.0\na,walk,1,1.5,2.5\n"
    )
    (traj,) = load_trajectories(path)
    assert traj.id == "a"
    assert traj.task == "walk"
    assert traj.length == 2
    assert traj.channels == 2
    assert traj.points[:, 1].tolist() == [1.5, 2.5]


def test_csv_parse_error_names_line(tmp_path: Path) -> None:
    path = _write(
        tmp_path / "bad.csv",
        "traj_id,task_id,t,c0,c1\na,x,0,1.0,2.0\na,x,1,1.0,abc\n",
    )
    with pytest.raises(ParseError) as excinfo:
        load_trajectories(path)
    assert excinfo.value.line == 3


def test_csv_duplicate_timestep(tmp_path: Path) -> None:
    path = _write(tmp_path / "dup.csv", "traj_id,task_id,t,c0\na,x,0,1\na,x,0,2\n")
    with pytest.raises(ParseError) as excinfo:
        load_trajectories(path)
    assert excinfo.value.line == 3


def test_csv_single_point_trajectory(tmp_path: Path) -> None:
    path = _write(tmp_path / "short.csv", "traj_id,task_id,t,c0\na,x,0,1\nb,x,0,1\nb,x,1,2\n")
    with pytest.raises(ParseError) as excinfo:
        load_trajectories(path)
    assert excinfo.value.line == 2


def test_csv_interleaved_ids(tmp_path: Path) -> None:
    rows = ["traj_id,task_id,t,c0"]
    for t in range(3):
        rows.append(f"a,x,{t},{t}")
        rows.append(f"b,y,{t},{10 + t}")
    rows.append("b,y,3,13")
    path = _write(tmp_path / "mixed.csv", "\n".join(rows) + "\n")
    a, b = load_trajectories(path)
    assert (a.id, a.length) == ("a", 3)
    assert (b.id, b.length) == ("b", 4)
    assert b.points[0].tolist() == [10.0, 11.0, 12.0, 13.0]


def test_jsonl_errors(tmp_path: Path) -> None:
    path = _write(tmp_path / "a.jsonl", '{"id": "a", "points": [[0, 0], [1, 1]]}\n{"id": "b"}\n')
    with pytest.raises(ParseError) as excinfo:
        load_trajectories(path)
    assert excinfo.value.line == 2


@pytest.mark.parametrize("suffix", ["csv", "jsonl"])
def test_files_are_lossless(tmp_path: Path, suffix: str) -> None:
    original = make_trajectories(3, 7, channels=3, seed=5, tasks=2)
    path = tmp_path / f"data.{suffix}"
    save_trajectories(original, path)
    loaded = load_trajectories(path)
    assert [t.id for t in loaded] == [t.id for t in original]
    assert [t.task for t in loaded] == [t.task for t in original]
    for a, b in zip(original, loaded):
        assert np.array_equal(a.points, b.points)


def test_window_counts() -> None:
    (traj,) = make_trajectories(1, 48)
    samples = window([traj], 20, 8, 20)
    assert len(samples) == 2
    assert [s.offset for s in samples] == [0, 20]
    for s in samples:
        assert s.observed.shape == (2, 8)
        assert s.future.shape == (2, 12)
        assert s.source_id == traj.id
    assert np.array_equal(samples[1].full, traj.points[:, 20:40])


def test_window_edge_lengths() -> None:
    assert window(make_trajectories(1, 19), 20, 8) == []
    (sample,) = window(make_trajectories(1, 20), 20, 8)
    assert sample.offset == 0


def test_window_rejects_bad_arguments() -> None:
    with pytest.raises(ValueError):
        window([], 20, 0)
    with pytest.raises(ValueError):
        window([], 20, 8, stride=0)


def test_normalize_constant_channel() -> None:
    points = np.stack([np.full(5, 3.0), np.arange(5.0)])
    normalized, stats = normalize([Trajectory(id="a", task="", points=points)])
    assert stats.clamped == [True, False]
    assert stats.std[0] == 1.0
    assert np.array_equal(normalized[0].points[0], np.zeros(5))


def test_normalize_standardized_data_is_unchanged(rng: np.random.Generator) -> None:
    values = rng.normal(size=(2, 500))
    values = (values - values.mean(axis=1, keepdims=True)) / values.std(axis=1, keepdims=True)
    normalized, stats = normalize([Trajectory(id="a", task="", points=values)])
    assert np.allclose(stats.mean, 0.0, atol=1e-9)
    assert np.allclose(stats.std, 1.0, atol=1e-9)
    assert np.allclose(normalized[0].points, values, atol=1e-9)


def test_denormalize_inverts_normalize() -> None:
    dataset = make_trajectories(4, 10, seed=3)
    normalized, stats = normalize(dataset)
    restored = denormalize(normalized, stats)
    for a, b in zip(dataset, restored):
        assert np.allclose(a.points, b.points, atol=1e-9)


def test_normalize_reuses_given_stats() -> None:
    train, test = make_trajectories(3, 10, seed=1), make_trajectories(2, 10, seed=2)
    _, stats = normalize(train)
    _, reused = normalize(test, stats)
    assert reused is stats


def test_split_is_by_trajectory() -> None:
    dataset = make_trajectories(10, 5)
    train, test = split(dataset, 0.3, seed=4)
    assert len(test) == 3
    assert len(train) == 7
    assert not {t.id for t in train} & {t.id for t in test}
    assert split(dataset, 0.3, seed=4)[1][0].id == test[0].id


def test_validation_split_leaves_the_test_set_alone() -> None:
    dataset = make_trajectories(20, 5)
    train, val, test = train_val_test_split(dataset, 0.1, 0.2, seed=4)
    assert (len(train), len(val), len(test)) == (14, 2, 4)
    ids = [{t.id for t in part} for part in (train, val, test)]
    assert not ids[0] & ids[1] and not ids[0] & ids[2] and not ids[1] & ids[2]
    assert ids[2] == {t.id for t in split(dataset, 0.2, seed=4)[1]}
    for val_fraction, test_fraction in ((-0.1, 0.2), (0.5, 0.5), (0.1, 1.0)):
        with pytest.raises(ValueError):
            train_val_test_split(dataset, val_fraction, test_fraction)


def test_task_vocabulary() -> None:
    vocab = task_vocabulary(["run", "walk", "run", "jump"])
    assert vocab == {"jump": 0, "run": 1, "walk": 2}
    assert task_indices(["walk", "swim"], vocab) == [2, 0]


def test_synth_is_deterministic() -> None:
    spec = SynthSpec(n_trajectories=5, seed=11)
    first, truth_a = synth_generate(spec)
    second, truth_b = synth_generate(spec)
    for a, b in zip(first, second):
        assert np.array_equal(a.points, b.points)
    assert truth_a.serialize() == truth_b.serialize()


def test_synth_single_full_length_atom() -> None:
    spec = SynthSpec(M_true=1, K=12, L=12, noise_std=0.0, n_trajectories=3, seed=2)
    trajectories, truth = synth_generate(spec)
    for traj, events in zip(trajectories, truth.events):
        assert np.array_equal(traj.points, truth.true_atoms[0])
        assert len(events) == 1


def test_synth_tiles_contiguously() -> None:
    spec = SynthSpec(M_true=3, C=2, L=40, K=8, noise_std=0.0, n_trajectories=4, seed=9)
    trajectories, truth = synth_generate(spec)
    for traj, events in zip(trajectories, truth.events):
        assert events[0].onset == 0
        for prev, nxt in zip(events, events[1:]):
            assert nxt.onset == prev.onset + prev.length
            # the next atom starts where the previous one stopped
            assert np.allclose(traj.points[:, nxt.onset], traj.points[:, nxt.onset - 1])
        last = events[-1]
        assert last.onset + last.length == spec.L
        assert last.truncated == (last.length < truth.true_atoms[last.atom].shape[1])


def test_truth_file(tmp_path: Path) -> None:
    _, truth = synth_generate(SynthSpec(n_trajectories=2, seed=1))
    save_truth(truth, tmp_path / "truth.json")
    loaded = load_truth(tmp_path / "truth.json")
    assert loaded.serialize() == truth.serialize()
    assert len(loaded.true_atoms) == len(truth.true_atoms)
    for restored, atom in zip(loaded.true_atoms, truth.true_atoms):
        assert isinstance(restored, np.ndarray)
        assert np.array_equal(restored, atom)
    assert loaded.events[0][0].onset == 0
