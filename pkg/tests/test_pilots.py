import numpy as np
import pytest
from hypothesis import given, strategies as st

from audsim.config import ExperimentConfig
from audsim.pilots import (assign_channels, build_pilot_matrices, generate_pilots,
                           load_pilot_book, make_pilot_book, save_pilot_book)


def test_pilot_entries_and_norm(rng):
    P = generate_pilots(50, 8, rng)
    assert P.shape == (8, 50)
    np.testing.assert_allclose(np.abs(P), 1 / np.sqrt(8), atol=1e-15)
    np.testing.assert_allclose(np.linalg.norm(P, axis=0), 1.0, atol=1e-14)
    assert set(np.unique(np.sign(P.real))) <= {-1.0, 1.0}


def test_pilot_length_one(rng):
    P = generate_pilots(4, 1, rng)
    np.testing.assert_allclose(np.abs(P), 1.0)


def test_pilots_deterministic():
    a = generate_pilots(30, 8, np.random.default_rng(7))
    b = generate_pilots(30, 8, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_assignment_partition():
    assert assign_channels(1, 2, 1).tolist() == [[0], [1]]


def test_assignment_full():
    assert assign_channels(1, 2, 2).tolist() == [[0, 1], [0, 1]]


def test_assignment_counts_by_enumeration():
    sets = assign_channels(2, 4, 2)
    counts = [sum(f in row for row in sets.tolist()) for f in range(4)]
    assert counts == [4, 4, 4, 4]


@given(Q=st.integers(1, 20), F=st.integers(1, 5), data=st.data())
def test_assignment_properties(Q, F, data):
    C = data.draw(st.integers(1, F))
    mode = data.draw(st.sampled_from(["modular", "random"]))
    sets = assign_channels(Q, F, C, np.random.default_rng(0), mode)
    assert sets.shape == (Q * F, C)
    assert all(len(set(r)) == C for r in sets.tolist())
    assert np.bincount(sets.ravel(), minlength=F).tolist() == [Q * C] * F


def test_identical_matrices_when_all_users_everywhere(rng):
    book = make_pilot_book(ExperimentConfig(users_per_channel_base=5, num_channels=3,
                                            num_copies=3), rng)
    for f in range(1, 3):
        assert np.array_equal(book.per_channel_matrix[f], book.per_channel_matrix[0])


def test_disjoint_users_with_one_copy(rng):
    book = make_pilot_book(ExperimentConfig(users_per_channel_base=5, num_channels=3), rng)
    seen = np.concatenate(book.per_channel_users)
    assert len(seen) == len(set(seen.tolist())) == 15


def test_single_user_single_channel(rng):
    P = generate_pilots(1, 8, rng)
    book = build_pilot_matrices(P, np.array([[0]]))
    assert book.per_channel_matrix[0].shape == (8, 1)
    assert np.array_equal(book.per_channel_matrix[0][:, 0], P[:, 0])


@given(Q=st.integers(1, 6), F=st.integers(1, 4), T=st.integers(1, 10), data=st.data())
def test_book_columns_are_pilots(Q, F, T, data):
    C = data.draw(st.integers(1, F))
    cfg = ExperimentConfig(users_per_channel_base=Q, num_channels=F, num_copies=C,
                           pilot_length=T)
    book = make_pilot_book(cfg, np.random.default_rng(1))
    for f in range(F):
        assert book.per_channel_matrix[f].shape == (T, Q * C)
        for j, q in enumerate(book.per_channel_users[f]):
            assert f in book.channel_sets[q]
            assert np.array_equal(book.per_channel_matrix[f][:, j], book.pilots[:, q])
            assert book.local_index[f, q] == j


def test_superchannel_columns_unit_norm(rng):
    book = make_pilot_book(ExperimentConfig(users_per_channel_base=4, num_channels=4,
                                            num_copies=2, pilot_length=8), rng)
    covered = np.concatenate([sc.users for sc in book.superchannels])
    assert sorted(covered.tolist()) == list(range(book.num_users))
    for sc in book.superchannels:
        assert sc.matrix.shape == (16, len(sc.users))
        np.testing.assert_allclose(np.linalg.norm(sc.matrix, axis=0), 1.0, atol=1e-14)
        assert (book.channel_sets[sc.users] == np.array(sc.channels)).all()


@pytest.mark.parametrize("fmt", ["csv", "bin"])
def test_dump_round_trip(tmp_path, rng, fmt):
    book = make_pilot_book(ExperimentConfig(users_per_channel_base=3, num_channels=3,
                                            num_copies=2, pilot_length=5), rng)
    path = tmp_path / f"pilots.{fmt}"
    save_pilot_book(book, path, fmt)
    back = load_pilot_book(path, fmt)
    assert np.array_equal(back.pilots, book.pilots)
    assert np.array_equal(back.channel_sets, book.channel_sets)
    for a, b in zip(back.per_channel_matrix, book.per_channel_matrix):
        assert np.array_equal(a, b)
