import pytest
from hypothesis import given
from hypothesis import strategies as st

from swinoir.errors import DomainError
from swinoir.topology import (
    ConnectionTopology,
    build_topology,
    interval_dense_sources,
    make_topology,
    skip_topology,
)


def literal_sequence(n):
    """The bracketed feature list for block n, written out term by term.

    Odd n:  F_1, F_2, F_4, ..., F_{n-1}
    Even n: F_1, F_3, F_5, ..., F_{n-1}
    """
    if n == 1:
        return []
    if n % 2 == 1:
        seq = [1]
        k = 2
    else:
        seq = []
        k = 1
    while k <= n - 1:
        seq.append(k)
        k += 2
    return seq


def oracle(m):
    return [set(literal_sequence(n)) for n in range(1, m + 1)]


def test_first_block_has_no_sources():
    assert interval_dense_sources(1, 1) == frozenset()


def test_small_blocks():
    assert interval_dense_sources(3, 4) == {1, 2}
    assert interval_dense_sources(4, 4) == {1, 3}


def test_oracle_blocks_five_and_six():
    assert interval_dense_sources(5, 6) == set(literal_sequence(5)) == {1, 2, 4}
    assert interval_dense_sources(6, 6) == set(literal_sequence(6)) == {1, 3, 5}


@pytest.mark.parametrize("n,m", [(0, 4), (5, 4), (-1, 3), (1, 0)])
def test_sources_domain(n, m):
    with pytest.raises(DomainError):
        interval_dense_sources(n, m)


def test_build_four_blocks():
    assert build_topology(4).as_lists() == [[], [1], [1, 2], [1, 3]]


def test_build_one_block():
    assert build_topology(1).as_lists() == [[]]


def test_build_eight_blocks():
    topo = build_topology(8)
    assert topo.sources_of(8) == [1, 3, 5, 7]
    assert topo.sources_of(7) == [1, 2, 4, 6]


@pytest.mark.parametrize("m", range(1, 33))
def test_build_matches_oracle(m):
    assert [set(s) for s in build_topology(m).sources] == oracle(m)


def test_build_rejects_zero():
    with pytest.raises(DomainError):
        build_topology(0)
    with pytest.raises(DomainError):
        skip_topology(0)


def test_skip_chain():
    assert skip_topology(4).as_lists() == [[], [1], [2], [3]]
    assert skip_topology(2).as_lists() == [[], [1]]


@given(st.integers(1, 64))
def test_skip_single_source(m):
    topo = skip_topology(m)
    assert all(len(s) == 1 for s in topo.sources[1:])


@given(st.integers(1, 64))
def test_invariants(m):
    topo = build_topology(m)
    assert not topo.sources[0]
    for n in range(2, m + 1):
        src = topo.sources_of(n)
        assert 1 in src and n - 1 in src
        assert all(1 <= k < n for k in src)
        assert len(src) == 1 + (n - 1) // 2
        if n >= 3:
            assert all(k % 2 != n % 2 for k in src if k > 1)
            assert set(skip_topology(m).sources_of(n)) < set(src)


def test_no_cap_at_32():
    assert len(build_topology(40).sources_of(40)) == 1 + 39 // 2


def test_invalid_topology_rejected():
    with pytest.raises(DomainError):
        ConnectionTopology(2, (frozenset(), frozenset({2})))
    with pytest.raises(DomainError):
        ConnectionTopology(2, (frozenset({1}), frozenset({1})))


def test_text_and_dot():
    topo = make_topology(4, "interval-dense")
    text = topo.to_text()
    assert "block 4 <- [F1, F3]" in text and "block 1 <- [F_pre]" in text
    dot = topo.to_dot()
    assert dot.startswith("digraph") and "b1 -> b4;" in dot and "b3 -> b4;" in dot
    with pytest.raises(DomainError):
        make_topology(4, "full-dense")
