"""Merkle roots against an independent recursive reference."""

from __future__ import annotations

import hashlib
import random

from hypothesis import given
from hypothesis import strategies as st

from pbl.merkle import ZERO_DIGEST, merkle_root
from reference import merkle_root_reference


def test_empty_list_is_zero_digest():
    assert merkle_root([]) == ZERO_DIGEST == bytes(32)


def test_single_leaf_pairs_with_itself():
    leaf = b"only"
    h = hashlib.sha256(leaf).digest()
    assert merkle_root([leaf]) == hashlib.sha256(h + h).digest()
    assert merkle_root([leaf]) == merkle_root_reference([leaf])


def test_two_leaves():
    a, b = b"left", b"right"
    ha, hb = hashlib.sha256(a).digest(), hashlib.sha256(b).digest()
    assert merkle_root([a, b]) == hashlib.sha256(ha + hb).digest()


def test_odd_count_duplicates_last():
    leaves = [b"a", b"b", b"c"]
    assert merkle_root(leaves) == merkle_root_reference(leaves)
    assert merkle_root(leaves) == merkle_root([b"a", b"b", b"c", b"c"])


def test_matches_reference_on_all_small_sizes():
    rng = random.Random(0)
    for n in range(17):
        leaves = [rng.randbytes(rng.randrange(0, 24)) for _ in range(n)]
        assert merkle_root(leaves) == merkle_root_reference(leaves), n


def test_swapping_leaves_changes_root():
    """Any two distinct leaves swapped give a different root (500 trials)."""
    rng = random.Random(9)
    for _ in range(500):
        n = rng.randrange(2, 9)
        leaves = [rng.randbytes(8) + bytes([i]) for i in range(n)]
        i, j = rng.sample(range(n), 2)
        swapped = list(leaves)
        swapped[i], swapped[j] = swapped[j], swapped[i]
        assert merkle_root(leaves) != merkle_root(swapped)


@given(st.lists(st.binary(max_size=16), max_size=12))
def test_reference_agreement_property(leaves):
    assert merkle_root(leaves) == merkle_root_reference(leaves)


def test_determinism_across_calls():
    leaves = [b"x", b"y", b"z"]
    assert merkle_root(leaves) == merkle_root(leaves)
