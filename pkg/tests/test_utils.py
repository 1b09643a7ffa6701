import numpy as np
import pytest

from src.utils import (STREAM_TAGS, Checkpoint, derive_seed, make_rng, replicate_blocks, thread_map,
                       wilson_interval)


def test_streams_are_keyed():
    a = make_rng(1, 4, 2).standard_normal(5)
    assert np.array_equal(a, make_rng(1, 4, 2).standard_normal(5))
    assert not np.array_equal(a, make_rng(1, 4, 3).standard_normal(5))
    with pytest.raises(ValueError):
        make_rng(-1)


def test_derived_seeds():
    tag = STREAM_TAGS["dekking_host"]
    seed = derive_seed(5, tag, 3)
    assert seed == derive_seed(5, tag, 3)
    assert seed >= 0 and seed != 5
    assert seed != derive_seed(5, tag, 4)


def test_replicate_blocks():
    assert replicate_blocks(130) == [(0, 64), (1, 64), (2, 2)]
    assert replicate_blocks(64) == [(0, 64)]
    with pytest.raises(ValueError):
        replicate_blocks(0)


def test_thread_map_keeps_order():
    assert thread_map(lambda x: x * x, range(10), threads=4) == [x * x for x in range(10)]


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == pytest.approx(0.0, abs=1e-12)
    assert 0 < hi < 0.05
    lo, hi = wilson_interval(np.array([50]), 100)
    assert lo[0] < 0.5 < hi[0]


def test_checkpoint_round_trip(tmp_path):
    checkpoint = Checkpoint(tmp_path, "abc")
    assert checkpoint.load("k") is None
    checkpoint.save("k", {"i": [1.5, 3]})
    assert checkpoint.load("k") == {"i": [1.5, 3]}
    assert Checkpoint(None, "abc").load("k") is None
