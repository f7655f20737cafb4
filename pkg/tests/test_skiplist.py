import random

from bytefs.skiplist import SkipList


def test_empty_lookup():
    sl = SkipList()
    assert sl.get(42) is None
    assert 42 not in sl


def test_insert_get_delete():
    sl = SkipList()
    sl.insert(3, "c")
    sl.insert(1, "a")
    sl.insert(2, "b")
    assert sl.get(2) == "b"
    assert list(sl.keys()) == [1, 2, 3]
    assert sl.delete(2)
    assert not sl.delete(2)
    assert list(sl.keys()) == [1, 3]


def test_insert_overwrites_value():
    sl = SkipList()
    sl.insert(7, "x")
    sl.insert(7, "y")
    assert sl.get(7) == "y"
    assert len(sl) == 1


def test_random_ops_match_sorted_map_oracle():
    rng = random.Random(1234)
    sl = SkipList(seed=1)
    oracle = {}
    for step in range(10_000):
        key = rng.randrange(500)
        op = rng.random()
        if op < 0.5:
            sl.insert(key, step)
            oracle[key] = step
        elif op < 0.8:
            assert sl.get(key) == oracle.get(key)
        else:
            assert sl.delete(key) == (key in oracle)
            oracle.pop(key, None)
        if step % 1000 == 0:
            assert list(sl.items()) == sorted(oracle.items())
    assert list(sl.items()) == sorted(oracle.items())


def mean_lookup_comparisons(n: int, probes: int = 2000) -> float:
    sl = SkipList(seed=7)
    for k in range(n):
        sl.insert(k, k)
    rng = random.Random(99)
    sl.comparisons = 0
    for _ in range(probes):
        sl.get(rng.randrange(n))
    return sl.comparisons / probes


def test_lookup_cost_grows_logarithmically():
    small = mean_lookup_comparisons(2 ** 8)
    large = mean_lookup_comparisons(2 ** 12)
    # 4x exponent growth should cost ~1.5x comparisons; allow 2x slack
    assert large <= 2 * (small * 1.5) + 4
