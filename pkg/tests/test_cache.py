import pytest
from hypothesis import given, settings, strategies as st

from pushdown.acceptance import cache_trace_matches
from pushdown.cache import Tier, TieredCache


def filled(capacity, items, uniform):
    """Cache holding ``items`` = [(key, size, benefit)], inserted in order."""
    c = TieredCache(capacity, uniform=uniform)
    for k, size, b in items:
        c.update_benefit(k, b)
        assert c.cond_cache(k, f"v{k}", size)
    return c


def test_update_benefit_without_aging():
    assert TieredCache(10).update_benefit("k", 3) == 3


def test_fresh_key_outranks_after_aging():
    c = TieredCache(10)
    c.aging_floor = 10
    assert c.update_benefit("k", 1) == 11


def test_eviction_raises_floor():
    c = filled(2, [("a", 1, 7), ("b", 1, 9)], uniform=True)
    c.update_benefit("n", 8)
    assert c.cond_cache_uniform("n", "vn", 1)
    assert c.aging_floor == 7
    assert c.update_benefit("x", 1) == 8


def test_uniform_free_space_path():
    assert TieredCache(10, uniform=True).cond_cache_uniform("k", "v", 5)


def test_uniform_rejects_lower_or_equal_benefit():
    c = filled(2, [("a", 1, 7), ("b", 1, 8)], uniform=True)
    c.update_benefit("n", 5)
    assert not c.cond_cache_uniform("n", "vn", 1)
    c.update_benefit("n", 7)
    assert not c.cond_cache_uniform("n", "vn", 1)


def test_uniform_admits_and_demotes_victim():
    c = filled(2, [("a", 1, 7), ("b", 1, 8)], uniform=True)
    c.update_benefit("n", 9)
    assert c.cond_cache_uniform("n", "vn", 1)
    assert c.peek_tier("a") is Tier.DISK
    assert set(c.mem) == {"b", "n"}


def test_variable_exact_fit():
    c = filled(12, [("a", 6, 1)], uniform=False)
    assert c.cond_cache_variable("n", "vn", 6)
    assert set(c.mem) == {"a", "n"} and c.stats.mem_evictions == 0


def test_variable_prefix_eviction():
    c = filled(12, [("a", 4, 1), ("b", 4, 2), ("c", 4, 10)], uniform=False)
    c.update_benefit("n", 4)
    assert c.cond_cache_variable("n", "vn", 6)
    assert set(c.mem) == {"c", "n"}
    assert set(c.disk) == {"a", "b"}


def test_variable_rejects_below_prefix_sum():
    c = filled(12, [("a", 4, 1), ("b", 4, 2), ("c", 4, 10)], uniform=False)
    c.update_benefit("n", 2.5)
    assert not c.cond_cache_variable("n", "vn", 6)
    assert set(c.mem) == {"a", "b", "c"}


def test_variable_keeps_high_benefit_part_of_prefix():
    c = filled(10, [("a", 2, 1), ("b", 2, 3), ("c", 6, 20)], uniform=False)
    c.update_benefit("n", 30)
    assert c.cond_cache_variable("n", "vn", 5)
    # room left after admission is 5: c (size 6) goes, b and a both fit back
    assert set(c.mem) == {"a", "b", "n"}
    assert set(c.disk) == {"c"}


def test_oversized_item_never_fits():
    for uniform in (True, False):
        c = TieredCache(10, uniform=uniform)
        c.update_benefit("k", 100)
        assert not c.cond_cache("k", "v", 11)


def test_decision_mode_is_pure():
    c = filled(12, [("a", 4, 1), ("b", 4, 2), ("c", 4, 10)], uniform=False)
    before = c.snapshot()
    c.update_benefit("n", 40)
    after_benefit = c.snapshot()
    assert c.cond_cache("n", None, 6)
    assert c.snapshot() == after_benefit == before


def test_get_order_and_promotion():
    c = filled(2, [("a", 1, 5), ("b", 1, 6)], uniform=True)
    c.update_benefit("n", 7)
    c.cond_cache("n", "vn", 1)          # demotes a to disk
    assert c.get("b") == ("vb", Tier.MEMORY)
    assert c.get("zzz") is None
    c.update_benefit("a", 20)
    assert c.get("a") == ("va", Tier.DISK)
    assert c.peek_tier("a") is Tier.MEMORY   # promoted on access
    assert "a" in c.disk                     # disk copy is kept


def test_both_tiers_reported_as_memory():
    c = TieredCache(10)
    c.update_benefit("k", 1)
    c.add_disk("k", "v", 2)
    c.cond_cache("k", "v", 2)
    assert c.get("k")[1] is Tier.MEMORY


def test_invalidate():
    c = filled(10, [("a", 2, 1)], uniform=False)
    c.add_disk("a", "va", 2)
    c.invalidate("a")
    c.invalidate("nope")
    assert c.get("a") is None and c.mem_used == 0 and c.disk_used == 0


def test_disk_eviction_by_ratio():
    c = TieredCache(10, disk_capacity=3)
    c.update_benefit("hi", 4)
    c.update_benefit("lo", 3)
    c.add_disk("hi", "v", 2)
    c.add_disk("lo", "v", 1)
    assert c.evict_disk_if_needed(1) == ["hi"]


def test_disk_ratio_ties_oldest_first():
    c = TieredCache(10, disk_capacity=2)
    for k, t in (("new", 5.0), ("old", 1.0)):
        c.update_benefit(k, 2)
        c.add_disk(k, "v", 1, now=t)
    assert c.evict_disk_if_needed(1) == ["old"]


def test_unbounded_disk_never_evicts():
    c = TieredCache(10)
    c.add_disk("a", "v", 10 ** 9)
    assert c.evict_disk_if_needed(10 ** 9) == []


@pytest.mark.parametrize("uniform", [True, False])
@pytest.mark.parametrize("seed", [11, 12, 13])
def test_matches_reference_transcription(uniform, seed):
    ok, detail = cache_trace_matches(uniform, steps=3000, seed=seed, capacity=600, keys=40)
    assert ok, detail


ops = st.lists(st.tuples(st.integers(0, 25), st.integers(1, 300), st.integers(0, 9)), max_size=300)


@settings(max_examples=80, deadline=None)
@given(ops, st.booleans())
def test_invariants(trace, uniform):
    c = TieredCache(700, disk_capacity=1500, uniform=uniform)
    freq = {}
    floors = [c.aging_floor]
    for k, size, op in trace:
        size = 100 if uniform else size
        if op == 0:
            c.invalidate(k)
            freq.pop(k, None)
            continue
        freq[k] = freq.get(k, 0) + 1
        c.update_benefit(k, freq[k])
        if k not in c.mem:
            c.cond_cache(k, f"v{k}", size)
        assert c.mem_used <= c.mem_capacity
        assert c.disk_used <= c.disk_capacity
        assert c.mem_used == sum(it.size for it in c.mem.values())
        floors.append(c.aging_floor)
    assert floors == sorted(floors)


@settings(max_examples=60, deadline=None)
@given(ops)
def test_uniform_never_keeps_lower_benefit_over_evicted(trace):
    c = TieredCache(500, uniform=True)
    freq = {}
    for k, _, _ in trace:
        freq[k] = freq.get(k, 0) + 1
        c.update_benefit(k, freq[k])
        if k in c.mem:
            continue
        resident = {key: it.benefit for key, it in c.mem.items()}
        evictions = c.stats.mem_evictions
        c.cond_cache_uniform(k, "v", 100)
        if c.stats.mem_evictions > evictions:
            gone = set(resident) - set(c.mem)
            assert len(gone) == 1
            victim = gone.pop()
            assert all(resident[victim] <= b for key, b in resident.items())
