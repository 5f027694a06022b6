import pytest

from dwdpsim.errors import InvariantViolation
from dwdpsim.sim.fabric import CopyFabric, _max_min


def drain(fab):
    done = {}
    while True:
        t = fab.next_time()
        if t is None:
            return done
        for job in fab.step(t):
            done[job.key] = t


def test_single_pull_at_link_rate():
    fab = CopyFabric(2, 1e9, 2, tdm=True)  # 1 byte per ns
    fab.submit(0, 0, "a", [(1, 1000)])
    assert drain(fab) == {"a": 1000}


def test_max_min_shares():
    # source 0 feeds two destinations; destination 2 also pulls from source 1
    rates = _max_min([(0, 1), (0, 2), (1, 2)], 3, 1.0)
    assert rates == pytest.approx([0.5, 0.5, 0.5])
    rates = _max_min([(0, 1), (0, 2), (0, 3), (1, 3)], 4, 1.0)
    assert rates[:3] == pytest.approx([1 / 3] * 3) and rates[3] == pytest.approx(2 / 3)


def test_monolithic_serializes_at_source():
    fab = CopyFabric(3, 1e9, 2, tdm=False)
    fab.submit(0, 1, "x", [(0, 1000)])
    fab.submit(0, 2, "y", [(0, 1000)])
    done = drain(fab)
    # two admitted pulls share the source port
    assert done == {"x": 2000, "y": 2000}


def test_source_slot_limit():
    fab = CopyFabric(4, 1e9, 2, tdm=False)
    for d in (1, 2, 3):
        fab.submit(0, d, d, [(0, 1000)])
    done = drain(fab)
    assert sorted(done.values()) == [2000, 2000, 3000]


def test_no_contention_only_ingress_limits():
    fab = CopyFabric(4, 1e9, 2, tdm=True, contention=False)
    for d in (1, 2, 3):
        fab.submit(0, d, d, [(0, 1000), (0, 1000)])
    assert drain(fab) == {1: 2000, 2: 2000, 3: 2000}


def test_tdm_round_robin_across_destinations():
    fab = CopyFabric(3, 1e9, 1, tdm=True)
    fab.submit(0, 1, "a", [(0, 100)] * 3)
    fab.submit(0, 2, "b", [(0, 100)] * 3)
    done = drain(fab)
    # one slot alternating: a,b,a,b,a,b
    assert done == {"a": 500, "b": 600}


def test_self_pull_rejected():
    fab = CopyFabric(2, 1e9)
    with pytest.raises(InvariantViolation):
        fab.submit(0, 0, "a", [(0, 10)])


def test_empty_job_completes_immediately():
    fab = CopyFabric(2, 1e9)
    jobs = fab.submit(5, 0, "a", [])
    assert [j.key for j in jobs] == ["a"] and jobs[0].done_at == 5


def test_bytes_conserved():
    fab = CopyFabric(3, 1e9, 2, tdm=True)
    fab.submit(0, 0, "a", [(1, 333), (2, 444), (1, 5)])
    drain(fab)
    assert fab.bytes_moved[0] == 782
