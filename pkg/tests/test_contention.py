import numpy as np
import pytest

from dwdpsim.contention import (contention_mc, contention_pmf, ideal_pull_time, mc_tolerance,
                                serialized_latency_bound)

# percentages as printed, kept as text so the comparison honours the printed precision
TABLE = {
    3: "50.00 50.00",
    4: "44.44 44.44 11.11",
    6: "40.96 40.96 15.36 2.56 0.16",
    8: "39.66 39.66 16.52 3.67 0.46 0.03 0.00085",
    12: "38.55 38.55 17.35 4.63 0.81 0.097 0.0081 0.00046 0.000017 3.86e-7 3.86e-9",
    16: "38.06 38.06 17.67 5.05 0.99 0.14 0.015 0.0012 0.000077 3.69e-6 1.32e-7 3.42e-9 "
        "6.11e-11 6.71e-13 3.43e-15",
}


def matches_printed(value, text):
    if "e" in text:
        return float(f"{value:.2e}") == float(text)
    decimals = len(text.split(".")[1])
    return round(value, decimals) == float(text)


@pytest.mark.parametrize("n", sorted(TABLE))
def test_closed_form_matches_table(n):
    pmf = contention_pmf(n)
    assert sorted(pmf.probs) == list(range(1, n))
    for c, text in enumerate(TABLE[n].split(), start=1):
        assert matches_printed(100 * pmf.probs[c], text), (n, c, 100 * pmf.probs[c], text)


def test_ideal_pull_time():
    assert ideal_pull_time(300e-6, 4) == pytest.approx(100e-6)
    assert ideal_pull_time(300e-6, 2) == pytest.approx(300e-6)
    assert ideal_pull_time(429e-6, 4) == pytest.approx(143e-6)
    with pytest.raises(ValueError):
        ideal_pull_time(1.0, 1)


def test_degenerate_two_ranks():
    pmf = contention_pmf(2)
    assert pmf.degenerate and pmf.probs == {1: 1.0}


@pytest.mark.parametrize("n", [3, 4, 5, 8, 16, 33, 64])
def test_mean_and_symmetry(n):
    pmf = contention_pmf(n)
    assert pmf.mean() == pytest.approx(1 + (n - 2) / (n - 1), rel=1e-12)
    assert pmf.probs[1] == pytest.approx(pmf.probs[2], rel=1e-12)
    assert sum(pmf.probs.values()) == pytest.approx(1.0, abs=1e-12)


def test_tail_grows_with_group_size():
    tails = [contention_pmf(n).tail(3) for n in range(3, 40)]
    assert all(b > a for a, b in zip(tails, tails[1:]))


def test_mc_single_round_point_mass():
    pmf = contention_mc(3, 1, seed=5)
    assert sorted(v for v in pmf.probs.values() if v) == [1.0]


def test_mc_n4_seed7_within_tolerance():
    exact = contention_pmf(4)
    mc = contention_mc(4, 1_000_000, seed=7)
    for c, p in exact.probs.items():
        assert abs(mc.probs.get(c, 0.0) - p) <= mc_tolerance(p, 1_000_000)


def test_mc_deterministic():
    a = contention_mc(6, 200_000, seed=11)
    b = contention_mc(6, 200_000, seed=11)
    assert a.probs == b.probs


def test_mc_mean_matches():
    mc = contention_mc(9, 400_000, seed=2)
    exact = 1 + 7 / 8
    assert abs(mc.mean() - exact) < 4 * np.sqrt(contention_pmf(9).mean() / 400_000)


def test_serialized_bound():
    pmf = contention_pmf(4)
    assert serialized_latency_bound(pmf, 1.0) == pytest.approx(pmf.mean())
