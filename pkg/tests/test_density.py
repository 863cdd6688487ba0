from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abeluniv.density import (DensitySet, NonMonotone, Reparametrization, a_family_params, affine,
                              check_disjoint_family, homographic, local_finiteness_witness, lower_interval,
                              make_A_families, make_Gamma_family, natural_density, preimage,
                              pullback_density_bound, uniform_density, upper_witness, verify_separation)

H = 10 ** 5


def test_natural_density_evens():
    E = DensitySet.from_integers(range(2, H + 1, 2), H)
    assert natural_density(E, "lower", H) == pytest.approx(0.5, abs=1e-4)
    assert natural_density(E, "upper", H) == pytest.approx(0.5, abs=1e-4)


def test_natural_density_squares():
    E = DensitySet.from_integers([k * k for k in range(1, 317)], H)
    assert natural_density(E, "upper", H) < 0.01


def test_natural_density_horizon_guard():
    with pytest.raises(ValueError):
        natural_density(DensitySet.from_integers([1, 2], 10), "lower", 100)


def test_A00_matches_declared():
    fams, bounds = make_A_families(3, H)
    d = natural_density(fams[(0, 0)], "lower", H)
    assert d >= float(bounds[(0, 0)]) - 0.02
    assert all(b > 0 for b in bounds.values())
    for k, E in fams.items():
        assert abs(natural_density(E, "lower", H) - float(bounds[k])) <= 0.02


def test_A_separation_and_disjointness():
    fams, _ = make_A_families(4, H)
    ok, info = verify_separation(fams, H)
    assert ok
    allj = np.concatenate([E.integers for E in fams.values()])
    assert allj.size == np.unique(allj).size


def test_separation_detects_violation():
    fams = {(0, 3): DensitySet.from_integers([10, 40], 50), (1, 3): DensitySet.from_integers([14], 50)}
    ok, _ = verify_separation(fams, 50)
    assert not ok


def test_uniform_density_full_interval():
    full = DensitySet.from_intervals([]).complement()
    for n in (2, 10, 1000):
        assert n * full.measure_from(1 - 1 / n) == pytest.approx(1.0)
    assert uniform_density(full, "lower", 1000) == pytest.approx(1.0)


def test_gamma_lower_witness():
    fams, info = make_Gamma_family("lower", 3, 20000)
    for k, G in fams.items():
        M = info["M"][k]
        assert uniform_density(G, "lower", 20000) >= 2 / (3 * M * M) - 0.02
        assert uniform_density(G, "lower", 20000) >= 2 / (3 * M * M)


def test_gamma_lower_interval_shape():
    a, b = lower_interval(5)
    c = 1 - Fraction(1, 5)
    assert a == c - (Fraction(1, 4) - Fraction(1, 5)) / 3
    assert b == c + (Fraction(1, 5) - Fraction(1, 6)) / 3
    assert b - a == Fraction(2, 3) / (5 * 5 - 1)


def test_gamma_lower_members_near_one():
    fams, _ = make_Gamma_family("lower", 3, 5000)
    for (l, n), G in fams.items():
        if n >= 2:
            assert all(a >= 1 - Fraction(1, n - 1) for a, _ in G.intervals)


def test_gamma_disjoint_exact():
    for mode in ("lower", "upper"):
        fams, info = make_Gamma_family(mode, 3, 2000)
        assert check_disjoint_family(fams)
        assert info["local_finiteness"][1] == []


def test_gamma_upper_reaches_one():
    fams, info = make_Gamma_family("upper", 3, 1000)
    for k, G in fams.items():
        i = info["owner"][k][0]
        N0, _ = info["blocks"][i]
        n = 2 ** N0
        assert float(n * G.measure(1 - Fraction(1, n))) > 0.9


def test_upper_witness_on_first_block():
    fams, info = make_Gamma_family("upper", 1, 1000)
    best, arg = upper_witness(fams[(0, 0)], 64)
    assert best > 0.9 and arg is not None


def test_complementarity():
    fams, _ = make_Gamma_family("lower", 2, 5000)
    G = fams[(0, 0)]
    assert uniform_density(G.complement(), "lower", 5000) + uniform_density(G, "upper", 5000) == \
        pytest.approx(1.0, abs=1e-6)


def test_tail_matches_explicit_sum():
    # analytic tail of the progression j = j0 + mG equals the summed interval lengths
    j0, G = 17, 8
    explicit = sum(float(Fraction(2, 3) / ((j0 + m * G) ** 2 - 1)) for m in range(200000))
    D = DensitySet.from_intervals([], 0, [(j0, G)])
    assert D.tail_measure() == pytest.approx(explicit, rel=1e-5)


@given(st.lists(st.tuples(st.fractions(0, Fraction(99, 100)), st.fractions(0, Fraction(1, 100))),
                max_size=8))
def test_measure_is_additive(raw):
    ivs, last = [], Fraction(-1)
    for a, w in sorted(raw):
        if a > last:
            ivs.append((a, min(a + w, Fraction(99, 100))))
            last = ivs[-1][1]
    D = DensitySet.from_intervals(ivs)
    total = sum(b - a for a, b in ivs)
    assert D.measure() == total
    t = Fraction(1, 2)
    assert D.measure(0, t) + D.measure(t, 1) == total
    assert D.measure_from(0.0) == pytest.approx(float(total))


@given(st.lists(st.integers(1, 500), max_size=60))
def test_json_roundtrip(ints):
    E = DensitySet.from_integers(ints, 500)
    assert list(DensitySet.from_json(E.to_json()).integers) == sorted(set(ints))
    G = DensitySet.from_intervals([lower_interval(j) for j in range(3, 30, 4)], 30, [(31, 4)])
    G2 = DensitySet.from_json(G.to_json())
    assert G2.intervals == G.intervals and G2.tail == G.tail


def test_contains():
    G = DensitySet.from_intervals([(Fraction(1, 4), Fraction(1, 2))])
    assert G.contains(Fraction(1, 3)) and not G.contains(Fraction(3, 4))
    assert G.complement().contains(Fraction(3, 4))


def test_invalid_sets():
    with pytest.raises(ValueError):
        DensitySet.from_intervals([(0.1, 0.3), (0.2, 0.4)])
    with pytest.raises(ValueError):
        DensitySet.from_intervals([(0.5, 1.0)])


# -- reparametrisations ------------------------------------------------------------------------------

@pytest.mark.parametrize("a", [1.0, 0.5, 0.1])
def test_affine_pullback(a):
    fams, _ = make_Gamma_family("lower", 2, 5000)
    G = fams[(0, 0)]
    meas, bound = pullback_density_bound(G, affine(a), 5000)
    assert meas >= bound - 0.03


def test_affine_identity_is_exact():
    fams, _ = make_Gamma_family("lower", 2, 3000)
    G = fams[(0, 0)]
    P = preimage(G, affine(1.0))
    assert P.intervals == G.intervals


def test_affine_equality():
    # c = C = a, so the bound is the measured density of Gamma itself; the preimage density agrees
    fams, _ = make_Gamma_family("lower", 2, 5000)
    G = fams[(0, 0)]
    meas, bound = pullback_density_bound(G, affine(0.5), 5000)
    assert abs(meas - uniform_density(G, "lower", 5000)) <= 0.03


def test_homographic_pullback():
    fams, _ = make_Gamma_family("lower", 2, 5000)
    rep = homographic(0.5)
    assert rep.check_monotone()
    for x in (0.0, 0.3, 0.9, 0.999):
        assert rep.inv(rep(x)) == pytest.approx(x, abs=1e-12)
    meas, bound = pullback_density_bound(fams[(0, 0)], rep, 5000)
    assert meas >= bound - 0.03


def test_non_monotone_rejected():
    rep = Reparametrization(1.0, lambda a, r: 0.5 + 0.4 * np.sin(6 * r), 0.1, 1.0)
    with pytest.raises(NonMonotone):
        rep.check_monotone()
