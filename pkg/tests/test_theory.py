import itertools
import random
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ign.theory import (
    FiniteIGN, fixed_point_search, format_report, idem_objective, is_fixed_point, line_space, min_idem_objective,
    off_manifold_mass, optimal_drift, pushforward, realizable, sampled_fixed_point_search, standard_instances,
    write_report,
)

U3 = (Fr(1, 3),) * 3


def _inst(n, f, p_z=None, p_x=None):
    u = tuple(Fr(1, n) for _ in range(n))
    return FiniteIGN(line_space(n), p_z or u, p_x or u, f)


@st.composite
def instances(draw, max_n=5):
    n = draw(st.integers(1, max_n))
    w_z = draw(st.lists(st.integers(1, 6), min_size=n, max_size=n))
    w_x = draw(st.lists(st.integers(0, 6), min_size=n, max_size=n).filter(lambda w: sum(w) > 0))
    f = draw(st.lists(st.integers(0, n - 1), min_size=n, max_size=n))
    p_z = tuple(Fr(w, sum(w_z)) for w in w_z)
    p_x = tuple(Fr(w, sum(w_x)) for w in w_x)
    return FiniteIGN(line_space(n), p_z, p_x, f)


# -- validation -------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(dist=((0, 1), (2, 0))),  # asymmetric
        dict(dist=((1, 1), (1, 0))),  # nonzero diagonal
        dict(dist=((0, -1), (-1, 0))),
        dict(p_z=(Fr(1, 2), Fr(1, 3))),  # does not sum to 1
        dict(p_x=(Fr(3, 2), Fr(-1, 2))),
        dict(f=(0, 2)),  # image outside the space
        dict(f=(0,)),  # not total
    ],
)
def test_instance_validation(kw):
    base = dict(dist=line_space(2), p_z=(Fr(1, 2),) * 2, p_x=(Fr(1, 2),) * 2, f=(0, 1))
    base.update(kw)
    with pytest.raises(ValueError):
        FiniteIGN(**base)


# -- pushforward and drift --------------------------------------------------


def test_pushforward_examples():
    m = _inst(3, (0, 1, 2), p_z=(Fr(1, 2), Fr(1, 4), Fr(1, 4)))
    assert pushforward(m) == m.p_z
    assert pushforward(m.with_map((1, 1, 1))) == (0, 1, 0)


def test_pushforward_matches_monte_carlo():
    rng = np.random.default_rng(0)
    f = tuple(int(v) for v in rng.integers(0, 4, 4))
    m = _inst(4, f)
    draws = np.asarray(f)[rng.integers(0, 4, 1_000_000)]
    est = np.bincount(draws, minlength=4) / draws.size
    assert np.abs(est - np.array([float(p) for p in pushforward(m)])).max() < 0.003


def test_optimal_drift_examples():
    assert optimal_drift(U3, U3, 1, 1) == (0, 0, 0)
    assert optimal_drift((1, 0), (0, 1), 1, 1) == (0, 1)
    assert optimal_drift((1, 0), (0, 1), 0, 1) == (0, 0)
    assert optimal_drift((Fr(1, 2), Fr(1, 2)), (Fr(1, 4), Fr(3, 4)), 2, 5) == (0, 5)  # tie at 0 gives zero drift
    with pytest.raises(ValueError):
        optimal_drift(U3, U3, 1, 0)


def test_idem_objective_examples():
    m = _inst(3, (0, 1, 2))
    assert idem_objective(m, (0, 0, 0)) == 0
    const = m.with_map((2, 2, 2))
    assert idem_objective(const, (0, 0, const.M)) == const.M


@settings(max_examples=200, deadline=None)
@given(instances(), st.sampled_from([Fr(0), Fr(1, 2), Fr(1), Fr(3, 2)]))
def test_objective_bounds_and_probability_reading(m, lam):
    delta = optimal_drift(m.p_x, pushforward(m), lam, m.M if m.M > 0 else 1)
    obj = idem_objective(m, delta)
    brute = sum(m.p_z[z] * delta[m.f[z]] for z in range(m.n))
    assert obj == brute
    M = max(delta) if max(delta) > 0 else None
    assert 0 <= obj <= max(m.M, 1)
    if M:
        assert obj / M == off_manifold_mass(m, delta)
    assert min_idem_objective(m, delta) <= obj


@settings(max_examples=100, deadline=None)
@given(instances(max_n=4), st.sampled_from([Fr(1, 2), Fr(1)]))
def test_matched_identity_is_a_fixed_point(m, lam):
    m = FiniteIGN(m.dist, m.p_z, m.p_z, tuple(range(m.n)))
    if m.n > 1:
        assert is_fixed_point(m, lam) == (True, 0)


# -- fixed-point search -----------------------------------------------------


def _brute_fixed_points(dist, p_z, p_x, lam):
    """Reference: minimize the objective over every map g under each f's own drift pattern."""
    n = len(dist)
    maps = list(itertools.product(range(n), repeat=n))
    out = []
    for f in maps:
        m = FiniteIGN(dist, p_z, p_x, f)
        delta = optimal_drift(p_x, pushforward(m), lam, m.M)
        best = min(idem_objective(m.with_map(g), delta) for g in maps)
        if idem_objective(m, delta) == best:
            out.append(f)
    return out


@pytest.mark.parametrize("lam", [Fr(1, 2), Fr(1), Fr(3, 2)])
def test_search_agrees_with_brute_force(lam):
    p_z = (Fr(1, 2), Fr(1, 4), Fr(1, 4))
    p_x = (Fr(1, 4), Fr(1, 4), Fr(1, 2))
    res = fixed_point_search(line_space(3), p_z, p_x, lam)
    assert res.maps_checked == 27
    assert [fp.f for fp in res.fixed_points] == _brute_fixed_points(line_space(3), p_z, p_x, lam)


@pytest.mark.parametrize("p_z", [U3, (Fr(1, 2), Fr(1, 4), Fr(1, 4)), (Fr(1, 6), Fr(2, 6), Fr(3, 6))])
def test_uniform_target_at_unit_weight(p_z):
    res = fixed_point_search(line_space(3), p_z, U3, 1)
    assert res.all_match
    # a fixed point exists exactly when the target is reachable from the source
    assert bool(res.fixed_points) == realizable(p_z, U3)


def test_all_small_instances_converge_to_target():
    for n in (2, 3, 4):
        for inst in standard_instances(n, 1):
            res = fixed_point_search(*inst)
            assert res.fixed_points and res.all_match, inst


def test_half_weight_reports_extra_fixed_points():
    res = fixed_point_search(line_space(3), U3, U3, Fr(1, 2))
    assert any(fp.matches_target for fp in res.fixed_points)
    assert any(not fp.matches_target for fp in res.fixed_points)
    text, ok = format_report([res])
    assert ok and "!= P_x" in text and "verdict: PASS" in text


def test_report_verdicts(tmp_path):
    at1 = fixed_point_search(line_space(3), U3, U3, 1)
    above = fixed_point_search(line_space(3), U3, U3, Fr(3, 2))
    text, ok = format_report([at1, above])
    assert ok and "verdict: INFO" in text and "precondition" in text and text.endswith("OVERALL: PASS\n")
    unreachable = fixed_point_search(line_space(3), (Fr(1, 2), Fr(1, 4), Fr(1, 4)), U3, 1)
    assert write_report([unreachable], tmp_path / "r.txt") is False
    assert "OVERALL: FAIL" in (tmp_path / "r.txt").read_text()


def test_large_spaces_need_sampling():
    n = 7
    u = tuple(Fr(1, n) for _ in range(n))
    with pytest.raises(ValueError, match="sampled_fixed_point_search"):
        fixed_point_search(line_space(n), u, u, 1)
    res = sampled_fixed_point_search(line_space(n), u, u, 1, samples=2000, seed=0)
    assert not res.exhaustive and res.all_match and res.maps_checked <= 2000


def test_search_is_deterministic_and_ordered():
    a = fixed_point_search(line_space(3), U3, U3, Fr(1, 2))
    b = fixed_point_search(line_space(3), U3, U3, Fr(1, 2))
    assert [fp.f for fp in a.fixed_points] == [fp.f for fp in b.fixed_points]
    assert [fp.f for fp in a.fixed_points] == sorted(fp.f for fp in a.fixed_points)
    r = random.Random(0)
    maps = [fp.f for fp in a.fixed_points]
    assert all(is_fixed_point(_inst(3, f), Fr(1, 2))[0] for f in r.sample(maps, min(5, len(maps))))
