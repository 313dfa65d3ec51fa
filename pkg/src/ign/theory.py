"""Finite-space check of the convergence result.

On a space of N points every map f: Y -> Y is a table, so we can enumerate them
all. For a map f with pushforward P_f, the optimal drift pattern is

    delta*(y) = M * 1{P_x(y) < lambda_t * P_f(y)}

(strict inequality; ties give zero drift), and the idempotence objective of a map
g against that pattern is E_z[delta*(g(z))].

A map f is a *fixed point* when it minimizes the idempotence objective under its
own drift pattern: objective(f, delta*_f) == min_g objective(g, delta*_f). The
minimum separates per z, so it equals sum_z P_z(z) * min_y delta*_f(y).

At lambda_t = 1 every fixed point should have P_f == P_x. All arithmetic uses
``fractions.Fraction`` so this is checked exactly.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

MAX_EXHAUSTIVE_N = 6

Dist = tuple[Fraction, ...]


def _frac_tuple(p) -> Dist:
    return tuple(Fraction(v) for v in p)


@dataclass(frozen=True)
class FiniteIGN:
    """A finite space Y = {0..N-1} with distances, source/target distributions and a map."""

    dist: tuple[tuple[Fraction, ...], ...]  # N x N, symmetric, zero diagonal
    p_z: Dist
    p_x: Dist
    f: tuple[int, ...]  # f[i] is the image of point i

    def __post_init__(self):
        n = len(self.dist)
        object.__setattr__(self, "dist", tuple(_frac_tuple(row) for row in self.dist))
        object.__setattr__(self, "p_z", _frac_tuple(self.p_z))
        object.__setattr__(self, "p_x", _frac_tuple(self.p_x))
        object.__setattr__(self, "f", tuple(int(v) for v in self.f))
        if n == 0:
            raise ValueError("space must have at least one point")
        for i, row in enumerate(self.dist):
            if len(row) != n:
                raise ValueError(f"distance row {i} has length {len(row)}, expected {n}")
            if row[i] != 0:
                raise ValueError(f"distance diagonal must be zero (row {i})")
            for j, d in enumerate(row):
                if d < 0:
                    raise ValueError(f"negative distance at ({i}, {j})")
                if d != self.dist[j][i]:
                    raise ValueError(f"distance matrix not symmetric at ({i}, {j})")
        for name in ("p_z", "p_x"):
            p = getattr(self, name)
            if len(p) != n:
                raise ValueError(f"{name} has {len(p)} entries, expected {n}")
            if any(v < 0 for v in p) or sum(p) != 1:
                raise ValueError(f"{name} must be nonnegative and sum to 1, got {p}")
        if len(self.f) != n or any(not 0 <= v < n for v in self.f):
            raise ValueError(f"map must send each of the {n} points into the space, got {self.f}")

    @property
    def n(self) -> int:
        return len(self.dist)

    @property
    def M(self) -> Fraction:
        return max(max(row) for row in self.dist)

    def with_map(self, f: Sequence[int]) -> "FiniteIGN":
        return FiniteIGN(self.dist, self.p_z, self.p_x, tuple(f))


def line_space(n: int) -> tuple[tuple[Fraction, ...], ...]:
    """|i - j| distances between n points on a line."""
    return tuple(tuple(Fraction(abs(i - j)) for j in range(n)) for i in range(n))


def pushforward(m: FiniteIGN) -> Dist:
    """P_f(y) = sum of P_z(z) over z with f(z) = y."""
    out = [Fraction(0)] * m.n
    for z, y in enumerate(m.f):
        out[y] += m.p_z[z]
    return tuple(out)


def optimal_drift(p_x: Sequence, p_theta: Sequence, lambda_t, M) -> Dist:
    """delta*(y) = M * 1{P_x(y) < lambda_t * P_theta(y)}, strict."""
    lam, M = Fraction(lambda_t), Fraction(M)
    if M <= 0:
        raise ValueError(f"M must be positive, got {M}")
    return tuple(M if Fraction(px) < lam * Fraction(pt) else Fraction(0) for px, pt in zip(p_x, p_theta))


def idem_objective(m: FiniteIGN, delta_star: Sequence) -> Fraction:
    """E_z[delta*(f(z))]."""
    return sum((m.p_z[z] * Fraction(delta_star[y]) for z, y in enumerate(m.f)), Fraction(0))


def off_manifold_mass(m: FiniteIGN, delta_star: Sequence) -> Fraction:
    """Probability that f(z) lands where the drift pattern is nonzero."""
    return sum((m.p_z[z] for z, y in enumerate(m.f) if delta_star[y] != 0), Fraction(0))


def min_idem_objective(m: FiniteIGN, delta_star: Sequence) -> Fraction:
    """min over all maps g of E_z[delta*(g(z))]; each z independently picks the smallest drift."""
    lo = min(Fraction(d) for d in delta_star)
    return sum((pz * lo for pz in m.p_z), Fraction(0))


@dataclass(frozen=True)
class FixedPoint:
    f: tuple[int, ...]
    pushforward: Dist
    objective: Fraction
    matches_target: bool


@dataclass
class SearchResult:
    lambda_t: Fraction
    p_z: Dist
    p_x: Dist
    maps_checked: int
    fixed_points: list[FixedPoint] = field(default_factory=list)
    exhaustive: bool = True

    @property
    def all_match(self) -> bool:
        return all(fp.matches_target for fp in self.fixed_points)

    @property
    def distinct_pushforwards(self) -> list[Dist]:
        return sorted({fp.pushforward for fp in self.fixed_points})


def is_fixed_point(m: FiniteIGN, lambda_t) -> tuple[bool, Fraction]:
    delta = optimal_drift(m.p_x, pushforward(m), lambda_t, m.M)
    obj = idem_objective(m, delta)
    return obj == min_idem_objective(m, delta), obj


def _check_maps(base: FiniteIGN, lambda_t: Fraction, maps) -> tuple[int, list[FixedPoint]]:
    # inlined version of is_fixed_point; skips re-validating the instance per map
    found, count = [], 0
    n, M, p_z, p_x = base.n, base.M, base.p_z, base.p_x
    zero = Fraction(0)
    for f in maps:
        count += 1
        pf = [zero] * n
        for z, y in enumerate(f):
            pf[y] += p_z[z]
        delta = [M if p_x[y] < lambda_t * pf[y] else zero for y in range(n)]
        obj = sum((p_z[z] * delta[y] for z, y in enumerate(f)), zero)
        if obj == min(delta):  # min over maps is sum_z P_z * min(delta) = min(delta)
            pf = tuple(pf)
            found.append(FixedPoint(tuple(f), pf, obj, pf == p_x))
    return count, found


def fixed_point_search(dist, p_z, p_x, lambda_t) -> SearchResult:
    """All fixed points among the N^N tabular maps, in lexicographic map order."""
    n = len(dist)
    if n > MAX_EXHAUSTIVE_N:
        raise ValueError(
            f"exhaustive search over {n}^{n} maps is too large (N <= {MAX_EXHAUSTIVE_N}); "
            "use sampled_fixed_point_search instead"
        )
    lam = Fraction(lambda_t)
    base = FiniteIGN(dist, p_z, p_x, tuple(range(n)))
    count, found = _check_maps(base, lam, itertools.product(range(n), repeat=n))
    return SearchResult(lam, base.p_z, base.p_x, count, found, exhaustive=True)


def sampled_fixed_point_search(dist, p_z, p_x, lambda_t, samples: int = 100_000, seed: int = 0) -> SearchResult:
    """Like :func:`fixed_point_search` but over ``samples`` uniformly drawn maps (duplicates collapsed)."""
    n = len(dist)
    lam = Fraction(lambda_t)
    base = FiniteIGN(dist, p_z, p_x, tuple(range(n)))
    rng = random.Random(seed)
    maps = sorted({tuple(rng.randrange(n) for _ in range(n)) for _ in range(samples)})
    count, found = _check_maps(base, lam, maps)
    return SearchResult(lam, base.p_z, base.p_x, count, found, exhaustive=False)


def realizable(p_z: Sequence, p_x: Sequence) -> bool:
    """Can some tabular map push P_z forward onto P_x? (Exhaustive; small N only.)"""
    n = len(p_z)
    pz, px = _frac_tuple(p_z), _frac_tuple(p_x)
    dist = line_space(n)
    for f in itertools.product(range(n), repeat=n):
        if pushforward(FiniteIGN(dist, pz, px, f)) == px:
            return True
    return False


def _fmt(p: Sequence[Fraction]) -> str:
    return "(" + ", ".join(str(v) for v in p) + ")"


def format_report(results: Sequence[SearchResult]) -> tuple[str, bool]:
    """Human-readable report and overall verdict.

    At lambda_t = 1 an instance passes when it has at least one fixed point and every
    fixed point's pushforward equals P_x. For lambda_t < 1 only existence is claimed:
    it passes when some fixed point reproduces P_x (others are listed). Instances with
    lambda_t > 1 fall outside the lambda_t <= 1 precondition of the convergence result
    and are reported as informational only.
    """
    lines, ok = [], True
    for i, r in enumerate(results):
        informational = r.lambda_t > 1
        lines.append(f"instance {i}: lambda_t={r.lambda_t} P_z={_fmt(r.p_z)} P_x={_fmt(r.p_x)}")
        lines.append(f"  maps checked: {r.maps_checked} ({'exhaustive' if r.exhaustive else 'sampled'})")
        lines.append(f"  fixed points: {len(r.fixed_points)}")
        for fp in r.fixed_points:
            lines.append(
                f"    f={fp.f} P_theta={_fmt(fp.pushforward)} objective={fp.objective} "
                f"{'== P_x' if fp.matches_target else '!= P_x'}"
            )
        if r.lambda_t == 1:
            # uniqueness: every fixed point reproduces the target
            passed = bool(r.fixed_points) and r.all_match
        else:
            # existence: some fixed point reproduces the target
            passed = any(fp.matches_target for fp in r.fixed_points)
        if informational:
            lines.append(
                "  NOTE: lambda_t > 1 is outside the lambda_t <= 1 precondition of the convergence result; "
                f"informational only ({'all fixed points match P_x' if r.fixed_points and r.all_match else 'some fixed points differ from P_x'})"
            )
            verdict = "INFO"
        else:
            verdict = "PASS" if passed else "FAIL"
            ok &= passed
        lines.append(f"  verdict: {verdict}")
    lines.append(f"OVERALL: {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n", ok


def write_report(results: Sequence[SearchResult], path: str | Path) -> bool:
    text, ok = format_report(results)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return ok


def standard_instances(n: int, lambda_t) -> list[tuple]:
    """Realizable, full-support targets on n points: every distinct permutation of
    a few source distributions (uniform, and distinct rational masses)."""
    uniform = tuple(Fraction(1, n) for _ in range(n))
    total = n * (n + 1) // 2
    ramp = tuple(Fraction(i + 1, total) for i in range(n))
    out = []
    for p_z in (uniform, ramp):
        for p_x in sorted(set(itertools.permutations(p_z))):
            out.append((line_space(n), p_z, p_x, Fraction(lambda_t)))
    return out
