"""Accessibility rank condition and observability separation for
input-affine systems ``z' = g0(z) + sum_i w_i g_i(z)``, ``y = h(z)``.

Brackets and observables are built from nested dual-number derivatives, so
every value is exact up to floating-point rounding. Both checks are sampled
certificates: a full rank (or a separating observable) is verified at the
given points, nothing is proved for the whole domain.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics.calculus import lie_bracket, lie_derivative
from .numerics.dual import real
from .report import AnalysisReport

__all__ = [
    "BracketTerm",
    "ObservableFunctional",
    "generate_brackets",
    "parse_bracket",
    "accessibility_rank",
    "separation_test",
    "enumerate_observables",
    "TAU_RANK",
    "TAU_SEP",
]

TAU_RANK = 1e-8
TAU_SEP = 1e-9


@dataclass(frozen=True)
class BracketTerm:
    """An iterated bracket over the generators ``g0 .. gm``.

    A leaf has ``index`` set; an inner node is ``[left, right]``. ``depth``
    counts bracket operations, so generators have depth 0 and ``[g0,g1]``
    has depth 1.
    """

    index: int | None = None
    left: "BracketTerm | None" = None
    right: "BracketTerm | None" = None

    @classmethod
    def gen(cls, i: int) -> "BracketTerm":
        return cls(index=i)

    @classmethod
    def bracket(cls, left: "BracketTerm", right: "BracketTerm") -> "BracketTerm":
        return cls(left=left, right=right)

    @property
    def is_leaf(self) -> bool:
        return self.index is not None

    @property
    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth, self.right.depth)

    def __str__(self) -> str:
        if self.is_leaf:
            return f"g{self.index}"
        return f"[{self.left},{self.right}]"

    def field(self, generators: Sequence):
        if self.is_leaf:
            return generators[self.index]
        f = self.left.field(generators)
        g = self.right.field(generators)
        return lambda z: lie_bracket(f, g, z)

    def evaluate(self, generators: Sequence, z) -> np.ndarray:
        return np.asarray(self.field(generators)(np.asarray(z, dtype=float)), dtype=float)


def parse_bracket(text: str) -> BracketTerm:
    """Parse the textual notation, e.g. ``"[g1,[g0,g1]]"``."""
    s = text.replace(" ", "")
    pos = 0

    def parse():
        nonlocal pos
        if s.startswith("g", pos):
            j = pos + 1
            while j < len(s) and s[j].isdigit():
                j += 1
            if j == pos + 1:
                raise ValueError(f"bad generator in {text!r}")
            term = BracketTerm.gen(int(s[pos + 1:j]))
            pos = j
            return term
        if s.startswith("[", pos):
            pos += 1
            a = parse()
            if not s.startswith(",", pos):
                raise ValueError(f"expected ',' at {pos} in {text!r}")
            pos += 1
            b = parse()
            if not s.startswith("]", pos):
                raise ValueError(f"expected ']' at {pos} in {text!r}")
            pos += 1
            return BracketTerm.bracket(a, b)
        raise ValueError(f"cannot parse {text!r} at {pos}")

    term = parse()
    if pos != len(s):
        raise ValueError(f"trailing characters in {text!r}")
    return term


def generate_brackets(n_generators: int, max_depth: int) -> list[BracketTerm]:
    """Breadth-first iterated brackets ``[g, f]`` with ``g`` a generator and
    ``f`` from the previous level; trivially zero ``[gi, gi]`` are skipped."""
    level = [BracketTerm.gen(i) for i in range(n_generators)]
    out = list(level)
    for _ in range(max_depth):
        nxt = []
        for f in level:
            for i in range(n_generators):
                if f.is_leaf and f.index == i:
                    continue
                nxt.append(BracketTerm.bracket(BracketTerm.gen(i), f))
        out.extend(nxt)
        level = nxt
    return out


def _ranks(mats, tau):
    ranks, svals = [], []
    for M in mats:
        s = np.linalg.svd(M, compute_uv=False)
        ranks.append(int(np.sum(s > tau * s[0])) if s[0] > 0 else 0)
        svals.append(s)
    return ranks, svals


def _select_witness(values, n, terms, tau):
    """First ``n`` terms (breadth-first order) whose determinant keeps one
    sign and stays well away from zero at every sample point.

    A sign change over a connected sample region means the determinant
    vanishes somewhere, so such sets are not uniform certificates.
    """
    nonzero = [k for k in range(len(terms)) if np.all(np.linalg.norm(values[:, :, k], axis=1) > 0)]
    combos = itertools.combinations(nonzero, n)
    for count, combo in enumerate(combos):
        if count > 20000:
            break
        W = values[:, :, list(combo)]
        dets = np.linalg.det(W)
        scale = np.prod(np.linalg.norm(W, axis=1), axis=1)
        if np.all(np.abs(dets) > tau * scale) and (np.all(dets > 0) or np.all(dets < 0)):
            return list(combo), dets
    return None, None


def accessibility_rank(
    sys,
    points: Sequence,
    max_depth: int = 2,
    witness: Sequence[str] | None = None,
    tau_rank: float = TAU_RANK,
) -> AnalysisReport:
    """Rank of the accessibility distribution at each sample point.

    All brackets up to ``max_depth`` bracket operations are evaluated; the
    rank at a point is the number of singular values above
    ``tau_rank * sigma_max``. A witness set of ``n`` brackets is chosen
    automatically, or the given ``witness`` notations are certified instead.
    """
    if sys.affine_parts is None:
        raise ValueError(f"{sys.name} has no input-affine decomposition")
    gens = sys.affine_parts
    points = np.atleast_2d(np.asarray(points, dtype=float))
    terms = generate_brackets(len(gens), max_depth)
    fields = [t.field(gens) for t in terms]
    values = np.array([[np.asarray(f(z), dtype=float) for f in fields] for z in points])
    values = values.transpose(0, 2, 1)  # point, coordinate, term
    ranks, svals = _ranks(values, tau_rank)
    n = sys.n
    full = all(r == n for r in ranks)

    if witness is not None:
        wterms = [parse_bracket(w) for w in witness]
        W = np.array([[wt.evaluate(gens, z) for wt in wterms] for z in points]).transpose(0, 2, 1)
        dets = np.linalg.det(W) if len(wterms) == n else None
        chosen = [str(w) for w in wterms]
        scale = np.prod(np.linalg.norm(W, axis=1), axis=1)
        w_ok = dets is not None and bool(np.all(np.abs(dets) > tau_rank * scale))
    else:
        idx, dets = _select_witness(values, n, terms, tau_rank)
        chosen = [str(terms[k]) for k in idx] if idx is not None else []
        w_ok = idx is not None

    details = {
        "points": points,
        "ranks": ranks,
        "singular_values": svals,
        "terms": [str(t) for t in terms],
        "witness": chosen,
    }
    if dets is not None:
        details["witness_determinants"] = dets
    return AnalysisReport(
        kind="accessibility",
        passed=full and w_ok,
        metrics={
            "min_rank": min(ranks),
            "n": n,
            "min_relative_sigma": min(float(s[min(n, len(s)) - 1] / s[0]) if s[0] > 0 else 0.0 for s in svals),
            "witness_certified": w_ok,
        },
        tolerances={"tau_rank": tau_rank},
        details=details,
        notes=[f"sampled certificate over {len(points)} points, brackets up to depth {max_depth}"],
    )


# --------------------------------------------------------------------------- #
# observability


@dataclass(frozen=True)
class ObservableFunctional:
    """``L_{g_i1} ... L_{g_ik} h_j``; the last index acts first."""

    sequence: tuple[int, ...]
    output: int = 0

    @property
    def order(self) -> int:
        return len(self.sequence)

    def function(self, sys):
        h = sys.h
        if sys.q > 1:
            j = self.output
            H = lambda z: h(z)[j]  # noqa: E731
        else:
            H = h
        for i in reversed(self.sequence):
            H = lie_derivative(H, sys.affine_parts[i])
        return H

    def evaluate(self, sys, z) -> float:
        return float(real(self.function(sys)(np.asarray(z, dtype=float))))

    def __str__(self) -> str:
        ops = "".join(f"L_g{i} " for i in self.sequence)
        out = "h" if self.output == 0 else f"h{self.output + 1}"
        return f"{ops}{out}"


def enumerate_observables(m_plus_1: int, q: int, max_order: int):
    for k in range(max_order + 1):
        for seq in itertools.product(range(m_plus_1), repeat=k):
            for j in range(q):
                yield ObservableFunctional(tuple(seq), j)


@dataclass
class SeparationResult:
    separated: bool
    witness: ObservableFunctional | None
    values: tuple[float, float] | None
    max_order: int
    tested: int

    def __bool__(self) -> bool:
        return self.separated

    def as_dict(self) -> dict:
        return {
            "separated": self.separated,
            "witness": str(self.witness) if self.witness else None,
            "order": self.witness.order if self.witness else None,
            "values": self.values,
            "search_bound": self.max_order,
            "tested": self.tested,
        }


def separation_test(sys, z1, z2, max_order: int = 2, tau_sep: float = TAU_SEP) -> SeparationResult:
    """Breadth-first search for an elementary observable separating two states.

    "Not separated" only means no witness up to ``max_order`` was found.
    """
    if sys.affine_parts is None:
        raise ValueError(f"{sys.name} has no input-affine decomposition")
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    tested = 0
    for obs in enumerate_observables(len(sys.affine_parts), sys.q, max_order):
        tested += 1
        H = obs.function(sys)
        a, b = float(real(H(z1))), float(real(H(z2)))
        if abs(a - b) > tau_sep * (1 + abs(a)):
            return SeparationResult(True, obs, (a, b), max_order, tested)
    return SeparationResult(False, None, None, max_order, tested)
