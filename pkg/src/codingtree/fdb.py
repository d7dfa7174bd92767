"""Term tables for the multivariate Faà di Bruno expansion.

For g(z_0, ..., z_n) composed with the jet (v, ∂v, ..., ∂^n v) of a function
of x, the k-th x-derivative is a sum over index tuples (λ, s, l, K) of

    coefficient * (∂^λ g)(jet) * ∏_{j, q} (∂^{q + l_j} v)^{K[j][q]}

with coefficient = k! / ∏_{j,q} (K[j][q]! (l_j!)^{K[j][q]}).  A table lists
every admissible tuple exactly once.

Table order is fixed: by |λ|, then λ in lexicographic order, then s, then
the parts l, then the rows of K.  Sampled branch indices are reproducible
because of it.
"""

from __future__ import annotations

import csv
import io
import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

DEFAULT_CAP = 10**6


class FdbTableTooLarge(MemoryError):
    pass


@dataclass(frozen=True)
class FdbTerm:
    coefficient: Fraction
    lam: tuple[int, ...]
    k_matrix: tuple[tuple[int, ...], ...]
    parts: tuple[int, ...]
    s: int

    @property
    def weight(self) -> float:
        return float(self.coefficient)

    def derivative_factors(self) -> list[int]:
        """Orders q + l_j, one entry per unit of K[j][q], j outer and q inner."""
        out = []
        for j, row in enumerate(self.k_matrix):
            for q, mult in enumerate(row):
                out.extend([q + self.parts[j]] * mult)
        return out


def compositions(total: int, parts: int) -> list[tuple[int, ...]]:
    """Weak compositions of `total` into `parts` entries, lexicographic order."""
    if parts < 1:
        raise ValueError("parts must be >= 1")
    if parts == 1:
        return [(total,)]
    out = []
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            out.append((first,) + rest)
    return out


def _row_sizes(parts: tuple[int, ...], k: int):
    """Vectors r >= 1 with sum_j r_j * parts_j == k."""
    def go(j, remaining):
        if j == len(parts):
            if remaining == 0:
                yield ()
            return
        # leave room for the remaining parts, each at least once
        tail = sum(parts[j + 1:])
        r = 1
        while r * parts[j] + tail <= remaining:
            for rest in go(j + 1, remaining - r * parts[j]):
                yield (r,) + rest
            r += 1
    yield from go(0, k)


def _rows(sizes: tuple[int, ...], m: int):
    if not sizes:
        yield ()
        return
    for first in compositions(sizes[0], m):
        for rest in _rows(sizes[1:], m):
            yield (first,) + rest


def _coefficient(k: int, k_matrix, parts) -> Fraction:
    den = 1
    for row, l in zip(k_matrix, parts):
        lf = math.factorial(l)
        for mult in row:
            den *= math.factorial(mult) * lf**mult
    return Fraction(math.factorial(k), den)


_table_memo: dict[tuple[int, int], tuple[FdbTerm, ...]] = {}
_lock = threading.Lock()


def enumerate_fdb(m: int, k: int, cap: int = DEFAULT_CAP) -> tuple[FdbTerm, ...]:
    """All Faà di Bruno terms for m z-variables and derivative order k (memoized)."""
    if m < 1 or k < 1:
        raise ValueError("enumerate_fdb needs m >= 1 and k >= 1")
    hit = _table_memo.get((m, k))
    if hit is not None:
        return hit
    terms = []
    for s in range(1, k + 1):
        for parts in combinations(range(1, k + 1), s):
            if sum(parts) > k:
                continue
            for sizes in _row_sizes(parts, k):
                for k_matrix in _rows(sizes, m):
                    lam = tuple(sum(col) for col in zip(*k_matrix))
                    terms.append(
                        FdbTerm(_coefficient(k, k_matrix, parts), lam, k_matrix, parts, s)
                    )
                    if len(terms) > cap:
                        raise FdbTableTooLarge(
                            f"fdb table for m={m}, k={k} exceeds {cap} terms"
                        )
    terms.sort(key=lambda t: (sum(t.lam), t.lam, t.s, t.parts, t.k_matrix))
    table = tuple(terms)
    with _lock:
        return _table_memo.setdefault((m, k), table)


def dump_csv(m: int, k: int) -> str:
    """CSV rendering: coefficient as num/den, λ, K rows (';'-separated), l, s."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["coefficient", "lambda", "k_matrix", "parts", "s"])
    for t in enumerate_fdb(m, k):
        writer.writerow([
            f"{t.coefficient.numerator}/{t.coefficient.denominator}",
            " ".join(map(str, t.lam)),
            ";".join(" ".join(map(str, row)) for row in t.k_matrix),
            " ".join(map(str, t.parts)),
            t.s,
        ])
    return buf.getvalue()
