"""Word growth of the sol lattice and its abelian control.

Elements of the semidirect product are integer triples (m, n, l) with

    (v, l) * (v', l') = (v + A^l v', l + l'),

descended from the sol group law; exact integer arithmetic throughout.
Ball counts come from breadth-first search over the standard six-element
generating set {(+-e1, 0), (+-e2, 0), ((0,0), +-1)}; the abelian control
drops the vertical generators and freezes l = 0.
"""

from __future__ import annotations

import numpy as np

from .errors import BudgetExceededError
from .geometry import int_mat_pow, int_mat_vec

Element = tuple[int, int, int]

IDENTITY: Element = (0, 0, 0)

_INT64_GUARD = 2 ** 62


def multiply(a: Element, b: Element, monodromy) -> Element:
    """Group product; exact, with an int64-range guard on the result."""
    al = int_mat_pow(tuple(int(v) for v in np.asarray(monodromy).ravel()), a[2])
    w = int_mat_vec(al, (b[0], b[1]))
    out = (a[0] + w[0], a[1] + w[1], a[2] + b[2])
    if max(abs(out[0]), abs(out[1])) >= _INT64_GUARD:
        raise OverflowError("group element left the guarded integer range")
    return out


def inverse(a: Element, monodromy) -> Element:
    al = int_mat_pow(tuple(int(v) for v in np.asarray(monodromy).ravel()), -a[2])
    w = int_mat_vec(al, (a[0], a[1]))
    return (-w[0], -w[1], -a[2])


def generators(include_vertical: bool = True) -> list[Element]:
    gens = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0)]
    if include_vertical:
        gens += [(0, 0, 1), (0, 0, -1)]
    return gens


def ball_counts(monodromy, n_max: int, *, include_vertical: bool = True,
                max_elements: int = 20_000_000) -> list[int]:
    """b_0..b_{n_max}: number of distinct elements of word length <= n.

    Breadth-first frontier expansion with exact set membership; the counts
    are independent of exploration order.  ``include_vertical=False`` gives
    the abelian plane control.
    """
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    # the exponential ball sizes make n > 16 a memory hazard; the abelian
    # control grows quadratically and may run longer
    cap = 16 if include_vertical else 64
    if n_max > cap:
        raise BudgetExceededError(f"ball counts are budgeted up to n_max = {cap}")
    a = tuple(int(v) for v in np.asarray(monodromy).ravel())
    gens = generators(include_vertical)
    seen = {IDENTITY}
    frontier = [IDENTITY]
    counts = [1]
    for _ in range(n_max):
        new_frontier = []
        for g in frontier:
            for s in gens:
                h = multiply(g, s, a)
                if h not in seen:
                    seen.add(h)
                    new_frontier.append(h)
        if len(seen) > max_elements:
            raise BudgetExceededError(
                f"word ball exceeds the {max_elements}-element budget")
        frontier = new_frontier
        counts.append(len(seen))
    return counts
