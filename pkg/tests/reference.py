"""Hand-rolled reference implementations used as oracles in tests.

Each function re-derives its quantity from the documented rule, written
independently of the library code paths it checks (different structure,
different formulas where possible).
"""

from __future__ import annotations

import itertools
from typing import Hashable, Sequence


def relaxed_reference(pred: str, gold: str, epsilon: float = 0.05, case_fold: bool = True) -> bool:
    """Brute-force restatement of the relaxed answer-match rule."""

    def norm(t: str) -> str:
        t = t.strip()
        if case_fold:
            t = t.casefold()
        while t.endswith("."):
            t = t[:-1].rstrip()
        if t[:1] == "$":
            t = t[1:].strip()
        while t.endswith("%"):
            t = t[:-1].rstrip()
        return t

    def elements(t: str) -> tuple[list[str], bool]:
        if len(t) >= 2 and t.startswith("[") and t.endswith("]"):
            return [x.strip() for x in t[1:-1].split(",")], True
        return [t], False

    def as_number(t: str) -> float | None:
        try:
            value = float(t)
        except ValueError:
            return None
        if value != value or value in (float("inf"), float("-inf")):
            return None
        return value

    p, g = norm(pred), norm(gold)
    p_items, p_is_list = elements(p)
    g_items, g_is_list = elements(g)
    if p_is_list or g_is_list:
        if len(p_items) != len(g_items):
            return False
        pairs = list(zip(p_items, g_items))
    else:
        pairs = [(p, g)]
    for pe, ge in pairs:
        pn, gn = as_number(pe), as_number(ge)
        if pn is not None and gn is not None:
            if gn == 0:
                if pn != 0:
                    return False
            elif abs(pn - gn) > epsilon * abs(gn):
                return False
        elif pe != ge:
            return False
    return True


def kappa_reference(a: Sequence[Hashable], b: Sequence[Hashable]) -> tuple[float, float, float]:
    """Direct-formula kappa: explicit marginals, no shared helpers."""
    n = len(a)
    agree = 0
    for i in range(n):
        if a[i] == b[i]:
            agree += 1
    p_o = agree / n
    p_e = 0.0
    for cat in set(a) | set(b):
        count_a = sum(1 for x in a if x == cat)
        count_b = sum(1 for y in b if y == cat)
        p_e += (count_a / n) * (count_b / n)
    return p_o, p_e, (p_o - p_e) / (1.0 - p_e)


def mw_u_reference(x: Sequence[float], y: Sequence[float]) -> float:
    """U by literal pair counting with half-credit ties."""
    u = 0.0
    for xv in x:
        for yv in y:
            if xv > yv:
                u += 1.0
            elif xv == yv:
                u += 0.5
    return u


def mw_exact_p_reference(x: Sequence[float], y: Sequence[float]) -> float:
    """Two-sided exact p by enumerating every pooled assignment.

    Each assignment's U is pair-counted from scratch. Half-integer U values
    are exact in binary floating point, so the comparisons are exact.
    """
    pooled = list(x) + list(y)
    n1 = len(x)
    mu = n1 * (len(pooled) - n1) / 2.0
    dev_obs = abs(mw_u_reference(x, y) - mu)
    extreme = 0
    total = 0
    for combo in itertools.combinations(range(len(pooled)), n1):
        chosen = set(combo)
        xs = [pooled[i] for i in combo]
        ys = [pooled[i] for i in range(len(pooled)) if i not in chosen]
        if abs(mw_u_reference(xs, ys) - mu) >= dev_obs:
            extreme += 1
        total += 1
    return extreme / total


def mask_reference(n_visual: int, n_prefix: int, n_suffix: int) -> list[list[bool]]:
    """Attention mask straight from the allow(i, j) rule."""
    block = n_visual + n_prefix
    side = n_visual + n_prefix + n_suffix
    return [
        [
            (i < block and j < block) or (i >= block and (j < block or (block <= j <= i)))
            for j in range(side)
        ]
        for i in range(side)
    ]
