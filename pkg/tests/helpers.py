"""Independent oracles shared by the test modules."""
import itertools

import numpy as np


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def brute_emd(s1, s2, kind="squared_halved") -> float:
    n = len(s1)
    d = np.linalg.norm(s1[:, None, :] - s2[None, :, :], axis=-1)
    c = 0.5 * d ** 2 if kind == "squared_halved" else d
    best = np.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, c[np.arange(n), list(perm)].sum())
    return float(best)


def brute_chamfer(s1, s2) -> float:
    total = 0.0
    for x in s1:
        total += min(float(np.sum((x - y) ** 2)) for y in s2)
    for y in s2:
        total += min(float(np.sum((x - y) ** 2)) for x in s1)
    return total


VERDICTS: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    """Record and print one acceptance line, then fail the test if ``ok`` is false."""
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line
