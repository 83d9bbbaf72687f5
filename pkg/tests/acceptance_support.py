"""Bookkeeping for the acceptance suite: each criterion collects named checks
and reports one line."""

from __future__ import annotations

import contextlib

TITLES = {
    1: "steady-state closed forms",
    2: "accessibility certificates",
    3: "observability witnesses",
    4: "equivariance residuals",
    5: "interlacing",
    6: "invariance joint check",
    7: "FCD step battery",
    8: "global asymptotic stability",
    9: "internal model transforms",
    10: "delay oscillations",
    11: "steering invariance",
    12: "numerics hygiene",
}

RESULTS: dict[int, tuple[bool, str]] = {}


class Checks:
    def __init__(self):
        self.items: list[tuple[str, bool, str]] = []

    def add(self, name: str, ok: bool, value=None, bound=None, rel: str = "<="):
        text = name if value is None else f"{name} {_fmt(value)}"
        if bound is not None:
            text += f" {rel} {_fmt(bound)}"
        self.items.append((name, bool(ok), text))
        return ok

    @property
    def ok(self) -> bool:
        return bool(self.items) and all(ok for _, ok, _ in self.items)

    def failures(self) -> list[str]:
        return [t for _, ok, t in self.items if not ok]

    def summary(self) -> str:
        bad = self.failures()
        if bad:
            return "; ".join(bad[:4]) + (f" (+{len(bad) - 4} more)" if len(bad) > 4 else "")
        return "; ".join(t for _, _, t in self.items[:4]) + (
            f" (+{len(self.items) - 4} checks)" if len(self.items) > 4 else "")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3g}"
    return str(v)


@contextlib.contextmanager
def criterion(k: int):
    checks = Checks()
    RESULTS[k] = (False, "did not finish")
    try:
        yield checks
    except Exception as exc:
        RESULTS[k] = (False, f"error: {type(exc).__name__}: {exc}")
        print(f"criterion {k} FAIL {TITLES[k]}: error {exc}")
        raise
    RESULTS[k] = (checks.ok, checks.summary())
    print(f"criterion {k} {'PASS' if checks.ok else 'FAIL'} {TITLES[k]}: {checks.summary()}")
    assert checks.ok, checks.failures()
