"""Multiply-accumulate bookkeeping.

A process-global counter keyed by scope name. Primitives report their MAC
cost to the innermost active scope; analysis code opens scopes around the
regions it wants to measure (e.g. the score/apply matmuls of an attention
branch) and reads the totals afterwards.
"""
from __future__ import annotations

from contextlib import contextmanager

_totals: dict[str, int] = {}
_scope_stack: list[str] = ["default"]


def add_macs(n: int) -> None:
    scope = _scope_stack[-1]
    _totals[scope] = _totals.get(scope, 0) + int(n)


@contextmanager
def scope(name: str):
    _scope_stack.append(name)
    try:
        yield
    finally:
        _scope_stack.pop()


def total(name: str = "default") -> int:
    return _totals.get(name, 0)


def reset(name: str | None = None) -> None:
    if name is None:
        _totals.clear()
    else:
        _totals.pop(name, None)
