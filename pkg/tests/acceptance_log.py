"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

import contextlib
import time

RESULTS: list[str] = []


@contextlib.contextmanager
def criterion(name: str):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        RESULTS.append(f"FAIL  {name}  ({time.perf_counter() - t0:.1f}s)")
        print(RESULTS[-1])
        raise
    RESULTS.append(f"PASS  {name}  ({time.perf_counter() - t0:.1f}s)")
    print(RESULTS[-1])
