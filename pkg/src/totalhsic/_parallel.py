"""Ordered fan-out over row panels.

Results are always returned in panel order, so anything merged from them is
independent of the worker count.
"""

from concurrent.futures import ThreadPoolExecutor

# elements per panel; a panel never holds fewer than one full row
PANEL_BUDGET = 1 << 18


def panel_rows(n, budget=PANEL_BUDGET):
    return max(1, min(n, budget // max(n, 1)))


def panels(n, rows=None):
    rows = rows or panel_rows(n)
    return [(j0, min(j0 + rows, n)) for j0 in range(0, n, rows)]


def ordered_map(fn, items, workers=1):
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
