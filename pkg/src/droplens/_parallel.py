from concurrent.futures import ThreadPoolExecutor


def ordered_map(fn, items, threads=1):
    """Apply ``fn`` to every item, returning results in input order.

    Output never depends on ``threads``; it only bounds the worker count.
    """
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
