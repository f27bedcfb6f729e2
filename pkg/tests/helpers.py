"""Shared finite-difference utilities for gradient tests."""

import numpy as np


def central_diff(f, arr, index, step=1e-5):
    """Central finite difference of scalar f w.r.t. arr[index] (mutates and restores)."""
    orig = arr[index]
    arr[index] = orig + step
    fp = f()
    arr[index] = orig - step
    fm = f()
    arr[index] = orig
    return (fp - fm) / (2.0 * step)


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def sample_indices(shape, count, rng):
    """Up to count distinct flat indices of an array shape, as tuples."""
    size = int(np.prod(shape))
    flats = rng.choice(size, size=min(count, size), replace=False)
    return [np.unravel_index(int(f), shape) for f in flats]


def assert_fd_matches(loss, arr, grad, indices, step=1e-5, rtol=1e-5, atol=1e-9):
    """Check analytic gradients against central differences at the given indices.

    Each probe is validated with a second, smaller step: when the two
    estimates disagree, a ReLU kink lies inside the probe interval and the
    index is not finite-difference-testable, so it is skipped. At least half
    of the indices must survive validation. atol absorbs pure roundoff on
    near-zero gradients.
    """
    checked = 0
    for idx in indices:
        fd = central_diff(loss, arr, idx, step)
        fd_small = central_diff(loss, arr, idx, step / 8.0)
        if rel_err(fd, fd_small) > 0.5 * rtol and abs(fd - fd_small) > atol:
            continue
        assert rel_err(fd, grad[idx]) < rtol or abs(fd - grad[idx]) < atol, \
            f"index {idx}: finite diff {fd} vs analytic {grad[idx]}"
        checked += 1
    assert checked >= max(1, len(indices) // 2), "too many kink-adjacent probes"
