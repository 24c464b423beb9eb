import numpy as np
import pytest

from glaucoscreen.imaging import Sample, merge_masks, to_grayscale
from glaucoscreen.phantoms import random_phantom

FD_STEP = 1e-5
# gradients below this are treated as structurally zero (e.g. conv bias feeding batch norm)
FD_ABS_FLOOR = 1e-8


def numeric_grad(f, arr, step=FD_STEP, indices=None):
    """Central finite differences of scalar ``f()`` w.r.t. entries of ``arr`` (mutated in place)."""
    flat = arr.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = []
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        out.append((hi - lo) / (2 * step))
    return np.array(out)


def rel_error(analytic, numeric):
    """Norm-wise relative error between two gradient arrays."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom < FD_ABS_FLOOR:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def elementwise_rel_error(a, n):
    a, n = np.ravel(a), np.ravel(n)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), FD_ABS_FLOOR)
    err = np.abs(a - n) / denom
    err[np.maximum(np.abs(a), np.abs(n)) < FD_ABS_FLOOR] = 0.0
    return err


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def phantom_samples(n, size=64, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        img, disc, cup = random_phantom(size, k % 2 == 0, rng)
        out.append(Sample(f"ph{k}", to_grayscale(img), merge_masks(disc, cup)[0]))
    return out


def two_blobs(n=40, seed=0, separation=3.0):
    """Seeded two-Gaussian data: first half labelled +1, second half -1."""
    rng = np.random.default_rng(seed)
    half = n // 2
    x = np.vstack([rng.normal(0.0, 1.0, (half, 2)) + separation / 2,
                   rng.normal(0.0, 1.0, (n - half, 2)) - separation / 2])
    y = np.r_[np.ones(half), -np.ones(n - half)]
    return x, y


def _project_box_hyperplane(v, y, c):
    """Euclidean projection onto {0 <= a <= c, y'a = 0} by bisection on the multiplier."""
    lo, hi = -np.abs(v).max() - c - 1.0, np.abs(v).max() + c + 1.0
    for _ in range(200):
        lam = 0.5 * (lo + hi)
        if y @ np.clip(v - lam * y, 0.0, c) > 0:
            lo = lam
        else:
            hi = lam
    return np.clip(v - 0.5 * (lo + hi) * y, 0.0, c)


def projected_gradient_dual(x, y, c, gamma, iters=2000):
    """Maximize the SVM dual with accelerated projected gradient; returns (alpha, objective)."""
    sq = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    q = (y[:, None] * y[None, :]) * np.exp(-gamma * sq)
    step = 1.0 / np.linalg.eigvalsh(q)[-1]
    a = np.zeros(len(y))
    z, t = a.copy(), 1.0
    for _ in range(iters):
        a_next = _project_box_hyperplane(z - step * (q @ z - 1.0), y, c)
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = a_next + (t - 1) / t_next * (a_next - a)
        a, t = a_next, t_next
    return a, float(a.sum() - 0.5 * a @ q @ a)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
