"""Shared fixtures and independent oracles used across the suite."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from heatrecon.datagen import generate, scenario_template

torch.set_num_threads(1)


# ---------------------------------------------------------------------------
# independent oracles


def brute_force_nearest_node(grid, x, y):
    """Per-node scan in row-major order; first minimum wins."""
    best = None
    best_d = None
    for i in range(grid.ny):
        for j in range(grid.nx):
            d = (j * grid.hx - x) ** 2 + (i * grid.hy - y) ** 2
            if best_d is None or d < best_d:
                best_d = d
                best = (i, j)
    return best


def brute_force_voronoi(readings, grid):
    """Per-node nearest-sensor scan; lowest sensor index breaks ties."""
    out = np.zeros((grid.ny, grid.nx))
    pos = readings.layout.positions
    for i in range(grid.ny):
        for j in range(grid.nx):
            best_s, best_d = 0, None
            for s, (sx, sy) in enumerate(pos):
                d = (j * grid.hx - sx) ** 2 + (i * grid.hy - sy) ** 2
                if best_d is None or d < best_d:
                    best_d = d
                    best_s = s
            out[i, j] = readings.values[best_s]
    return out


def oracle_row_order(n):
    """Row indices by |frequency| ascending, positive sign first (independent derivation)."""
    return sorted(range(n), key=lambda k: (min(k, n - k), k > n // 2))


def spectral_oracle(u: np.ndarray, weight: np.ndarray, modes1: int, modes2: int) -> np.ndarray:
    """Explicit-summation DFT route for the spectral convolution.

    u: (C, H, W) real; weight: (F1, F2, C, C) complex. The retained half
    spectrum is mode-mixed, Hermitian-extended over the interior columns, and
    inverted by explicit sums; the real part is returned.
    """
    c, h, w = u.shape
    uhat = np.zeros((c, h, w), dtype=complex)
    for k1 in range(h):
        for k2 in range(w):
            acc = np.zeros(c, dtype=complex)
            for x1 in range(h):
                for x2 in range(w):
                    acc = acc + u[:, x1, x2] * np.exp(-2j * np.pi * (x1 * k1 / h + x2 * k2 / w))
            uhat[:, k1, k2] = acc

    full = np.zeros((c, h, w), dtype=complex)
    rows = oracle_row_order(h)[:modes1]
    for a, k1 in enumerate(rows):
        for k2 in range(modes2):
            full[:, k1, k2] = weight[a, k2] @ uhat[:, k1, k2]
    for k1 in range(h):
        for k2 in range(1, (w + 1) // 2):
            full[:, (h - k1) % h, w - k2] = np.conj(full[:, k1, k2])

    out = np.zeros((c, h, w))
    for x1 in range(h):
        for x2 in range(w):
            acc = np.zeros(c, dtype=complex)
            for k1 in range(h):
                for k2 in range(w):
                    acc = acc + full[:, k1, k2] * np.exp(2j * np.pi * (x1 * k1 / h + x2 * k2 / w))
            out[:, x1, x2] = acc.real / (h * w)
    return out


def fd_check(make_loss, tensors, n_coords=6, step=1e-4, tol=1e-4, seed=0):
    """Central finite-difference check of autograd gradients.

    make_loss recomputes the scalar loss from scratch; tensors are float64
    leaves. Uses the fourth-order central stencil at the given step (the
    plain two-point difference leaves O(step^2) truncation above the 1e-4
    gate for sharply curved compositions, e.g. normalization biases).
    Samples up to n_coords coordinates per tensor and returns the worst
    relative error (guarded at scale 1e-3).
    """
    loss = make_loss()
    grads = torch.autograd.grad(loss, tensors)
    rng = np.random.default_rng(seed)
    worst = 0.0

    def eval_at(flat, i, value):
        flat[i] = value
        return float(make_loss().detach())

    for t, g in zip(tensors, grads):
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        k = min(n_coords, flat.numel())
        for i in rng.choice(flat.numel(), size=k, replace=False):
            orig = flat[i].item()
            f1 = eval_at(flat, i, orig + step)
            f_1 = eval_at(flat, i, orig - step)
            f2 = eval_at(flat, i, orig + 2 * step)
            f_2 = eval_at(flat, i, orig - 2 * step)
            flat[i] = orig
            fd = (8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * step)
            an = float(gflat[i])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-3)
            worst = max(worst, rel)
    assert worst <= tol, f"worst finite-difference relative error {worst:.3e} > {tol}"
    return worst


# ---------------------------------------------------------------------------
# fixtures


@pytest.fixture(scope="session")
def tiny_hsink():
    """Small HSink dataset shared by training-oriented tests."""
    spec = scenario_template("HSink", resolution=32)
    return generate(spec, 10, master_seed=11, splits={"train": 6, "val": 2, "test": 2})


@pytest.fixture(scope="session")
def tiny_new_scenario():
    spec = scenario_template("NewScenario", resolution=32)
    return generate(spec, 8, master_seed=5, splits={"train": 5, "val": 1, "test": 2})
