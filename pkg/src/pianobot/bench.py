"""Benchmark the compiled plant kernel against the pure-numpy fallback.

Both paths are exercised on the same scripted target trajectory; besides
timing we report the maximum absolute state deviation, which is expected to
be exactly 0.0 (the compiled kernel is a transcription, not a
reimplementation, of the numpy path).
"""

from __future__ import annotations

import time

import numpy as np

from .constants import JOINT_COUNT, JOINT_LIMITS_HIGH, JOINT_LIMITS_LOW
from .physics import PlantModel, nominal_params


def _scripted_targets(n_steps: int, seed: int = 0) -> np.ndarray:
    """Smooth pseudo-random joint targets covering the joint ranges."""
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=JOINT_COUNT)
    freq = rng.uniform(0.2, 1.5, size=JOINT_COUNT)
    t = np.arange(n_steps)[:, None] * 0.05
    wave = 0.5 * (1.0 + np.sin(2.0 * np.pi * freq * t + phase))
    lo, hi = JOINT_LIMITS_LOW, JOINT_LIMITS_HIGH
    return (lo + wave * (hi - lo)).astype(np.float64)


def _run_path(use_numba: bool, targets: np.ndarray):
    model = PlantModel(nominal_params(), use_numba=use_numba)
    model.reset()
    qs, mus = [], []
    t0 = time.perf_counter()
    for step_targets in targets:
        model.advance(step_targets)
        qs.append(model.state.q.copy())
        mus.append(model.state.mu.copy())
    elapsed = time.perf_counter() - t0
    return elapsed, np.asarray(qs), np.asarray(mus)


def run_benchmark(n_steps: int = 2000, repeats: int = 3, seed: int = 0):
    """Time both kernel paths; returns a result dict (times in seconds)."""
    targets = _scripted_targets(n_steps, seed)
    # first numba call pays the JIT cost; do it outside the timed loop
    _run_path(True, targets[:2])

    best = {"python": float("inf"), "numba": float("inf")}
    qs = {}
    mus = {}
    for _ in range(repeats):
        for name, flag in (("python", False), ("numba", True)):
            elapsed, q, mu = _run_path(flag, targets)
            best[name] = min(best[name], elapsed)
            qs[name], mus[name] = q, mu

    dev_q = float(np.max(np.abs(qs["python"] - qs["numba"])))
    dev_mu = float(np.max(np.abs(mus["python"] - mus["numba"])))
    return {
        "n_steps": n_steps,
        "python_s": best["python"],
        "numba_s": best["numba"],
        "python_us_per_step": 1e6 * best["python"] / n_steps,
        "numba_us_per_step": 1e6 * best["numba"] / n_steps,
        "speedup": best["python"] / best["numba"],
        "max_abs_dev_q": dev_q,
        "max_abs_dev_mu": dev_mu,
    }


def format_report(result: dict) -> str:
    return (
        f"steps={result['n_steps']} "
        f"python={result['python_us_per_step']:.1f}us/step "
        f"numba={result['numba_us_per_step']:.1f}us/step "
        f"speedup={result['speedup']:.1f}x "
        f"max_dev_q={result['max_abs_dev_q']:.3g} "
        f"max_dev_mu={result['max_abs_dev_mu']:.3g}"
    )


if __name__ == "__main__":
    print(format_report(run_benchmark()))
