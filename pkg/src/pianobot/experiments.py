"""Scripted experiment grids over the internal plant proxy: per-song suite,
execution-mode ablation, and the DR-intensity sweep.

Every result row carries the full reproducibility chain: config hash, seed,
code version (git describe) and the hash of the DR configuration that
produced the training distribution. Run-to-run plant variability, which on
hardware would come from physical noise, is reproduced by jittering the
proxy plant parameters with a small run-indexed randomization.
"""

from __future__ import annotations

import csv
import os
import statistics
import subprocess
from dataclasses import replace

import numpy as np

from . import env as env_mod
from . import exec_modes as xm
from . import metrics
from . import song as song_mod
from .config import RunConfig, config_hash
from .domain_rand import DRConfig, DRSampler
from .errors import TrainingDiverged
from .physics import nominal_params
from .policy.checkpoint import load_checkpoint, save_checkpoint
from .policy.sac import SACTrainer, actor_from_checkpoint, rollout_deterministic

RESULT_COLUMNS = ("song", "mode", "c_dr", "seed", "run", "side",
                  "precision", "recall", "f1", "averaging",
                  "divergence_steps", "status",
                  "config_hash", "dr_params_hash", "code_version")

SUITE_SONGS = ("twinkle", "c_major_scale", "d_major_scale",
               "chord_progression")

# plant jitter standing in for hardware run-to-run variability
RUN_JITTER_CDR = 0.05


def code_version() -> str:
    env_override = os.environ.get("PIANOBOT_CODE_VERSION")
    if env_override:
        return env_override
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def song_params(timeline):
    """Nominal plant params with the hand started over the song's keys."""
    p = nominal_params()
    p.hand_start_slider = env_mod.suggest_start_slider(timeline)
    return p


def _ckpt_path(out_dir, song, c_dr, seed):
    return os.path.join(out_dir, "checkpoints",
                        f"{song}_cdr{c_dr:.2f}_seed{seed}.ckpt")


def ensure_trained(out_dir, song_name, c_dr, seed, run_cfg: RunConfig,
                   train_if_missing=True):
    """Load a cached checkpoint or train one; returns (checkpoint, status)
    with status in ok|missing|failed."""
    path = _ckpt_path(out_dir, song_name, c_dr, seed)
    if os.path.exists(path):
        return load_checkpoint(path), "ok"
    if not train_if_missing:
        return None, "missing"
    timeline = song_mod.load_fixture(song_name)
    params = song_params(timeline)
    train_env = env_mod.PianoEnv(timeline, params,
                                 reward_config=run_cfg.reward)
    dr = DRConfig(nominal=params, c_dr=c_dr, spreads=run_cfg.spreads,
                  seed=seed)
    trainer_cfg = replace(run_cfg.trainer, seed=seed,
                          averaging=run_cfg.averaging)
    trainer = SACTrainer(train_env, dr, trainer_cfg)
    try:
        ckpt = trainer.train(config_hash=config_hash(run_cfg))
    except TrainingDiverged:
        return None, "failed"
    os.makedirs(os.path.dirname(path), exist_ok=True)
    save_checkpoint(ckpt, path)
    return ckpt, "ok"


def _plant_for_run(nominal, gap, run_index):
    """The proxy plant for one evaluation run: fixed perturbation direction
    plus a small run-indexed jitter."""
    proxy = xm.proxy_params(nominal, gap)
    if RUN_JITTER_CDR <= 0.0 or run_index == 0:
        return proxy
    sampler = DRSampler(DRConfig(nominal=proxy, c_dr=RUN_JITTER_CDR,
                                 seed=1000 + run_index))
    return sampler.sample(run_index)


def _row(song, mode, c_dr, seed, run, side, scores, averaging, divergence,
         status, cfg_hash, dr_hash, version):
    return {
        "song": song, "mode": mode, "c_dr": c_dr, "seed": seed, "run": run,
        "side": side,
        "precision": "" if scores is None else repr(scores.precision),
        "recall": "" if scores is None else repr(scores.recall),
        "f1": "" if scores is None else repr(scores.f1),
        "averaging": averaging, "divergence_steps": divergence,
        "status": status, "config_hash": cfg_hash, "dr_params_hash": dr_hash,
        "code_version": version,
    }


def write_rows(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def summarize(rows, keys=("song", "mode", "c_dr", "side")):
    """Mean and population std of f1 grouped by `keys`, skipping rows
    without scores."""
    groups = {}
    for r in rows:
        if r.get("f1", "") == "" or r.get("status") != "ok":
            continue
        k = tuple(str(r[key]) for key in keys)
        groups.setdefault(k, []).append(float(r["f1"]))
    out = {}
    for k, vals in groups.items():
        out[k] = {
            "mean_f1": statistics.fmean(vals),
            "std_f1": statistics.pstdev(vals) if len(vals) > 1 else 0.0,
            "n": len(vals),
        }
    return out


def _eval_cell(ckpt, song_name, mode, run_cfg, runs, c_dr, seed,
               dr_hash, version, cfg_hash):
    """Shared scoring path: one sim row plus `runs` plant rows."""
    timeline = song_mod.load_fixture(song_name)
    params = song_params(timeline)
    actor = actor_from_checkpoint(ckpt)
    rows = []
    eval_env = env_mod.PianoEnv(timeline, params,
                                reward_config=run_cfg.reward)
    per_step, _ = rollout_deterministic(eval_env, actor, params)
    sim_scores = metrics.score_episode(per_step, run_cfg.averaging)
    rows.append(_row(song_name, mode, c_dr, seed, 0, "sim", sim_scores,
                     run_cfg.averaging, 0, "ok", cfg_hash, dr_hash, version))
    for run in range(1, runs + 1):
        plant_params = _plant_for_run(params, run_cfg.gap, run)
        cfg = xm.ModeConfig(mode=mode, shadow_params=params,
                            plant=xm.SimPlant(plant_params),
                            forward_positions=run_cfg.forward_positions,
                            reward_config=run_cfg.reward,
                            averaging=run_cfg.averaging)
        result = xm.run_episode(actor, timeline, cfg)
        status = "aborted" if result.aborted else "ok"
        rows.append(_row(song_name, mode, c_dr, seed, run, "plant",
                         result.scores_plant, run_cfg.averaging,
                         result.divergence_steps, status, cfg_hash,
                         dr_hash, version))
    return rows


# ---------------------------------------------------------------------------
# experiment entry points
# ---------------------------------------------------------------------------

def run_song_suite(out_dir, songs=SUITE_SONGS, seeds=(0, 1), runs=3,
                   mode=xm.HYBRID, run_cfg: RunConfig = None,
                   train_if_missing=True):
    """Per-song scores: seeds x runs plant evaluations plus sim-side rows.
    Returns (csv_path, rows, missing)."""
    run_cfg = run_cfg or RunConfig()
    os.makedirs(out_dir, exist_ok=True)
    version = code_version()
    cfg_hash = config_hash(run_cfg)
    rows, missing = [], []
    for song_name in songs:
        for seed in seeds:
            ckpt, status = ensure_trained(out_dir, song_name, run_cfg.c_dr,
                                          seed, run_cfg, train_if_missing)
            if ckpt is None:
                missing.append((song_name, seed, status))
                rows.append(_row(song_name, mode, run_cfg.c_dr, seed, 0,
                                 "sim", None, run_cfg.averaging, 0, status,
                                 cfg_hash, "", version))
                continue
            timeline = song_mod.load_fixture(song_name)
            dr_hash = DRConfig(nominal=song_params(timeline),
                               c_dr=run_cfg.c_dr, spreads=run_cfg.spreads,
                               seed=seed).hash_hex()
            rows.extend(_eval_cell(ckpt, song_name, mode, run_cfg, runs,
                                   run_cfg.c_dr, seed, dr_hash, version,
                                   cfg_hash))
    path = os.path.join(out_dir, "song_suite.csv")
    write_rows(rows, path)
    plot_song_suite(rows, os.path.join(out_dir, "song_suite.svg"))
    return path, rows, missing


def run_mode_ablation(out_dir, songs=SUITE_SONGS, modes=xm.MODES,
                      seeds=(0, 1), runs=3, run_cfg: RunConfig = None,
                      real_mode_cdr=0.5, train_if_missing=True):
    """Modes x songs grid; real-world rows use checkpoints trained with
    moderate randomization (c_dr=0.5 by default)."""
    run_cfg = run_cfg or RunConfig()
    os.makedirs(out_dir, exist_ok=True)
    version = code_version()
    cfg_hash = config_hash(run_cfg)
    rows, missing = [], []
    for song_name in songs:
        for mode in modes:
            c_dr = real_mode_cdr if mode == xm.REAL else run_cfg.c_dr
            for seed in seeds:
                ckpt, status = ensure_trained(out_dir, song_name, c_dr,
                                              seed, run_cfg,
                                              train_if_missing)
                if ckpt is None:
                    missing.append((song_name, mode, seed, status))
                    rows.append(_row(song_name, mode, c_dr, seed, 0, "sim",
                                     None, run_cfg.averaging, 0, status,
                                     cfg_hash, "", version))
                    continue
                timeline = song_mod.load_fixture(song_name)
                dr_hash = DRConfig(nominal=song_params(timeline), c_dr=c_dr,
                                   spreads=run_cfg.spreads,
                                   seed=seed).hash_hex()
                rows.extend(_eval_cell(ckpt, song_name, mode, run_cfg, runs,
                                       c_dr, seed, dr_hash, version,
                                       cfg_hash))
    path = os.path.join(out_dir, "mode_ablation.csv")
    write_rows(rows, path)
    plot_mode_ablation(rows, os.path.join(out_dir, "mode_ablation.svg"))
    return path, rows, missing


def dr_sweep_grid():
    return [round(i / 10.0, 1) for i in range(11)]


def dr_sweep_run_count(i: int) -> int:
    """Run schedule over grid index i (c_dr = i/10): 7 in the middle band,
    5 on the shoulders, 3 at the edges."""
    if 3 <= i <= 7:
        return 7
    if 2 <= i <= 8:
        return 5
    return 3


def run_dr_sweep(out_dir, song_name="hold_c4", run_cfg: RunConfig = None,
                 mode=xm.HYBRID, grid=None, run_counts=None):
    """Train/evaluate across the 11-point c_dr grid. A diverged training is
    recorded as a failed cell and the sweep continues."""
    run_cfg = run_cfg or RunConfig()
    os.makedirs(out_dir, exist_ok=True)
    version = code_version()
    cfg_hash = config_hash(run_cfg)
    grid = dr_sweep_grid() if grid is None else list(grid)
    rows = []
    for i, c_dr in enumerate(grid):
        n_runs = run_counts[i] if run_counts else dr_sweep_run_count(i)
        for seed in range(n_runs):
            ckpt, status = ensure_trained(out_dir, song_name, c_dr, seed,
                                          run_cfg)
            timeline = song_mod.load_fixture(song_name)
            dr_hash = DRConfig(nominal=song_params(timeline), c_dr=c_dr,
                               spreads=run_cfg.spreads,
                               seed=seed).hash_hex()
            if ckpt is None:
                rows.append(_row(song_name, mode, c_dr, seed, 0, "sim",
                                 None, run_cfg.averaging, 0, status,
                                 cfg_hash, dr_hash, version))
                continue
            rows.extend(_eval_cell(ckpt, song_name, mode, run_cfg, 1,
                                   c_dr, seed, dr_hash, version, cfg_hash))
    path = os.path.join(out_dir, "dr_sweep.csv")
    write_rows(rows, path)
    plot_dr_sweep(rows, os.path.join(out_dir, "dr_sweep.svg"))
    return path, rows


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

def _get_axes():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_song_suite(rows, path):
    plt = _get_axes()
    summary = summarize(rows, keys=("song", "side"))
    songs = sorted({r["song"] for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.35
    for off, side in ((-width / 2, "sim"), (width / 2, "plant")):
        means = [summary.get((s, side), {}).get("mean_f1", 0.0) for s in songs]
        stds = [summary.get((s, side), {}).get("std_f1", 0.0) for s in songs]
        ax.bar(np.arange(len(songs)) + off, means, width, yerr=stds,
               label=side, capsize=3)
    ax.set_xticks(range(len(songs)))
    ax.set_xticklabels(songs, rotation=20)
    ax.set_ylabel("F1")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_mode_ablation(rows, path):
    plt = _get_axes()
    summary = summarize(rows, keys=("song", "mode", "side"))
    songs = sorted({r["song"] for r in rows})
    modes = sorted({r["mode"] for r in rows})
    fig, ax = plt.subplots(figsize=(8, 4))
    width = 0.8 / max(1, len(modes))
    for m_i, mode in enumerate(modes):
        means = [summary.get((s, mode, "plant"), {}).get("mean_f1", 0.0)
                 for s in songs]
        stds = [summary.get((s, mode, "plant"), {}).get("std_f1", 0.0)
                for s in songs]
        xs = np.arange(len(songs)) + (m_i - (len(modes) - 1) / 2) * width
        ax.bar(xs, means, width, yerr=stds, label=mode, capsize=3)
    ax.set_xticks(range(len(songs)))
    ax.set_xticklabels(songs, rotation=20)
    ax.set_ylabel("plant F1")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_dr_sweep(rows, path):
    plt = _get_axes()
    summary = summarize(rows, keys=("c_dr", "side"))
    grid = sorted({float(r["c_dr"]) for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4))
    for side, style in (("sim", "o-"), ("plant", "s--")):
        means = [summary.get((str(c), side), {}).get("mean_f1", float("nan"))
                 for c in grid]
        ax.plot(grid, means, style, label=f"{side} F1")
    ax.set_xlabel("c_dr")
    ax.set_ylabel("F1")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
