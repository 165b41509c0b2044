"""Command-line entry point.

Subcommands cover the full pipeline: train / eval / rollout / score for
single policies, compare-modes / dr-sweep for the experiment grids,
convert-song for file conversion and bench for the kernel micro-benchmark.
Config comes from an INI file (--config) with every value overridable by a
flag. Errors print a single machine-parsable line to stderr:
    error: <category>: <message>
with exit codes 0 ok | 2 usage | 3 config | 4 protocol/plant | 5 numerical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import env as env_mod
from . import exec_modes as xm
from . import experiments as ex
from . import metrics
from . import song as song_mod
from .config import RunConfig, config_hash, load_config
from .domain_rand import DRConfig
from .errors import (BridgeProtocolError, BridgeTimeoutError, CheckpointError,
                     ConfigError, IntegrationFault, SongParseError,
                     TrainingDiverged)
from .policy.checkpoint import load_checkpoint, save_checkpoint
from .policy.sac import SACTrainer, actor_from_checkpoint, rollout_deterministic

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_PLANT = 4
EXIT_NUMERICAL = 5


def _fail(category: str, exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split()) or exc.__class__.__name__
    print(f"error: {category}: {msg}", file=sys.stderr)
    return code


def _load_timeline(song: str) -> song_mod.SongTimeline:
    if song in song_mod.FIXTURE_NAMES:
        return song_mod.load_fixture(song)
    if not os.path.exists(song):
        raise ConfigError(f"song file not found: {song}")
    return song_mod.load_song(song)


def _merged_config(args) -> RunConfig:
    rc = load_config(getattr(args, "config", None))
    direct = {"song": "song", "mode": "mode", "seed": "seed", "cdr": "c_dr",
              "averaging": "averaging", "gap": "gap", "workers": "workers"}
    for flag, field_name in direct.items():
        v = getattr(args, flag, None)
        if v is not None:
            rc = replace(rc, **{field_name: v})
    trainer = rc.trainer
    tdirect = {"steps": "total_steps", "budget_unit": "budget_unit",
               "early_stop_f1": "early_stop_f1",
               "eval_interval": "eval_interval"}
    for flag, field_name in tdirect.items():
        v = getattr(args, flag, None)
        if v is not None:
            trainer = replace(trainer, **{field_name: v})
    if rc.seed is not None:
        trainer = replace(trainer, seed=rc.seed)
    trainer = replace(trainer, averaging=rc.averaging)
    rc = replace(rc, trainer=trainer)
    if getattr(args, "forward_positions", False):
        rc = replace(rc, forward_positions=True)
    return rc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    rc = _merged_config(args)
    timeline = _load_timeline(rc.song)
    params = ex.song_params(timeline)
    train_env = env_mod.PianoEnv(timeline, params, reward_config=rc.reward)
    dr = DRConfig(nominal=params, c_dr=rc.c_dr, spreads=rc.spreads,
                  seed=rc.seed)
    trainer = SACTrainer(train_env, dr, rc.trainer)
    ckpt = trainer.train(config_hash=config_hash(rc))
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_checkpoint(ckpt, args.out)
    if args.curve:
        trainer.write_curve(args.curve)
    print(f"trained song={rc.song} c_dr={rc.c_dr} steps={trainer.step_count} "
          f"best_f1={trainer.best_eval_f1:.4f} out={args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    rc = _merged_config(args)
    timeline = _load_timeline(rc.song)
    params = ex.song_params(timeline)
    actor = actor_from_checkpoint(load_checkpoint(args.ckpt))
    mode = xm.canonical_mode(rc.mode)

    eval_env = env_mod.PianoEnv(timeline, params, reward_config=rc.reward)
    per_step, _ = rollout_deterministic(eval_env, actor, params)
    sim = metrics.score_episode(per_step, rc.averaging)
    print(f"run=0 side=sim mode={mode} precision={sim.precision:.6f} "
          f"recall={sim.recall:.6f} f1={sim.f1:.6f}")

    plant_base = xm.proxy_params(params, rc.gap)
    f1s = []
    for run in range(1, args.runs + 1):
        plant_params = plant_base
        if args.jitter > 0.0:
            from .domain_rand import DRSampler
            sampler = DRSampler(DRConfig(nominal=plant_base,
                                         c_dr=args.jitter,
                                         seed=1000 + rc.seed))
            plant_params = sampler.sample(run)
        cfg = xm.ModeConfig(mode=mode, shadow_params=params,
                            plant=xm.SimPlant(plant_params),
                            forward_positions=rc.forward_positions,
                            reward_config=rc.reward, averaging=rc.averaging)
        result = xm.run_episode(actor, timeline, cfg)
        s = result.scores_plant
        f1s.append(s.f1)
        print(f"run={run} side=plant mode={mode} precision={s.precision:.6f} "
              f"recall={s.recall:.6f} f1={s.f1:.6f} "
              f"divergence_steps={result.divergence_steps} "
              f"aborted={int(result.aborted)}")
    if f1s:
        print(f"summary side=plant mode={mode} mean_f1={np.mean(f1s):.6f} "
              f"runs={len(f1s)}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    rc = _merged_config(args)
    timeline = _load_timeline(rc.song)
    params = ex.song_params(timeline)
    e = env_mod.PianoEnv(timeline, params, reward_config=rc.reward)

    policy_kind = args.policy
    if policy_kind == "auto":
        policy_kind = "ckpt" if args.ckpt else "zero"
    if policy_kind == "ckpt":
        if not args.ckpt:
            raise ConfigError("rollout --policy ckpt requires --ckpt")
        actor = actor_from_checkpoint(load_checkpoint(args.ckpt))
        act = lambda obs, rng: actor.act(obs, deterministic=True)
    elif policy_kind == "random":
        act = lambda obs, rng: rng.uniform(-1.0, 1.0, 13)
    else:
        act = lambda obs, rng: np.zeros(13)

    rng = np.random.default_rng(rc.seed)
    obs = e.reset(params=params)
    records = []
    while True:
        action = act(obs.vector(), rng)
        res = e.step(action)
        records.append(env_mod.step_record(
            res.info["t"], action, res.info["pressed"], res.info["targets"],
            res.reward))
        obs = res.observation
        if res.done:
            break
    env_mod.write_jsonl(records, args.out)
    scores = metrics.score_episode(_counts_from_records(records),
                                   rc.averaging)
    print(f"rollout song={rc.song} steps={len(records)} policy={policy_kind} "
          f"f1={scores.f1:.6f} out={args.out}")
    return EXIT_OK


def _counts_from_records(records) -> list:
    out = []
    for r in records:
        pressed = set(r["pressed"])
        targets = set(r["targets"])
        out.append(metrics.EpisodeCounts(
            tp=len(pressed & targets),
            fp=len(pressed - targets),
            fn=len(targets - pressed)))
    return out


def cmd_score(args) -> int:
    if not os.path.exists(args.log):
        raise ConfigError(f"log file not found: {args.log}")
    records = []
    with open(args.log, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(
                    f"{args.log}:{i}: not valid JSON ({exc.msg})") from exc
            if "aborted" in rec:
                continue
            if "pressed" not in rec or "targets" not in rec:
                raise ConfigError(
                    f"{args.log}:{i}: record missing pressed/targets")
            records.append(rec)
    per_step = _counts_from_records(records)
    scores = metrics.score_episode(per_step, args.averaging)
    print(f"steps={len(per_step)} averaging={args.averaging} "
          f"precision={scores.precision:.6f} recall={scores.recall:.6f} "
          f"f1={scores.f1:.6f}")
    return EXIT_OK


_TEXT_EXTS = (".song", ".txt")
_MIDI_EXTS = (".mid", ".midi")


def cmd_convert_song(args) -> int:
    src, dst = args.input, args.output
    if not os.path.exists(src):
        raise ConfigError(f"input file not found: {src}")
    s_ext = os.path.splitext(src)[1].lower()
    d_ext = os.path.splitext(dst)[1].lower()
    if s_ext in _MIDI_EXTS:
        with open(src, "rb") as fh:
            events = song_mod.parse_midi(fh.read())
    elif s_ext in _TEXT_EXTS:
        with open(src, encoding="utf-8") as fh:
            events = song_mod.parse_song_text(fh.read())
    else:
        raise ConfigError(f"unsupported input extension: {s_ext or '(none)'}")
    if d_ext in _MIDI_EXTS:
        payload = song_mod.render_midi(events)
        with open(dst, "wb") as fh:
            fh.write(payload)
    elif d_ext in _TEXT_EXTS:
        with open(dst, "w", encoding="utf-8") as fh:
            fh.write(song_mod.render_song_text(events))
    else:
        raise ConfigError(f"unsupported output extension: {d_ext or '(none)'}")
    print(f"converted {src} -> {dst} events={len(events)}")
    return EXIT_OK


def cmd_compare_modes(args) -> int:
    rc = _merged_config(args)
    songs = tuple(args.songs.split(",")) if args.songs else ex.SUITE_SONGS
    seeds = tuple(int(s) for s in args.seeds.split(","))
    path, rows, missing = ex.run_mode_ablation(
        args.out_dir, songs=songs, seeds=seeds, runs=args.runs, run_cfg=rc,
        train_if_missing=not args.no_train)
    for key, stats in sorted(ex.summarize(rows,
                                          keys=("song", "mode", "side")).items()):
        print(f"song={key[0]} mode={key[1]} side={key[2]} "
              f"mean_f1={stats['mean_f1']:.4f} std_f1={stats['std_f1']:.4f} "
              f"n={stats['n']}")
    for m in missing:
        print(f"missing checkpoint: {m}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_dr_sweep(args) -> int:
    rc = _merged_config(args)
    grid = None
    if args.grid:
        grid = [float(x) for x in args.grid.split(",")]
    path, rows = ex.run_dr_sweep(args.out_dir, song_name=rc.song, run_cfg=rc,
                                 grid=grid)
    for key, stats in sorted(ex.summarize(rows, keys=("c_dr", "side")).items()):
        print(f"c_dr={key[0]} side={key[1]} mean_f1={stats['mean_f1']:.4f} "
              f"std_f1={stats['std_f1']:.4f} n={stats['n']}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import format_report, run_benchmark
    result = run_benchmark(n_steps=args.steps, repeats=args.repeats)
    print(format_report(result))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p, song=True):
    p.add_argument("--config", help="INI config file; flags override it")
    p.add_argument("--seed", type=int, help="master RNG seed")
    if song:
        p.add_argument("--song",
                       help="fixture name or path to a .song/.mid file")
    p.add_argument("--averaging", choices=(metrics.MICRO, metrics.MACRO),
                   help="score averaging scheme")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pianobot",
        description="Piano-playing hand: training, evaluation and tooling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy on one song")
    _add_common(p)
    p.add_argument("--cdr", type=float, help="domain-randomization intensity")
    p.add_argument("--steps", type=int, help="training budget")
    p.add_argument("--budget-unit", dest="budget_unit",
                   choices=("steps", "episodes"), help="budget unit")
    p.add_argument("--early-stop-f1", dest="early_stop_f1", type=float,
                   help="stop once eval F1 reaches this")
    p.add_argument("--eval-interval", dest="eval_interval", type=int,
                   help="environment steps between evaluations")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--curve", help="optional learning-curve CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against the "
                                    "perturbed-plant proxy")
    _add_common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint to evaluate")
    p.add_argument("--mode", help="execution mode: mirror|hybrid|real")
    p.add_argument("--runs", type=int, default=1, help="plant-side runs")
    p.add_argument("--gap", type=float, help="plant mismatch scale "
                                             "(0 = identical plant)")
    p.add_argument("--jitter", type=float, default=0.0,
                   help="per-run plant parameter jitter intensity")
    p.add_argument("--forward-positions", dest="forward_positions",
                   action="store_true",
                   help="forward measured joint positions instead of targets")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="write one episode log (JSON lines)")
    _add_common(p)
    p.add_argument("--ckpt", help="checkpoint to roll out")
    p.add_argument("--policy", choices=("auto", "ckpt", "zero", "random"),
                   default="auto", help="policy choice; auto=ckpt if given")
    p.add_argument("--out", required=True, help="episode log output path")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("score", help="re-score an episode log")
    p.add_argument("--log", required=True, help="JSON-lines episode log")
    p.add_argument("--averaging", choices=(metrics.MICRO, metrics.MACRO),
                   default=metrics.MICRO, help="score averaging scheme")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("convert-song", help="convert between MIDI and the "
                                            "text song format by extension")
    p.add_argument("input", help="source file (.mid/.midi/.song/.txt)")
    p.add_argument("output", help="destination file (.mid/.midi/.song/.txt)")
    p.set_defaults(func=cmd_convert_song)

    p = sub.add_parser("compare-modes", help="execution-mode ablation grid")
    _add_common(p, song=False)
    p.add_argument("--out-dir", dest="out_dir", required=True,
                   help="output directory for CSV/SVG/checkpoints")
    p.add_argument("--songs", help="comma-separated fixture names")
    p.add_argument("--seeds", default="0,1", help="comma-separated seeds")
    p.add_argument("--runs", type=int, default=3, help="plant runs per cell")
    p.add_argument("--no-train", dest="no_train", action="store_true",
                   help="only use cached checkpoints; list missing cells")
    p.add_argument("--workers", type=int, help="parallel workers "
                                               "(default: physical cores)")
    p.set_defaults(func=cmd_compare_modes)

    p = sub.add_parser("dr-sweep", help="train/evaluate across the "
                                        "randomization-intensity grid")
    _add_common(p)
    p.add_argument("--out-dir", dest="out_dir", required=True,
                   help="output directory for CSV/SVG/checkpoints")
    p.add_argument("--grid", help="comma-separated c_dr values "
                                  "(default 0.0..1.0 step 0.1)")
    p.add_argument("--steps", type=int, help="training budget per cell")
    p.add_argument("--workers", type=int, help="parallel workers "
                                               "(default: physical cores)")
    p.set_defaults(func=cmd_dr_sweep)

    p = sub.add_parser("bench", help="kernel micro-benchmark: compiled vs "
                                     "pure-numpy path")
    p.add_argument("--steps", type=int, default=2000,
                   help="control steps per timing pass")
    p.add_argument("--repeats", type=int, default=3,
                   help="timing passes; best is reported")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:          # argparse exits 2 on usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, SongParseError, CheckpointError) as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except FileNotFoundError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (BridgeProtocolError, BridgeTimeoutError) as exc:
        return _fail("plant", exc, EXIT_PLANT)
    except (IntegrationFault, TrainingDiverged) as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)


if __name__ == "__main__":
    sys.exit(main())
