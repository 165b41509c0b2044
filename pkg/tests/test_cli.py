"""End-to-end CLI coverage: help text, exit codes, and the train/eval/
rollout/score/convert/sweep flows on throwaway budgets."""

import argparse
import json
import re

import pytest

from pianobot.cli import build_parser, main
from pianobot.song import load_fixture, parse_song_text

TINY_INI = """
[trainer]
total_steps = 30
warmup_steps = 20
batch_size = 8
utd = 1
hidden = 16, 16
buffer_capacity = 300
eval_interval = 15
eval_episodes = 1
"""


@pytest.fixture()
def ini(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY_INI, encoding="utf-8")
    return str(p)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One tiny checkpoint shared by the eval-side tests."""
    d = tmp_path_factory.mktemp("cli_train")
    ini = d / "tiny.ini"
    ini.write_text(TINY_INI, encoding="utf-8")
    ckpt = d / "policy.ckpt"
    curve = d / "curve.csv"
    rc = main(["train", "--config", str(ini), "--song", "hold_c4",
               "--seed", "0", "--out", str(ckpt), "--curve", str(curve)])
    assert rc == 0
    return str(ini), str(ckpt), str(curve)


def f1_by_line(out: str) -> dict:
    got = {}
    for line in out.splitlines():
        m = re.search(r"f1=([0-9.]+)", line)
        if m and not line.startswith("summary"):
            tag = re.search(r"run=(\d+) side=(\w+)", line)
            got[(int(tag.group(1)), tag.group(2))] = m.group(1)
    return got


class TestHelp:
    def test_every_flag_documented(self):
        parser = build_parser()
        sub = next(a for a in parser._actions
                   if isinstance(a, argparse._SubParsersAction))
        assert set(sub.choices) == {"train", "eval", "rollout", "score",
                                    "convert-song", "compare-modes",
                                    "dr-sweep", "bench"}
        for name, sp in sub.choices.items():
            text = sp.format_help()
            for act in sp._actions:
                assert act.help, f"{name}: {act.dest} lacks help text"
                for opt in act.option_strings:
                    assert opt in text, f"{name}: {opt} not in help"

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "train" in capsys.readouterr().out


class TestExitCodes:
    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["definitely-not-a-command"]) == 2

    def test_missing_required_flag_is_usage_error(self, capsys):
        assert main(["train"]) == 2

    def test_unknown_song_is_config_error(self, tmp_path, capsys):
        rc = main(["rollout", "--song", "no_such_song",
                   "--out", str(tmp_path / "x.jsonl")])
        assert rc == 3
        assert capsys.readouterr().err.startswith("error: config:")

    def test_missing_config_file_is_config_error(self, tmp_path, capsys):
        rc = main(["rollout", "--config", str(tmp_path / "nope.ini"),
                   "--song", "hold_c4", "--out", str(tmp_path / "x.jsonl")])
        assert rc == 3

    def test_bad_config_key_is_config_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[trainer]\nbogus_knob = 1\n", encoding="utf-8")
        rc = main(["rollout", "--config", str(bad), "--song", "hold_c4",
                   "--out", str(tmp_path / "x.jsonl")])
        assert rc == 3
        assert "bogus_knob" in capsys.readouterr().err

    def test_corrupt_checkpoint_is_config_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint")
        rc = main(["eval", "--song", "hold_c4", "--ckpt", str(bad)])
        assert rc == 3
        assert capsys.readouterr().err.startswith("error: config:")


class TestScore:
    def write_log(self, path, rows):
        path.write_text("".join(json.dumps(r) + "\n" for r in rows),
                        encoding="utf-8")

    def test_perfect_log_scores_one(self, tmp_path, capsys):
        log = tmp_path / "ep.jsonl"
        self.write_log(log, [{"t": 0, "pressed": [3], "targets": [3]},
                             {"t": 1, "pressed": [4], "targets": [4]}])
        assert main(["score", "--log", str(log)]) == 0
        out = capsys.readouterr().out
        assert "f1=1.000000" in out and "steps=2" in out

    def test_counts_oracle(self, tmp_path, capsys):
        # tp=1, fp=0, fn=1 -> precision 1, recall 1/2, f1 2/3
        log = tmp_path / "ep.jsonl"
        self.write_log(log, [{"t": 0, "pressed": [1], "targets": [1]},
                             {"t": 1, "pressed": [], "targets": [2]}])
        assert main(["score", "--log", str(log)]) == 0
        out = capsys.readouterr().out
        assert "precision=1.000000" in out
        assert "recall=0.500000" in out
        assert "f1=0.666667" in out

    def test_aborted_and_blank_lines_skipped(self, tmp_path, capsys):
        log = tmp_path / "ep.jsonl"
        log.write_text(
            json.dumps({"t": 0, "pressed": [1], "targets": [1]}) + "\n\n"
            + json.dumps({"t": 1, "aborted": "deadline"}) + "\n",
            encoding="utf-8")
        assert main(["score", "--log", str(log)]) == 0
        assert "steps=1" in capsys.readouterr().out

    def test_invalid_json_is_config_error(self, tmp_path, capsys):
        log = tmp_path / "ep.jsonl"
        log.write_text("{broken\n", encoding="utf-8")
        assert main(["score", "--log", str(log)]) == 3
        assert ":1:" in capsys.readouterr().err

    def test_missing_fields_is_config_error(self, tmp_path, capsys):
        log = tmp_path / "ep.jsonl"
        log.write_text(json.dumps({"t": 0}) + "\n", encoding="utf-8")
        assert main(["score", "--log", str(log)]) == 3

    def test_missing_file_is_config_error(self, tmp_path):
        assert main(["score", "--log", str(tmp_path / "none.jsonl")]) == 3


class TestConvertSong:
    def test_text_midi_text_round_trip(self, tmp_path, capsys):
        src = tmp_path / "scale.song"
        from importlib import resources
        src.write_text(resources.files("pianobot")
                       .joinpath("data", "songs", "c_major_scale.song")
                       .read_text(encoding="utf-8"), encoding="utf-8")
        mid = tmp_path / "scale.mid"
        back = tmp_path / "back.song"
        assert main(["convert-song", str(src), str(mid)]) == 0
        assert main(["convert-song", str(mid), str(back)]) == 0
        orig = parse_song_text(src.read_text(encoding="utf-8"))
        rt = parse_song_text(back.read_text(encoding="utf-8"))
        assert rt == orig

    def test_unsupported_extension(self, tmp_path, capsys):
        src = tmp_path / "x.song"
        src.write_text("24 0.0 0.5\n", encoding="utf-8")
        assert main(["convert-song", str(src), str(tmp_path / "x.wav")]) == 3

    def test_missing_input(self, tmp_path):
        assert main(["convert-song", str(tmp_path / "none.song"),
                     str(tmp_path / "out.mid")]) == 3


class TestRollout:
    def test_zero_policy_deterministic_bytes(self, tmp_path, capsys):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (a, b):
            assert main(["rollout", "--song", "hold_c4", "--seed", "3",
                         "--policy", "random", "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()
        n = len(load_fixture("hold_c4"))
        assert len(a.read_text(encoding="utf-8").splitlines()) == n

    def test_log_rescores_identically(self, tmp_path, capsys):
        out = tmp_path / "ep.jsonl"
        assert main(["rollout", "--song", "hold_c4", "--seed", "0",
                     "--out", str(out)]) == 0
        f1 = re.search(r"f1=([0-9.]+)", capsys.readouterr().out).group(1)
        assert main(["score", "--log", str(out)]) == 0
        assert f"f1={f1}" in capsys.readouterr().out

    def test_ckpt_policy_requires_ckpt(self, tmp_path, capsys):
        rc = main(["rollout", "--song", "hold_c4", "--policy", "ckpt",
                   "--out", str(tmp_path / "x.jsonl")])
        assert rc == 3


class TestTrainEval:
    def test_train_writes_checkpoint_and_curve(self, trained, capsys):
        _, ckpt, curve = trained
        header = open(curve, encoding="utf-8").readline()
        assert header.startswith("step,")
        assert open(ckpt, "rb").read(8) == b"PIANOCK1"

    def test_eval_zero_gap_matches_sim_exactly(self, trained, capsys):
        ini, ckpt, _ = trained
        rc = main(["eval", "--config", ini, "--song", "hold_c4",
                   "--seed", "0", "--ckpt", ckpt, "--gap", "0",
                   "--runs", "2"])
        assert rc == 0
        got = f1_by_line(capsys.readouterr().out)
        assert got[(1, "plant")] == got[(0, "sim")]
        assert got[(2, "plant")] == got[(0, "sim")]

    def test_eval_mode_equivalence_at_zero_gap(self, trained, capsys):
        ini, ckpt, _ = trained
        outs = {}
        for mode in ("mirror", "hybrid", "real"):
            rc = main(["eval", "--config", ini, "--song", "hold_c4",
                       "--seed", "0", "--ckpt", ckpt, "--gap", "0",
                       "--mode", mode])
            assert rc == 0
            outs[mode] = f1_by_line(capsys.readouterr().out)[(1, "plant")]
        assert outs["mirror"] == outs["hybrid"] == outs["real"]

    def test_eval_jitter_perturbs_plant(self, trained, capsys):
        ini, ckpt, _ = trained
        rc = main(["eval", "--config", ini, "--song", "hold_c4",
                   "--seed", "0", "--ckpt", ckpt, "--gap", "0.5",
                   "--jitter", "0.5", "--runs", "2"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "summary side=plant" in out


class TestGridCommands:
    def test_compare_modes_smoke(self, ini, tmp_path, capsys):
        d = tmp_path / "ablation"
        rc = main(["compare-modes", "--config", ini, "--out-dir", str(d),
                   "--songs", "hold_c4", "--seeds", "0", "--runs", "1"])
        assert rc == 0
        out = capsys.readouterr().out
        assert (d / "mode_ablation.csv").exists()
        assert "mode=mirror" in out and "mode=real" in out
        assert "wrote" in out

    def test_dr_sweep_smoke(self, ini, tmp_path, capsys):
        d = tmp_path / "sweep"
        rc = main(["dr-sweep", "--config", ini, "--song", "hold_c4",
                   "--out-dir", str(d), "--grid", "0.0"])
        assert rc == 0
        out = capsys.readouterr().out
        assert (d / "dr_sweep.csv").exists()
        assert "c_dr=0.0 side=sim" in out


class TestBench:
    def test_smoke_and_zero_deviation(self, capsys):
        assert main(["bench", "--steps", "60", "--repeats", "1"]) == 0
        out = capsys.readouterr().out
        assert "us/step" in out and "speedup" in out
        dev_q = float(re.search(r"max_dev_q=([^ ]+)", out).group(1))
        dev_mu = float(re.search(r"max_dev_mu=([^ ]+)", out).group(1))
        assert dev_q == 0.0 and dev_mu == 0.0
