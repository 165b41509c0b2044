"""Experiment grids at throwaway budgets: checkpoint caching, CSV schema,
reproducibility chain, run schedules and the aggregation oracle."""

import statistics

import pytest

from pianobot import experiments as ex
from pianobot.config import RunConfig
from pianobot.errors import TrainingDiverged
from pianobot.policy.sac import TrainerConfig

TINY = RunConfig(trainer=TrainerConfig(
    total_steps=30, warmup_steps=20, batch_size=8, utd=1, hidden=(16, 16),
    buffer_capacity=300, eval_interval=15, eval_episodes=1))


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    """One tiny song-suite run shared by the read-only assertions."""
    out = tmp_path_factory.mktemp("suite")
    path, rows, missing = ex.run_song_suite(
        str(out), songs=("hold_c4",), seeds=(0,), runs=2, run_cfg=TINY)
    return out, path, rows, missing


class TestCodeVersion:
    def test_env_override_wins(self, monkeypatch):
        monkeypatch.setenv("PIANOBOT_CODE_VERSION", "v9.9-test")
        assert ex.code_version() == "v9.9-test"

    def test_fallback_is_nonempty(self, monkeypatch):
        monkeypatch.delenv("PIANOBOT_CODE_VERSION", raising=False)
        v = ex.code_version()
        assert isinstance(v, str) and v


class TestEnsureTrained:
    def test_trains_then_caches(self, tmp_path, monkeypatch):
        ckpt, status = ex.ensure_trained(str(tmp_path), "hold_c4", 0.0, 0,
                                         TINY)
        assert status == "ok"
        assert (tmp_path / "checkpoints"
                / "hold_c4_cdr0.00_seed0.ckpt").exists()

        # a second call must hit the cache, never the trainer
        def boom(*a, **k):
            raise AssertionError("trainer invoked despite cached checkpoint")

        monkeypatch.setattr(ex, "SACTrainer", boom)
        again, status2 = ex.ensure_trained(str(tmp_path), "hold_c4", 0.0, 0,
                                           TINY)
        assert status2 == "ok"
        assert again == ckpt

    def test_missing_without_training_allowed(self, tmp_path):
        ckpt, status = ex.ensure_trained(str(tmp_path), "hold_c4", 0.0, 0,
                                         TINY, train_if_missing=False)
        assert ckpt is None and status == "missing"

    def test_divergence_reports_failed(self, tmp_path, monkeypatch):
        class Diverges:
            def __init__(self, *a, **k):
                pass

            def train(self, config_hash=""):
                raise TrainingDiverged("forced")

        monkeypatch.setattr(ex, "SACTrainer", Diverges)
        ckpt, status = ex.ensure_trained(str(tmp_path), "hold_c4", 0.0, 0,
                                         TINY)
        assert ckpt is None and status == "failed"


class TestSongSuite:
    def test_row_counts_and_sides(self, suite):
        _, _, rows, missing = suite
        assert missing == []
        assert len(rows) == 3  # 1 sim + 2 plant runs
        assert [r["side"] for r in rows] == ["sim", "plant", "plant"]
        assert [r["run"] for r in rows] == [0, 1, 2]

    def test_csv_schema_and_round_trip(self, suite):
        _, path, rows, _ = suite
        back = ex.read_rows(path)
        assert len(back) == len(rows)
        for r in back:
            assert tuple(r.keys()) == ex.RESULT_COLUMNS
            assert 0.0 <= float(r["f1"]) <= 1.0
            assert r["status"] == "ok"

    def test_reproducibility_chain_populated(self, suite):
        _, _, rows, _ = suite
        for r in rows:
            int(r["config_hash"], 16)
            int(r["dr_params_hash"], 16)
            assert r["code_version"]

    def test_plot_written(self, suite):
        out, _, _, _ = suite
        svg = (out / "song_suite.svg").read_text(encoding="utf-8")
        assert "<svg" in svg

    def test_rerun_reuses_checkpoints_and_reproduces_csv(self, suite,
                                                         monkeypatch):
        out, path, _, _ = suite
        monkeypatch.setattr(ex, "SACTrainer",
                            lambda *a, **k: pytest.fail("retrained"))
        first = open(path, encoding="utf-8").read()
        path2, _, _ = ex.run_song_suite(str(out), songs=("hold_c4",),
                                        seeds=(0,), runs=2, run_cfg=TINY)
        assert open(path2, encoding="utf-8").read() == first

    def test_missing_checkpoints_listed_but_not_fatal(self, tmp_path):
        path, rows, missing = ex.run_song_suite(
            str(tmp_path), songs=("hold_c4",), seeds=(0, 1), runs=1,
            run_cfg=TINY, train_if_missing=False)
        assert [m[:2] for m in missing] == [("hold_c4", 0), ("hold_c4", 1)]
        assert all(r["status"] == "missing" for r in rows)
        assert (tmp_path / "song_suite.csv").exists()


class TestModeAblation:
    def test_grid_complete_with_divergence_column(self, tmp_path):
        path, rows, missing = ex.run_mode_ablation(
            str(tmp_path), songs=("hold_c4",), modes=("mirror", "hybrid"),
            seeds=(0,), runs=1, run_cfg=TINY)
        assert missing == []
        cells = {(r["song"], r["mode"], r["side"]) for r in rows}
        assert cells == {("hold_c4", "mirror", "sim"),
                         ("hold_c4", "mirror", "plant"),
                         ("hold_c4", "hybrid", "sim"),
                         ("hold_c4", "hybrid", "plant")}
        for r in rows:
            assert int(r["divergence_steps"]) >= 0
        assert (tmp_path / "mode_ablation.svg").exists()

    def test_real_mode_uses_moderate_dr_checkpoint(self, tmp_path):
        ex.run_mode_ablation(str(tmp_path), songs=("hold_c4",),
                             modes=("real",), seeds=(0,), runs=1,
                             run_cfg=TINY, real_mode_cdr=0.3)
        assert (tmp_path / "checkpoints"
                / "hold_c4_cdr0.30_seed0.ckpt").exists()


class TestDRSweep:
    def test_grid_is_the_eleven_point_lattice(self):
        assert ex.dr_sweep_grid() == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5,
                                      0.6, 0.7, 0.8, 0.9, 1.0]

    def test_run_schedule_matches_band_structure(self):
        schedule = [ex.dr_sweep_run_count(i) for i in range(11)]
        assert schedule == [3, 3, 5, 7, 7, 7, 7, 7, 5, 3, 3]
        assert min(schedule) >= 3

    def test_two_cell_sweep_emits_rows_and_plot(self, tmp_path):
        path, rows = ex.run_dr_sweep(str(tmp_path), song_name="hold_c4",
                                     run_cfg=TINY, grid=[0.0, 1.0],
                                     run_counts=[1, 1])
        assert {float(r["c_dr"]) for r in rows} == {0.0, 1.0}
        # per cell: one seed -> sim row + one plant row
        assert len(rows) == 4
        assert (tmp_path / "dr_sweep.csv").exists()
        assert (tmp_path / "dr_sweep.svg").exists()

    def test_failed_training_recorded_not_fatal(self, tmp_path, monkeypatch):
        monkeypatch.setattr(ex, "ensure_trained",
                            lambda *a, **k: (None, "failed"))
        path, rows = ex.run_dr_sweep(str(tmp_path), song_name="hold_c4",
                                     run_cfg=TINY, grid=[0.0],
                                     run_counts=[2])
        assert [r["status"] for r in rows] == ["failed", "failed"]
        assert (tmp_path / "dr_sweep.csv").exists()


class TestSummarize:
    def rows(self):
        mk = lambda song, side, f1, status="ok": {
            "song": song, "mode": "hybrid", "c_dr": 0.0, "seed": 0,
            "run": 0, "side": side, "f1": f1, "status": status}
        return [mk("a", "sim", "0.5"), mk("a", "sim", "0.7"),
                mk("a", "plant", "0.2"),
                mk("a", "sim", "", status="missing"),
                mk("a", "sim", "0.99", status="failed"),
                mk("b", "sim", "1.0")]

    def test_against_statistics_oracle(self):
        out = ex.summarize(self.rows(), keys=("song", "side"))
        assert out[("a", "sim")]["n"] == 2
        assert out[("a", "sim")]["mean_f1"] == statistics.fmean([0.5, 0.7])
        assert out[("a", "sim")]["std_f1"] == statistics.pstdev([0.5, 0.7])
        assert out[("a", "plant")] == {"mean_f1": 0.2, "std_f1": 0.0, "n": 1}
        assert out[("b", "sim")]["mean_f1"] == 1.0

    def test_non_ok_rows_are_excluded(self):
        out = ex.summarize(self.rows(), keys=("song", "side"))
        vals = [v for k, v in out.items() if k == ("a", "sim")]
        assert vals[0]["n"] == 2  # the failed 0.99 row did not sneak in


class TestRowSerialization:
    def test_write_read_round_trip(self, tmp_path):
        row = ex._row("s", "hybrid", 0.5, 1, 2, "plant", None, "micro",
                      3, "missing", "cafe", "beef", "v1")
        path = tmp_path / "rows.csv"
        ex.write_rows([row], path)
        back = ex.read_rows(path)
        assert len(back) == 1
        assert back[0]["f1"] == ""
        assert back[0]["divergence_steps"] == "3"
        assert back[0]["status"] == "missing"
