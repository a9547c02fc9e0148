import json

import pytest

from triloop.cli import main
from triloop.evaluation import read_records_csv
from triloop.pipeline import PipelineConfig
from triloop.synthetic import write_sequence, yaw_pose

from worlds import CROP_RANGE, loop_trajectory, main_world


@pytest.fixture(scope="module")
def world():
    return main_world(jitter=0.01)


def write_config(path, **overrides):
    cfg = PipelineConfig(
        n_accumulate=5, skip_recent=2, gt_radius=12.0, **overrides
    )
    cfg.write(path)
    return cfg


@pytest.fixture(scope="module")
def loop_run(tmp_path_factory, world):
    """One 30-scan out-and-back run through the CLI, reused by several tests."""
    base = tmp_path_factory.mktemp("loop_run")
    poses = loop_trajectory(spacing=1.5)[:30]  # 15 out, 15 back
    scan_dir, pose_file = write_sequence(base, world, poses, max_range=CROP_RANGE)
    cfg_path = base / "run.cfg"
    write_config(cfg_path)
    out_dir = base / "out"
    code = main(
        ["run", "--config", str(cfg_path), "--scans", str(scan_dir),
         "--poses", str(pose_file), "--out", str(out_dir)]
    )
    assert code == 0
    return base, scan_dir, pose_file, cfg_path, out_dir


class TestRun:
    def test_loop_trajectory_detects_revisit_accurately(self, loop_run):
        _, _, _, _, out_dir = loop_run
        records = read_records_csv(out_dir / "records.csv")
        assert len(records) == 6
        detections = [r for r in records if r.detected_id is not None]
        assert detections, "loop trajectory must produce at least one detection"
        for r in detections:
            assert r.trans_err_m < 0.1
            assert r.rot_err_deg < 0.5

    def test_outputs_complete(self, loop_run):
        _, _, _, _, out_dir = loop_run
        for name in ("records.csv", "timings.csv", "gt.csv", "pr.csv", "summary.json"):
            assert (out_dir / name).exists()
        summary = json.loads((out_dir / "summary.json").read_text())
        assert summary["n_keyframes"] == 6
        assert summary["n_detections"] >= 1
        assert summary["fp"] == 0

    def test_summary_latency_totals_match_records(self, loop_run):
        _, _, _, _, out_dir = loop_run
        summary = json.loads((out_dir / "summary.json").read_text())
        timings = (out_dir / "timings.csv").read_text().splitlines()[1:]
        for column, stage in ((1, "extract"), (2, "query"), (3, "verify")):
            total = sum(float(line.split(",")[column]) for line in timings)
            assert abs(summary["stage_ms"][stage]["total"] - total) < 1.0

    def test_deterministic_outputs(self, loop_run):
        base, scan_dir, pose_file, cfg_path, out_dir = loop_run
        rerun = base / "out2"
        code = main(
            ["run", "--config", str(cfg_path), "--scans", str(scan_dir),
             "--poses", str(pose_file), "--out", str(rerun)]
        )
        assert code == 0
        for name in ("records.csv", "pr.csv", "gt.csv"):
            assert (out_dir / name).read_bytes() == (rerun / name).read_bytes()

    def test_downsample_leaf_flag_overrides_config(self, tmp_path, world):
        poses = [yaw_pose(6.0 + 1.5 * i, 9.0, 1.5, 0.0) for i in range(5)]
        scan_dir, pose_file = write_sequence(tmp_path, world, poses, max_range=CROP_RANGE)
        cfg_path = tmp_path / "run.cfg"
        write_config(cfg_path)  # file says 0.25
        for leaf in ("0.6", "0"):  # 0 disables pre-extraction downsampling
            out_dir = tmp_path / f"out_{leaf}"
            code = main(
                ["run", "--config", str(cfg_path), "--scans", str(scan_dir),
                 "--poses", str(pose_file), "--out", str(out_dir),
                 "--downsample-leaf", leaf]
            )
            assert code == 0
            summary = json.loads((out_dir / "summary.json").read_text())
            assert summary["config"]["downsample_leaf"] == float(leaf)

    def test_no_revisit_means_no_detections(self, tmp_path, world):
        poses = [yaw_pose(6.0 + 1.5 * i, 9.0, 1.5, 0.0) for i in range(15)]
        scan_dir, pose_file = write_sequence(tmp_path, world, poses, max_range=CROP_RANGE)
        cfg_path = tmp_path / "run.cfg"
        write_config(cfg_path)
        out_dir = tmp_path / "out"
        code = main(
            ["run", "--config", str(cfg_path), "--scans", str(scan_dir),
             "--poses", str(pose_file), "--out", str(out_dir)]
        )
        assert code == 0
        records = read_records_csv(out_dir / "records.csv")
        assert all(r.detected_id is None for r in records)


class TestSweep:
    def test_sweep_from_saved_records(self, loop_run):
        base, _, _, _, out_dir = loop_run
        out_csv = base / "pr_fine.csv"
        code = main(
            ["sweep", "--records", str(out_dir / "records.csv"),
             "--gt", str(out_dir / "gt.csv"), "--out", str(out_csv),
             "--grid", "0.05:0.95:0.05"]
        )
        assert code == 0
        lines = out_csv.read_text().splitlines()
        assert lines[0] == "sigma_pc,tp,fp,fn,precision,recall"
        assert len(lines) == 1 + 19

    def test_bad_grid_is_config_error(self, loop_run):
        base, _, _, _, out_dir = loop_run
        code = main(
            ["sweep", "--records", str(out_dir / "records.csv"),
             "--gt", str(out_dir / "gt.csv"), "--out", str(base / "x.csv"),
             "--grid", "zebra"]
        )
        assert code == 2


class TestExitCodes:
    def test_missing_scan_dir_is_io_error(self, tmp_path):
        cfg_path = tmp_path / "run.cfg"
        write_config(cfg_path)
        (tmp_path / "poses.txt").write_text("")
        code = main(
            ["run", "--config", str(cfg_path), "--scans", str(tmp_path / "nope"),
             "--poses", str(tmp_path / "poses.txt"), "--out", str(tmp_path / "out")]
        )
        assert code == 3

    def test_bad_config_is_config_error(self, tmp_path, world):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text("nonsense = 1\n")
        poses = [yaw_pose(6.0 + i, 9.0, 1.5, 0.0) for i in range(3)]
        scan_dir, pose_file = write_sequence(tmp_path, world, poses)
        code = main(
            ["run", "--config", str(cfg_path), "--scans", str(scan_dir),
             "--poses", str(pose_file), "--out", str(tmp_path / "out")]
        )
        assert code == 2

    def test_pose_count_mismatch_is_config_error(self, tmp_path, world):
        poses = [yaw_pose(6.0 + i, 9.0, 1.5, 0.0) for i in range(3)]
        scan_dir, pose_file = write_sequence(tmp_path, world, poses)
        lines = pose_file.read_text().splitlines()
        pose_file.write_text("\n".join(lines[:2]) + "\n")
        code = main(
            ["run", "--scans", str(scan_dir), "--poses", str(pose_file),
             "--out", str(tmp_path / "out")]
        )
        assert code == 2

    def test_empty_scan_file_is_io_error(self, tmp_path, world):
        poses = [yaw_pose(6.0 + i, 9.0, 1.5, 0.0) for i in range(3)]
        scan_dir, pose_file = write_sequence(tmp_path, world, poses)
        (scan_dir / "000001.bin").write_bytes(b"")
        code = main(
            ["run", "--scans", str(scan_dir), "--poses", str(pose_file),
             "--out", str(tmp_path / "out")]
        )
        assert code == 3
