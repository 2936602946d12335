import pytest

from src.cli.gradcheck_suite import run_suite
from src.cli.main import EXIT_CHECK, EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from src.dataio import load_dataset
from src.dataio.dataset import MANIFEST_NAME
from src.eval import read_report, read_trajectory

TINY_CONFIG = """\
# matches the tiny test dataset
input_size = 32
stage_channels = 4,4,6,6,8
head_hidden = 8
batch = 2
segment_length = 4
dropout = 0
log_every = 1000
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(TINY_CONFIG)
    return path


class TestGenerate:

    def test_writes_dataset(self, tmp_path, capsys):
        out = tmp_path / "ds"
        code = main(["generate", "--out", str(out), "--frames", "16", "--loops", "2", "--size", "32",
                     "--workers", "1"])
        assert code == EXIT_OK
        index = load_dataset(out)
        assert len(index) == 16
        assert index.sequence_names("test") == ["seq-01"]
        assert "test      : seq-01" in capsys.readouterr().out

    @pytest.mark.parametrize(
        "args",
        [
            ["--frames", "0"],
            ["--frames", "15", "--loops", "2"],
            ["--size", "48"],
            ["--loops", "0"],
        ],
    )
    def test_rejects_bad_arguments(self, tmp_path, args):
        assert main(["generate", "--out", str(tmp_path / "ds"), *args]) == EXIT_USAGE


class TestTrainAndEval:

    def test_seg_stage_then_eval(self, tiny_dataset_dir, config_file, tmp_path, capsys):
        runs = tmp_path / "runs"
        code = main(["train", "--dataset", str(tiny_dataset_dir), "--task", "seg", "--steps", "1",
                     "--config", str(config_file), "--out", str(runs)])
        assert code == EXIT_OK
        assert (runs / "model-seg.npz").exists()

        report_path = tmp_path / "seg-report.yaml"
        code = main(["eval", "--dataset", str(tiny_dataset_dir), "--model", str(runs / "model-seg.npz"),
                     "--report", str(report_path)])
        assert code == EXIT_OK
        report = read_report(report_path)
        assert report["task"] == "seg"
        assert report["median_translation"] is None
        assert 0.0 <= report["mean_iou"] <= 1.0
        assert not (tmp_path / "seg-report-trajectory.csv").exists()
        assert "mean_iou" in capsys.readouterr().out

    def test_joint_from_scratch_then_plot(self, tiny_dataset_dir, config_file, tmp_path):
        runs = tmp_path / "runs"
        code = main(["train", "--dataset", str(tiny_dataset_dir), "--task", "joint", "--steps", "1",
                     "--config", str(config_file), "--out", str(runs), "--from-scratch"])
        assert code == EXIT_OK

        report_path = tmp_path / "report.yaml"
        code = main(["eval", "--dataset", str(tiny_dataset_dir), "--model", str(runs / "model-joint.npz"),
                     "--report", str(report_path)])
        assert code == EXIT_OK
        csv_path = tmp_path / "report-trajectory.csv"
        assert len(read_trajectory(csv_path)) == 8
        assert (tmp_path / "report-trajectory.svg").exists()

        svg = tmp_path / "again.svg"
        assert main(["plot", "--trajectory", str(csv_path), "--out", str(svg)]) == EXIT_OK
        assert svg.exists()

    def test_oracle_eval(self, tiny_dataset_dir, tmp_path):
        report_path = tmp_path / "oracle.yaml"
        code = main(["eval", "--dataset", str(tiny_dataset_dir), "--oracle", "--report", str(report_path)])
        assert code == EXIT_OK
        report = read_report(report_path)
        assert report["median_translation"] == 0.0
        assert report["accuracy_5cm5deg"] == 1.0
        assert report["vo_translational_drift"] == 0.0
        assert report["mean_iou"] == 1.0

    def test_eval_needs_a_model(self, tiny_dataset_dir, tmp_path):
        assert main(["eval", "--dataset", str(tiny_dataset_dir), "--report", str(tmp_path / "r.yaml")]) == EXIT_USAGE

    def test_joint_needs_checkpoints(self, tiny_dataset_dir, config_file, tmp_path):
        code = main(["train", "--dataset", str(tiny_dataset_dir), "--task", "joint", "--steps", "1",
                     "--config", str(config_file), "--out", str(tmp_path / "runs")])
        assert code == EXIT_USAGE

    def test_malformed_config(self, tiny_dataset_dir, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("batch = lots\n")
        code = main(["train", "--dataset", str(tiny_dataset_dir), "--task", "seg", "--steps", "1",
                     "--config", str(bad), "--out", str(tmp_path / "runs")])
        assert code == EXIT_USAGE

    def test_config_not_matching_dataset(self, tiny_dataset_dir, tmp_path):
        code = main(["train", "--dataset", str(tiny_dataset_dir), "--task", "seg", "--steps", "1",
                     "--out", str(tmp_path / "runs")])
        assert code == EXIT_USAGE

    def test_broken_manifest_is_a_data_error(self, tmp_path):
        ds = tmp_path / "ds"
        ds.mkdir()
        (ds / MANIFEST_NAME).write_text("format: vloc-dataset\nversion: 99\n")
        code = main(["eval", "--dataset", str(ds), "--oracle", "--report", str(tmp_path / "r.yaml")])
        assert code == EXIT_DATA


class TestGradcheck:

    def test_suite_passes(self, capsys):
        assert main(["gradcheck", "--skip-model"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "primitives" in out
        assert "losses" in out

    def test_injected_fault_fails(self, capsys):
        assert main(["gradcheck", "--skip-model", "--inject-fault"]) == EXIT_CHECK
        assert "injected_wrong_backward" in capsys.readouterr().err

    @pytest.mark.slow
    def test_default_run_includes_joint_model(self, capsys):
        assert main(["gradcheck"]) == EXIT_OK
        assert "model" in capsys.readouterr().out

    @pytest.mark.slow
    def test_joint_model_matches_finite_differences(self):
        report = run_suite(include_model=True)
        assert "model" in report.group_max()
        assert report.failures() == []
