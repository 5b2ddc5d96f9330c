import json

import numpy as np
import pytest

from evinterp import cli
from evinterp.errors import NumericalError
from evinterp.formats import load_events, load_frames
from evinterp.spline import load_spline


@pytest.fixture(scope="module")
def recording(tmp_path_factory):
    root = tmp_path_factory.mktemp("rec")
    code = cli.main(["--seed", "2", "simulate", "--size", "32", "--num-frames", "3", "--substeps", "8",
                     "--out-frames", str(root / "frames"), "--out-events", str(root / "ev.evs")])
    assert code == 0
    return root


def data(rec):
    return ["--frames", str(rec / "frames"), "--events", str(rec / "ev.evs")]


class TestCommands:
    def test_simulate_outputs(self, recording):
        frames = load_frames(recording / "frames")
        ev = load_events(recording / "ev.evs")
        assert len(frames) == 3 and (ev.width, ev.height) == (32, 32) and len(ev) > 0

    def test_simulate_from_dense_input(self, recording, tmp_path):
        code = cli.main(["simulate", "--input", str(recording / "frames"), "--stride", "2",
                         "--out-frames", str(tmp_path / "f"), "--out-events", str(tmp_path / "e.csv")])
        assert code == 0 and len(load_frames(tmp_path / "f")) == 2

    def test_voxelize(self, recording, tmp_path):
        assert cli.main(["voxelize", "--events", str(recording / "ev.evs"), "--bins", "3",
                         "--out", str(tmp_path / "v.npy")]) == 0
        assert np.load(tmp_path / "v.npy").shape == (3, 32, 32)

    def test_align(self, recording, capsys):
        assert cli.main(["align", *data(recording), "--radius", "3"]) == 0
        assert capsys.readouterr().out.split() == ["0", "0"]

    def test_estimate(self, recording, tmp_path, capsys):
        cfg = tmp_path / "est.cfg"
        cfg.write_text("levels = 3\niterations = 50\n")
        assert cli.main(["--config", str(cfg), "estimate", *data(recording), "--K", "5",
                         "--out", str(tmp_path / "s.spl")]) == 0
        assert load_spline(tmp_path / "s.spl").K == 5

    def test_interpolate_reports_scores(self, recording, tmp_path, capsys):
        out = tmp_path / "out"
        assert cli.main(["--threads", "2", "interpolate", *data(recording), "--skip", "1",
                         "--with-keyframes", "--out", str(out)]) == 0
        assert "keyframe average" in capsys.readouterr().out
        assert len(load_frames(out)) == 3

    def test_interpolate_gated_with_gates(self, recording, tmp_path):
        gates = tmp_path / "g.csv"
        assert cli.main(["interpolate", *data(recording), "--N", "2", "--fusion", "gated",
                         "--align", "2", "--gate-csv", str(gates), "--out", str(tmp_path / "o")]) == 0
        lines = gates.read_text().splitlines()
        assert lines[0] == "scale,source,mean_gate" and len(lines) > 1

    def test_metrics(self, recording, tmp_path, capsys):
        assert cli.main(["metrics", "--pred", str(recording / "frames"), "--gt", str(recording / "frames"),
                         "--json", str(tmp_path / "m.json")]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "t_us,psnr_db,ssim" and out[1].endswith(",inf,1.000000")
        assert json.loads((tmp_path / "m.json").read_text())["frames"] == 3

    def test_benchmark(self, recording, tmp_path, capsys):
        assert cli.main(["benchmark", *data(recording), "--N", "1", "2", "--methods", "spline",
                         "--repeats", "1", "--warmup", "0", "--csv", str(tmp_path / "b.csv")]) == 0
        assert (tmp_path / "b.csv").read_text().startswith("method,N,total_ms,per_frame_ms")


class TestExitCodes:
    def test_missing_file(self, tmp_path, capsys):
        assert cli.main(["voxelize", "--events", str(tmp_path / "nope.evs"), "--out", "x.npy"]) == 2
        assert "error" in capsys.readouterr().err

    def test_bad_input(self, recording, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t_us,x,y,p\n5,0,0,1\n3,0,0,1\n")
        assert cli.main(["voxelize", "--events", str(bad), "--out", str(tmp_path / "v.npy")]) == 2
        assert cli.main(["align", *data(recording), "--index", "5"]) == 2

    def test_numerical_failure(self, recording, tmp_path, monkeypatch):
        def fail(*args, **kwargs):
            raise NumericalError("singular system")
        monkeypatch.setattr(cli, "estimate_spline_motion", fail)
        assert cli.main(["estimate", *data(recording), "--out", str(tmp_path / "s.spl")]) == 3

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["interpolate"])
        assert exc.value.code == 2
