import filecmp
import subprocess
import sys

import numpy as np
import pytest

from tactigrasp import pnm
from tactigrasp.harness.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    pairs = dict(line.split(",", 1) for line in out.splitlines())
    return code, pairs, err


def write_frames(tmp_path, images, suffix=".ppm"):
    paths = []
    for i, img in enumerate(images):
        p = tmp_path / f"f{i}{suffix}"
        pnm.write(p, img)
        paths.append(p)
    return paths


def blob(dx):
    img = np.full((60, 60, 3), 60, np.uint8)
    img[20:40, 10 + dx : 30 + dx] = 200
    return img


def test_filter_on_identical_frames_is_black(tmp_path, capsys):
    frames = write_frames(tmp_path, [blob(0)] * 4)
    code, out, _ = run(capsys, "filter", *frames, "--out", tmp_path / "o")
    assert code == 0
    assert out["brightness"] == "0"
    assert not pnm.read(tmp_path / "o" / "psi.pgm").any()


def test_filter_on_moving_blob(tmp_path, capsys):
    frames = write_frames(tmp_path, [blob(0), blob(3), blob(6), blob(10)])
    code, out, _ = run(capsys, "--out", tmp_path / "o", "filter", *frames)
    assert code == 0
    psi = pnm.read(tmp_path / "o" / "psi.pgm")
    assert float(out["brightness"]) == pytest.approx(psi.mean(), rel=1e-5)
    assert float(out["brightness"]) > 10


def test_filter_accepts_grayscale_frames(tmp_path, capsys):
    frames = write_frames(tmp_path, [blob(0)[..., 0]] * 4, suffix=".pgm")
    code, out, _ = run(capsys, "filter", *frames, "--out", tmp_path)
    assert (code, out["brightness"]) == (0, "0")


def test_detect_slip_methods(tmp_path, capsys):
    frames = write_frames(tmp_path, [blob(0), blob(3), blob(6), blob(10)])
    code, out, _ = run(capsys, "detect-slip", *frames, "--out", tmp_path)
    assert (code, out["method"], out["label"]) == (0, "brightness", "1")
    code, out, _ = run(capsys, "detect-slip", *frames, "--threshold", 250, "--out", tmp_path)
    assert out["label"] == "0"
    scores = tmp_path / "s.csv"
    scores.write_text("image_id,score\nf3,0.7\n", encoding="utf-8")
    code, out, _ = run(capsys, "detect-slip", *frames, "--method", "cnn", "--scores", scores,
                       "--out", tmp_path)
    assert (code, out["value"], out["label"]) == (0, "0.7", "1")


def test_detect_slip_cnn_without_scores_is_usage_error(tmp_path, capsys):
    frames = write_frames(tmp_path, [blob(0)] * 4)
    code, _, err = run(capsys, "detect-slip", *frames, "--method", "cnn", "--out", tmp_path)
    assert code == 1 and "--scores" in err


def test_eval_metrics_prints_five_sixths(tmp_path, capsys):
    gt = tmp_path / "gt.csv"
    gt.write_text("image_id,class,confidence,x,y,w,h\nim,can,,0,0,10,10\nim,can,,20,0,10,10\n",
                  encoding="utf-8")
    pred = tmp_path / "pred.csv"
    pred.write_text("image_id,class,confidence,x,y,w,h\n"
                    "im,can,0.9,0,0,10,10\nim,can,0.8,50,50,10,10\nim,can,0.7,20,0,10,10\n",
                    encoding="utf-8")
    code, out, _ = run(capsys, "eval-metrics", "--gt", gt, "--pred", pred, "--out", tmp_path)
    assert code == 0
    assert out["AP50_all"] == "5/6,0.833333"
    assert {"AP75_all", "AP90_all", "AP50_can"} <= set(out)
    assert (tmp_path / "ap_report.csv").exists()


def test_eval_metrics_labels_and_recorded_tallies(tmp_path, capsys):
    labels = tmp_path / "l.csv"
    labels.write_text("true,predicted\n1,1\n0,0\n1,0\n0,0\n", encoding="utf-8")
    code, out, _ = run(capsys, "eval-metrics", "--labels", labels, "--recorded-tallies", "--out", tmp_path)
    assert code == 0
    assert out["accuracy"] == "0.750000"
    assert out["counts"] == "TP=1 TN=2 FP=0 FN=1"
    assert (out["csr_environment_tiled"], out["csr_environment_stone_soil"],
            out["csr_environment_grass"]) == ("0.80", "0.75", "0.85")
    assert (out["csr_class_cardboard"], out["csr_class_plastic"], out["csr_class_metal"],
            out["csr_class_glass"]) == ("0.93", "0.80", "0.87", "0.60")
    assert out["csr_first_attempt"] == "0.80"


def test_eval_metrics_confusion_for_classes(tmp_path, capsys):
    labels = tmp_path / "l.csv"
    labels.write_text("true,predicted\nplastic,glass\nglass,glass\n", encoding="utf-8")
    code, out, _ = run(capsys, "eval-metrics", "--labels", labels, "--out", tmp_path)
    assert (code, out["accuracy"]) == (0, "0.500000")
    rows = (tmp_path / "confusion.csv").read_text(encoding="utf-8").splitlines()
    assert rows == ["true\\predicted,glass,plastic", "glass,1,0", "plastic,1,0"]


def test_grasp_sim_script(tmp_path, capsys):
    script = tmp_path / "s.csv"
    script.write_text("score_A,score_B\n0.1,0.2\n0.9,0.1\n0.8,0.9\n", encoding="utf-8")
    code, out, _ = run(capsys, "grasp-sim", "--script", script, "--out", tmp_path)
    assert code == 0
    assert (out["outcome"], out["steps_taken"], out["final_step"]) == ("grasped", "2", "2")
    trace = (tmp_path / "trace.csv").read_text(encoding="utf-8").splitlines()
    assert trace[0] == "iteration,label_A,label_B,fused,gripper_step,event"
    assert len(trace) == 1 + 5


def test_release_sim_script(tmp_path, capsys):
    script = tmp_path / "s.csv"
    script.write_text("score_A,score_B\n0.9,0.9\n0.9,0.9\n0.1,0.1\n", encoding="utf-8")
    code, out, _ = run(capsys, "grasp-sim", "--task", "release", "--start-step", 100,
                       "--script", script, "--out", tmp_path)
    assert (code, out["outcome"], out["final_step"]) == (0, "released", "98")


def test_run_episode_twice_is_byte_identical(tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        code, out, _ = run(capsys, "run-episode", "--seed", 7, "--out", tmp_path / name)
        assert code == 0
        outs.append({k: v for k, v in out.items() if k != "out"})
    assert outs[0] == outs[1]
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert mismatch == [] and errors == []


def test_run_episode_with_config(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("environment: grass\nobject: {class: glass}\nfaults: {corrupt_mask: true}\n",
                   encoding="utf-8")
    code, out, _ = run(capsys, "--config", cfg, "run-episode", "--out", tmp_path / "o")
    assert (code, out["success"], out["failure_stage"]) == (0, "0", "detection")


def test_slip_accuracy_experiment(tmp_path, capsys):
    code, out, err = run(capsys, "experiment", "slip-accuracy", "--out", tmp_path)
    assert code == 0
    assert out["accuracy_A_T10"] == out["accuracy_B_T10"] == "1.000"
    assert out["false_positives_A_T10"] == "0"
    assert abs(float(out["accuracy_A_T15"]) - 0.911) <= 0.02
    assert "median_ms" in err
    assert (tmp_path / "slip_accuracy.csv").exists()


def test_slip_comp_experiment_with_figure(tmp_path, capsys):
    code, out, _ = run(capsys, "experiment", "slip-comp", "--seconds", 8, "--figures", "--out", tmp_path)
    assert code == 0
    assert (out["slip_events_on"], out["retained_on"], out["retained_off"]) == ("1", "1", "0")
    png = tmp_path / "lift_timeline.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    first = png.read_bytes()
    run(capsys, "experiment", "slip-comp", "--seconds", 8, "--figures", "--out", tmp_path)
    assert png.read_bytes() == first


def test_csr_figure_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        code, out, _ = run(capsys, "eval-metrics", "--recorded-tallies", "--figures", "--out", tmp_path / name)
        assert code == 0 and out["figure"].endswith("csr.png")
    assert (tmp_path / "a" / "csr.png").read_bytes() == (tmp_path / "b" / "csr.png").read_bytes()


@pytest.mark.parametrize("argv", [
    ["filter"],
    ["--bogus"],
    ["filter", "x.ppm", "--bogus"],
    ["experiment", "dance"],
    ["eval-metrics", "--thresholds", "0.5,2"],
])
def test_usage_errors_exit_one(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1


def test_eval_metrics_without_inputs_is_usage_error(capsys):
    code, _, _ = run(capsys, "eval-metrics")
    assert code == 1


def test_data_errors_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"P6\n2 2\n255\n\x00")
    assert run(capsys, "filter", bad, bad, bad, bad, "--out", tmp_path)[0] == 2
    assert run(capsys, "filter", tmp_path / "missing.ppm", "--out", tmp_path)[0] == 2
    mixed = write_frames(tmp_path, [blob(0), blob(0), blob(0), blob(0)[:50]])
    assert run(capsys, "filter", *mixed, "--out", tmp_path)[0] == 2
    gt = tmp_path / "gt.csv"
    gt.write_text("nope\n", encoding="utf-8")
    assert run(capsys, "eval-metrics", "--gt", gt, "--pred", gt, "--out", tmp_path)[0] == 2
    cfg = tmp_path / "c.yaml"
    cfg.write_text("colour: red\n", encoding="utf-8")
    assert run(capsys, "run-episode", "--config", cfg, "--out", tmp_path)[0] == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tactigrasp", "eval-metrics", "--recorded-tallies",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "csr_first_attempt,0.80" in proc.stdout.splitlines()
    proc = subprocess.run([sys.executable, "-m", "tactigrasp", "--nope"], capture_output=True, text=True)
    assert proc.returncode == 1
