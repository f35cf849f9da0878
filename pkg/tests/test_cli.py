"""
Tests for the ``bcpnet`` command line.

These tests verify:
- Exit codes: 0 success, 1 numeric failure, 2 usage or configuration error
- analyze text and JSON output
- gradcheck, bench and ablate on a tiny configuration, including seed sweeps
- train-toy artefacts, determinism, class count from the config and inference from its weights
"""

import numpy as np
import orjson
import pytest
from PIL import Image

from bcpnet.cli import main
from bcpnet.exceptions import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE

TINY_CONFIG = """\
num_classes = 3
fusion_width = 8
dtype = float64
stem_channels = 8
stages = 8:1:1,8:1:2,8:2:2,8:1:2,8:1:2
expansion = 2
width_mult = 1.0
init_lr = 0.01
total_iter = 2
batch = 1
crop = 32x32
eval_samples = 1
log_every = 1
"""


@pytest.fixture
def tiny_cfg(tmp_path, monkeypatch):
    for key in ("BCPNET_SEED", "BCPNET_NUM_CLASSES", "BCPNET_DTYPE"):
        monkeypatch.delenv(key, raising=False)
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG)
    return str(path)


@pytest.fixture
def scene_png(tmp_path):
    path = tmp_path / "scene.png"
    pixels = np.random.default_rng(0).integers(0, 256, size=(32, 32, 3)).astype(np.uint8)
    Image.fromarray(pixels).save(path)
    return path


# ============================================================================
# Test: parsing and usage errors
# ============================================================================


class TestUsage:
    def test_no_command_prints_help(self, capsys):
        assert main([]) == EXIT_OK
        assert "usage: bcpnet" in capsys.readouterr().out

    def test_help(self):
        assert main(["analyze", "--help"]) == EXIT_OK

    def test_unknown_flag(self):
        assert main(["analyze", "--bogus"]) == EXIT_USAGE

    def test_malformed_resolution(self):
        assert main(["analyze", "--res", "128"]) == EXIT_USAGE

    def test_infer_needs_input(self):
        assert main(["infer"]) == EXIT_USAGE

    def test_infer_needs_weights(self, scene_png, capsys):
        assert main(["infer", "--input", str(scene_png)]) == EXIT_USAGE
        assert "--weights is required" in capsys.readouterr().err

    def test_json_error_report(self, scene_png, capsys):
        assert main(["infer", "--input", str(scene_png), "--json"]) == EXIT_USAGE
        payload = orjson.loads(capsys.readouterr().err)
        assert payload["error"] == "UsageError"
        assert payload["exit_code"] == EXIT_USAGE

    def test_bad_config_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("sead = 1\n")
        assert main(["analyze", "-c", str(path), "--res", "64x64"]) == EXIT_USAGE

    def test_missing_config(self, tmp_path):
        assert main(["analyze", "-c", str(tmp_path / "absent.cfg")]) == EXIT_USAGE

    def test_bench_iteration_floor(self, tiny_cfg):
        assert main(["bench", "-c", tiny_cfg, "--res", "32x32", "--warmup", "1", "--iters", "5"]) == EXIT_USAGE


# ============================================================================
# Test: analyze
# ============================================================================


class TestAnalyze:
    def test_csv_and_table(self, capsys):
        assert main(["analyze", "--res", "64x64"]) == EXIT_OK
        out = capsys.readouterr().out
        lines = out.splitlines()
        assert lines[0] == "h,w,params,macs,flops,other_ops"
        assert lines[1].startswith("64,64,617857,")
        assert "total 617857" in out

    def test_json(self, capsys):
        assert main(["analyze", "--res", "128x128", "--res", "128x256", "--json"]) == EXIT_OK
        payload = orjson.loads(capsys.readouterr().out)
        assert payload["params"]["total"] == 617857
        first, second = payload["resolutions"]
        assert second["macs"] == 2 * first["macs"]
        assert second["flops"] == 2 * second["macs"]
        assert payload["census"] is None

    def test_layers_and_census(self, capsys):
        assert main(["analyze", "--res", "64x64", "--layers", "--census"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "# layers at 64x64" in out
        assert "layer,kind,out_shape,params,macs" in out
        assert "fusion sites 15" in out

    def test_csv_to_file(self, tmp_path, capsys):
        target = tmp_path / "reports" / "sweep.csv"
        assert main(["analyze", "--res", "64x64", "-o", str(target)]) == EXIT_OK
        assert target.read_text().startswith("h,w,params,macs,flops,other_ops\n")
        assert not capsys.readouterr().out.startswith("h,w")

    def test_classes_override(self, capsys):
        assert main(["analyze", "--res", "64x64", "--classes", "3", "--json"]) == EXIT_OK
        assert orjson.loads(capsys.readouterr().out)["params"]["head"] == 96 * 3 + 3


# ============================================================================
# Test: tiny-model commands
# ============================================================================


class TestTinyCommands:
    def test_gradcheck_passes(self, tiny_cfg, capsys):
        assert main(["gradcheck", "-c", tiny_cfg, "--res", "32x32"]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.splitlines()[0] == "slot,max_rel_error,skipped"
        assert "max relative error" in out

    def test_gradcheck_failure_exit_code(self, tiny_cfg):
        assert main(["gradcheck", "-c", tiny_cfg, "--res", "32x32", "--tol", "1e-300"]) == EXIT_NUMERIC

    def test_bench(self, tiny_cfg, capsys):
        assert main(["bench", "-c", tiny_cfg, "--res", "32x32", "--warmup", "1", "--iters", "10"]) == EXIT_OK
        assert capsys.readouterr().out.startswith("h,w,params,macs,median_ms,fps\n32,32,")

    def test_bench_json(self, tiny_cfg, capsys):
        assert main(["bench", "-c", tiny_cfg, "--res", "32x32", "--warmup", "1", "--iters", "10", "--json"]) == EXIT_OK
        payload = orjson.loads(capsys.readouterr().out)
        assert payload["results"][0]["resolution"] == [32, 32]
        assert len(payload["results"][0]["times_ms"]) == 10

    def test_ablate(self, tiny_cfg, capsys):
        assert main(["ablate", "-c", tiny_cfg, "--iters", "1"]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "variant,params,final_miou"
        assert [line.split(",")[0] for line in lines[1:]] == ["baseline", "max3", "avg3", "max5"]

    def test_ablate_seed_sweep(self, tiny_cfg, capsys):
        assert main(["ablate", "-c", tiny_cfg, "--iters", "1", "--seeds", "0,1"]) == EXIT_OK
        captured = capsys.readouterr()
        lines = captured.out.splitlines()
        assert lines[0] == "variant,params,seed,final_miou"
        assert [tuple(line.split(",")[::2]) for line in lines[1:]] == [
            ("baseline", "0"),
            ("baseline", "1"),
            ("baseline", "median"),
            ("max3", "0"),
            ("max3", "1"),
            ("max3", "median"),
        ]
        assert "median mIoU with BCP" in captured.err

    def test_ablate_check_fails_below_threshold(self, tiny_cfg, capsys):
        argv = ["ablate", "-c", tiny_cfg, "--iters", "1", "--seeds", "0", "--check", "--threshold", "1.5"]
        assert main(argv) == EXIT_NUMERIC
        assert "FAIL: median mIoU with BCP" in capsys.readouterr().err

    def test_ablate_check_needs_seeds(self, tiny_cfg):
        assert main(["ablate", "-c", tiny_cfg, "--check"]) == EXIT_USAGE

    @pytest.mark.parametrize("seeds", ["a,b", "0,0"])
    def test_ablate_malformed_seeds(self, tiny_cfg, seeds):
        assert main(["ablate", "-c", tiny_cfg, "--seeds", seeds]) == EXIT_USAGE



class TestTrainToy:
    def test_artefacts(self, tiny_cfg, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["train-toy", "-c", tiny_cfg, "-o", str(out)]) == EXIT_OK
        assert capsys.readouterr().out.startswith("final mIoU ")
        assert (out / "weights.bcpw").read_bytes()[:4] == b"BCPW"
        history = (out / "history.csv").read_text().splitlines()
        assert history[0] == "iter,lr,loss"
        assert len(history) == 3
        evaluation = (out / "eval.csv").read_text().splitlines()
        assert [line.split(",")[0] for line in evaluation] == ["class", "background", "circle", "rectangle", "mean"]

    def test_deterministic(self, tiny_cfg, tmp_path):
        for name in ("a", "b"):
            assert main(["train-toy", "-c", tiny_cfg, "-o", str(tmp_path / name), "--seed", "3"]) == EXIT_OK
        for artefact in ("weights.bcpw", "history.csv", "eval.csv"):
            assert (tmp_path / "a" / artefact).read_bytes() == (tmp_path / "b" / artefact).read_bytes()

    def test_iters_override(self, tiny_cfg, tmp_path):
        assert main(["train-toy", "-c", tiny_cfg, "-o", str(tmp_path / "run"), "--iters", "1"]) == EXIT_OK
        assert len((tmp_path / "run" / "history.csv").read_text().splitlines()) == 2

    def test_config_class_count(self, tiny_cfg, tmp_path):
        path = tmp_path / "five.cfg"
        path.write_text(TINY_CONFIG.replace("num_classes = 3", "num_classes = 5"))
        assert main(["train-toy", "-c", str(path), "-o", str(tmp_path / "run"), "--iters", "1"]) == EXIT_OK
        evaluation = (tmp_path / "run" / "eval.csv").read_text().splitlines()
        assert [line.split(",")[0] for line in evaluation] == ["class", "background", "circle", "rectangle", "3", "4", "mean"]

    @pytest.mark.parametrize("command", ["train-toy", "ablate"])
    def test_fewer_classes_than_scenes(self, tiny_cfg, tmp_path, command, capsys):
        assert main([command, "-c", tiny_cfg, "--classes", "2", "-o", str(tmp_path / "run"), "--iters", "1"]) == EXIT_USAGE
        assert "synthetic scenes have 3 classes" in capsys.readouterr().err


    def test_infer_from_trained_weights(self, tiny_cfg, tmp_path, scene_png, capsys):
        run = tmp_path / "run"
        assert main(["train-toy", "-c", tiny_cfg, "-o", str(run), "--iters", "1"]) == EXIT_OK
        capsys.readouterr()
        labels = tmp_path / "pred.png"
        overlay = tmp_path / "overlay.png"
        argv = ["infer", "-c", tiny_cfg, "--weights", str(run / "weights.bcpw"), "-i", str(scene_png), "-o", str(labels), "--overlay", str(overlay)]
        assert main(argv) == EXIT_OK
        assert capsys.readouterr().out.strip() == str(labels)
        with Image.open(labels) as img:
            assert img.mode == "P" and img.size == (32, 32)
            assert np.asarray(img).max() < 3
        with Image.open(overlay) as img:
            assert img.size == (32, 32)

    def test_infer_rejects_mismatched_weights(self, tiny_cfg, tmp_path, scene_png):
        run = tmp_path / "run"
        assert main(["train-toy", "-c", tiny_cfg, "-o", str(run), "--iters", "1"]) == EXIT_OK
        assert main(["infer", "--weights", str(run / "weights.bcpw"), "-i", str(scene_png), "-o", str(tmp_path / "p.png")]) == EXIT_USAGE
