"""CLI integration tests (in-process through main)."""

import json

import numpy as np
import pytest
import torch

from illm.cli import main
from illm.codec import CodecConfig, HyperpriorCodec, save_checkpoint
from illm.errors import ConfigError
from illm.metrics import load_image, save_image

TINY = CodecConfig(latent_channels=16, hyper_channels=8, base_channels=16)


@pytest.fixture
def tiny_ckpt(tmp_path):
    torch.manual_seed(0)
    codec = HyperpriorCodec(TINY).eval()
    path = tmp_path / "codec.pt"
    save_checkpoint(path, codec, "codec")
    return path, codec


@pytest.fixture
def png(tmp_path, texture_set):
    img = texture_set(1, 64, seed=0)[0].permute(1, 2, 0).numpy()
    path = tmp_path / "input.png"
    save_image(path, img)
    return path


class TestCompressDecompress:
    def test_roundtrip(self, tmp_path, tiny_ckpt, png):
        ckpt, codec = tiny_ckpt
        out = tmp_path / "out.illm"
        dec = tmp_path / "roundtrip.png"
        assert main(["compress", "-i", str(png), "-o", str(out), "--ckpt", str(ckpt)]) == 0
        assert main(["decompress", "-i", str(out), "-o", str(dec), "--ckpt", str(ckpt)]) == 0
        # PNG stores 8-bit pixels: compare against the rounded direct path
        direct = codec.decompress(codec.compress(load_image(png)))
        expected = np.round(np.clip(direct, 0, 1) * 255).astype(np.uint8)
        got = (load_image(dec) * 255).round().astype(np.uint8)
        assert np.array_equal(got, expected)

    def test_missing_checkpoint(self, tmp_path, png):
        rc = main(
            ["compress", "-i", str(png), "-o", str(tmp_path / "x.illm"), "--ckpt", str(tmp_path / "nope.pt")]
        )
        assert rc != 0

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as err:
            main(["compress", "--frobnicate"])
        assert err.value.code != 0


class TestEvalAndPlot:
    @pytest.fixture
    def dataset(self, tmp_path, texture_set):
        d = tmp_path / "data"
        d.mkdir()
        for i, img in enumerate(texture_set(4, 64, seed=2)):
            save_image(d / f"im{i}.png", img.permute(1, 2, 0).numpy())
        return d

    def test_eval_writes_report(self, tmp_path, tiny_ckpt, dataset):
        ckpt, _ = tiny_ckpt
        report = tmp_path / "report.json"
        rc = main(["eval", "--dataset", str(dataset), "--ckpt", str(ckpt), "--report", str(report)])
        assert rc == 0
        payload = json.loads(report.read_text())
        assert "aggregate" in payload and payload["aggregate"]["mean_bpp"] > 0

    def _fake_report(self, path, codec_id, points):
        reports = []
        for bpp, fid_v in points:
            reports.append(
                {
                    "schema_version": 1,
                    "codec_id": codec_id,
                    "dataset_id": "toy",
                    "per_image": [],
                    "skipped": [],
                    "aggregate": {
                        "fid": fid_v,
                        "kid_mean": fid_v / 100,
                        "kid_std": 0.0,
                        "mean_bpp": bpp,
                        "mean_psnr": 30 - fid_v,
                        "mean_ms_ssim": 0.9,
                    },
                }
            )
        path.write_text(json.dumps(reports if len(reports) > 1 else reports[0]))

    def test_plot_polyline_and_determinism(self, tmp_path):
        r1 = tmp_path / "a.json"
        r2 = tmp_path / "b.json"
        self._fake_report(r1, "codec-a", [(0.1, 8.0), (0.2, 5.0), (0.4, 3.0)])
        self._fake_report(r2, "codec-b", [(0.15, 7.0), (0.3, 4.0)])
        out = tmp_path / "curves.svg"
        assert main(["plot", "--reports", str(r1), str(r2), "--out", str(out)]) == 0
        first = out.read_bytes()
        assert first.startswith(b"<?xml")
        assert main(["plot", "--reports", str(r1), str(r2), "--out", str(out)]) == 0
        assert out.read_bytes() == first

    def test_plot_disjoint_metrics_warns(self, tmp_path, capsys):
        r1 = tmp_path / "a.json"
        self._fake_report(r1, "codec-a", [(0.1, 8.0)])
        payload = json.loads(r1.read_text())
        del payload["aggregate"]["fid"]
        r2 = tmp_path / "b.json"
        payload["codec_id"] = "codec-b"
        r2.write_text(json.dumps(payload))
        out = tmp_path / "c.svg"
        with pytest.warns(UserWarning):
            assert main(["plot", "--reports", str(r1), str(r2), "--out", str(out)]) == 0
        assert "fid" in capsys.readouterr().err


class TestTrainCli:
    def _config(self, tmp_path, data_dir, extra=""):
        cfg = tmp_path / "run.ini"
        cfg.write_text(
            f"""
[train]
data_dir = {data_dir}
out_dir = {tmp_path / 'runs'}
steps = 3
warmup_steps = 1
batch_size = 2
crop_size = 64
latent_channels = 16
hyper_channels = 8
base_channels = 16
codebook_size = 8
embed_dim = 8
labeler_base_channels = 8
disc_base_channels = 8
use_perceptual = false
checkpoint_every = 1000
{extra}
"""
        )
        return cfg

    @pytest.fixture
    def data_dir(self, tmp_path, texture_set):
        d = tmp_path / "data"
        d.mkdir()
        for i, img in enumerate(texture_set(4, 64, seed=3)):
            save_image(d / f"im{i}.png", img.permute(1, 2, 0).numpy())
        return d

    def test_full_pipeline(self, tmp_path, data_dir):
        cfg = self._config(tmp_path, data_dir)
        assert main(["train", "--config", str(cfg), "--stage", "1"]) == 0
        runs = tmp_path / "runs"
        assert (runs / "codec_stage1.pt").exists()
        assert (runs / "stage1_metrics.jsonl").read_text().strip()

        assert main(["train", "--config", str(cfg), "--stage", "labeler"]) == 0
        assert (runs / "labeler_stagelabeler.pt").exists()

        cfg2 = self._config(
            tmp_path,
            data_dir,
            extra=(
                f"codec_ckpt = {runs / 'codec_stage1.pt'}\n"
                f"labeler_ckpt = {runs / 'labeler_stagelabeler.pt'}\n"
            ),
        )
        assert main(["train", "--config", str(cfg2), "--stage", "2"]) == 0
        metrics = [
            json.loads(line)
            for line in (runs / "stage2_metrics.jsonl").read_text().splitlines()
        ]
        assert all("loss_d" in m and "loss_g_adv" in m for m in metrics)

    def test_stage2_requires_checkpoint(self, tmp_path, data_dir):
        cfg = self._config(tmp_path, data_dir)
        assert main(["train", "--config", str(cfg), "--stage", "2"]) != 0

    def test_unknown_config_key_rejected(self, tmp_path, data_dir):
        cfg = self._config(tmp_path, data_dir, extra="turbo_mode = yes\n")
        assert main(["train", "--config", str(cfg), "--stage", "1"]) != 0


class TestConfig:
    def test_unknown_section(self, tmp_path):
        from illm.config import parse_config

        path = tmp_path / "c.ini"
        path.write_text("[mystery]\nx = 1\n")
        with pytest.raises(ConfigError):
            parse_config(path)

    def test_type_conversion(self, tmp_path):
        from illm.config import parse_config

        path = tmp_path / "c.ini"
        path.write_text("[train]\nsteps = 50\nuse_perceptual = false\nlambda_adv = 0.016\n")
        cfg = parse_config(path)["train"]
        assert cfg["steps"] == 50 and cfg["use_perceptual"] is False
        assert cfg["lambda_adv"] == 0.016
        # defaults fill the rest
        assert cfg["rate_preset"] == "bpp0.14"
