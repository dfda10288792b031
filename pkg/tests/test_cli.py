import json
import os

import numpy as np
import pytest
from PIL import Image

from cirnas import cli


TINY_TOML = """\
batch_size = 2
patch_size = 16
iterations = 3
blocks = 1
channels = 8
controller_hidden = 8
corpus_size = 4
corpus_image_size = 16
seed = 0
"""


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.toml"
    cfg.write_text(TINY_TOML)
    ckpt = root / "search.ckpt"
    rc = cli.main(["train", "--config", str(cfg), "--checkpoint", str(ckpt)])
    assert rc == cli.EXIT_OK
    return ckpt


def write_pngs(directory, count=2, size=16, seed=0):
    os.makedirs(directory, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(count):
        arr = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
        Image.fromarray(arr).save(os.path.join(directory, f"img{i}.png"))


class TestParsers:
    def test_resolution(self):
        assert cli._parse_resolution("1280x720") == (720, 1280)
        with pytest.raises(Exception):
            cli._parse_resolution("1280")

    def test_triple(self):
        assert cli._parse_triple("0.1,0.2,0.3") == [0.1, 0.2, 0.3]
        with pytest.raises(Exception):
            cli._parse_triple("1,2")


class TestUsage:
    def test_no_command_is_usage_error(self):
        assert cli.main([]) == cli.EXIT_USAGE

    def test_help_exits_zero(self):
        assert cli.main(["--help"]) == 0

    def test_missing_file_is_data_error(self, tmp_path):
        rc = cli.main(["flops", "--checkpoint", str(tmp_path / "nope.ckpt")])
        assert rc == cli.EXIT_DATA


class TestDegrade:
    def test_writes_outputs_and_manifest(self, tmp_path):
        src = tmp_path / "src"
        dst = tmp_path / "dst"
        write_pngs(src, count=2)
        rc = cli.main(["degrade", "--in", str(src), "--out", str(dst),
                       "--levels", "2,25,0", "--seed", "1"])
        assert rc == cli.EXIT_OK
        assert sorted(os.listdir(dst)) == ["img0.png", "img1.png",
                                           "manifest.jsonl"]
        records = [json.loads(l) for l in
                   (dst / "manifest.jsonl").read_text().splitlines()]
        assert len(records) == 2
        np.testing.assert_allclose(records[0]["level_in"], [0.5, 0.5, 0.0])

    def test_empty_dir_is_data_error(self, tmp_path):
        src = tmp_path / "empty"
        src.mkdir()
        rc = cli.main(["degrade", "--in", str(src), "--out",
                       str(tmp_path / "o"), "--levels", "0,0,0"])
        assert rc == cli.EXIT_DATA


class TestFlops:
    def test_default_config_reproduces_published_total(self, capsys):
        rc = cli.main(["flops", "--resolution", "1280x720"])
        assert rc == cli.EXIT_OK
        out = capsys.readouterr().out
        report = json.loads(out.strip().splitlines()[-1])
        assert abs(report["flops_first"] - 1124.3e9) / 1124.3e9 < 0.05
        assert "FLOPs first (G)" in out

    def test_checkpoint_mode(self, tiny_checkpoint, capsys):
        rc = cli.main(["flops", "--checkpoint", str(tiny_checkpoint),
                       "--resolution", "16x16"])
        assert rc == cli.EXIT_OK
        report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert report["epsilon"] > 0


class TestExtract:
    def test_task_extraction(self, tiny_checkpoint, tmp_path, capsys):
        out = tmp_path / "pruned.ckpt"
        rc = cli.main(["extract", "--checkpoint", str(tiny_checkpoint),
                       "--task", "0.5,0.5,0.5", "--out", str(out)])
        assert rc == cli.EXIT_OK and out.exists()
        assert "active channels" in capsys.readouterr().out

    def test_shared_nonempty_prefix(self, tiny_checkpoint, tmp_path, capsys):
        # the fully-on init agrees with itself, so a short run already has
        # a full prefix
        out = tmp_path / "prefix.ckpt"
        rc = cli.main(["extract", "--checkpoint", str(tiny_checkpoint),
                       "--shared", "--out", str(out)])
        assert rc == cli.EXIT_OK and out.exists()
        assert "prefix length" in capsys.readouterr().out

    def test_shared_with_empty_prefix(self, tiny_checkpoint, tmp_path, capsys):
        from cirnas import trainer
        model, controller, consensus, adam, it, cfg, rng = \
            trainer.load_checkpoint(tiny_checkpoint)
        consensus.s[:] = 0.0
        consensus.phi[:] = False
        ckpt = tmp_path / "nophi.ckpt"
        trainer.save_checkpoint(ckpt, model, controller, consensus, adam,
                                it, cfg, rng)
        out = tmp_path / "prefix.ckpt"
        rc = cli.main(["extract", "--checkpoint", str(ckpt),
                       "--shared", "--out", str(out)])
        assert rc == cli.EXIT_OK
        assert "empty prefix" in capsys.readouterr().out

    def test_needs_task_or_shared(self, tiny_checkpoint, tmp_path):
        rc = cli.main(["extract", "--checkpoint", str(tiny_checkpoint),
                       "--out", str(tmp_path / "x.ckpt")])
        assert rc == cli.EXIT_USAGE


class TestEval:
    def test_deterministic_reports(self, tiny_checkpoint, tmp_path, capsys):
        data = tmp_path / "data"
        write_pngs(data, count=2, size=16)
        reports = []
        for name in ("a.json", "b.json"):
            path = tmp_path / name
            rc = cli.main(["eval", "--checkpoint", str(tiny_checkpoint),
                           "--data", str(data), "--grid", "4",
                           "--report", str(path), "--seed", "5"])
            assert rc == cli.EXIT_OK
            reports.append(path.read_bytes())
        assert reports[0] == reports[1]
        assert "best PSNR" in capsys.readouterr().out


class TestBench:
    def test_latency_protocol(self, tiny_checkpoint, capsys):
        rc = cli.main(["bench", "--checkpoint", str(tiny_checkpoint),
                       "--resolution", "16x16", "--reps", "3"])
        assert rc == cli.EXIT_OK
        stats = json.loads(capsys.readouterr().out)
        assert "first" in stats and "subsequent" in stats
        assert stats["first"]["median"] > 0
