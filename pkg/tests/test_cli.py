from pathlib import Path

import numpy as np
import pytest

from eelsvae import cvae, datacube
from eelsvae.cli import SNAPSHOT, main
from eelsvae.pgm import read_mask

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# a small axis around the Fe L-edge keeps CLI runs fast
SMALL_AXIS = ["offset_eV=680", "dispersion_eV=0.5", "channels=128", "peaks=708:1.5:3000, 721:1.8:1500"]


def sets(items):
    out = []
    for item in items:
        out += ["--set", item]
    return out


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--out", str(d / "bulk.esi"), "--seed", "1",
                 *sets(["width=24", "height=24", *SMALL_AXIS])]) == 0
    assert main(["gen", "--out", str(d / "test.esi"), "--seed", "2",
                 *sets(["width=24", "height=24", *SMALL_AXIS])]) == 0
    return d


def test_gen_default_config_size_and_determinism(tmp_path):
    a, b = tmp_path / "a.esi", tmp_path / "b" / "a.esi"
    assert main(["gen", "--config", str(CONFIGS / "bulk.cfg"), "--seed", "7", "--out", str(a)]) == 0
    assert main(["gen", "--config", str(CONFIGS / "bulk.cfg"), "--seed", "7", "--out", str(b)]) == 0
    assert a.stat().st_size == 33 + 48 * 48 * 640 * 4
    assert a.read_bytes() == b.read_bytes()
    snap = (tmp_path / SNAPSHOT).read_text()
    assert "seed = 7" in snap and "jitter = " in snap


def test_gen_directory_out(tmp_path):
    assert main(["gen", "--out", str(tmp_path), *sets(["width=3", "height=2", *SMALL_AXIS])]) == 0
    assert datacube.load(tmp_path / "cube.esi").intensities.shape == (2, 3, 128)


def test_missing_required_key(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path), "--set", "width=4"]) == 2
    assert "height" in capsys.readouterr().err


def test_unknown_key(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path), *sets(["width=4", "height=4", "colour=red"])]) == 2
    assert "colour" in capsys.readouterr().err


def test_bad_input_file_is_runtime_error(tmp_path):
    (tmp_path / "junk.esi").write_bytes(b"nope")
    assert main(["inject", "--out", str(tmp_path / "o"), "--set", f"input={tmp_path / 'junk.esi'}"]) == 1


def test_inject_zero_and_lag(small):
    src = small / "bulk.esi"
    assert main(["inject", "--out", str(small / "z"), *sets([f"input={src}", "shift_eV=0",
                                                             "clusters=10:10:3"])]) == 0
    assert (small / "z" / "cube.esi").read_bytes() == src.read_bytes()

    assert main(["inject", "--config", str(CONFIGS / "inject.cfg"), "--out", str(small / "i"),
                 "--seed", "3", "--set", f"input={src}"]) == 0
    mask = read_mask(small / "i" / "mask.pgm")
    rows = (small / "i" / "mask.csv").read_text().splitlines()
    assert rows[0] == "x,y" and len(rows) - 1 == mask.sum() > 0
    before = datacube.load(src).intensities
    after = datacube.load(small / "i" / "cube.esi").intensities
    lo, hi = datacube.energy_window(datacube.load(src), 700, 730)
    for y, x in zip(*np.nonzero(mask)):
        a = before[y, x, lo:hi] - before[y, x, lo:hi].mean()
        b = after[y, x, lo:hi + 10] - after[y, x, lo:hi + 10].mean()
        assert int(np.argmax([a @ b[k:k + a.size] for k in range(11)])) == 5
    # the snapshot freezes the random clusters and reproduces the run
    snap = small / "i" / SNAPSHOT
    assert "clusters = " in snap.read_text()
    assert main(["inject", "--config", str(snap), "--out", str(small / "i2")]) == 0
    assert (small / "i2" / "cube.esi").read_bytes() == (small / "i" / "cube.esi").read_bytes()


TINY_TRAIN = ["window_start_eV=690", "L=48", "channels=2, 3", "latent_dim=4", "train_stride=24",
              "batch_size=1"]


def test_train_epochs_zero_is_init(small):
    out = small / "t0"
    assert main(["train", "--out", str(out), "--seed", "5",
                 *sets([f"input={small / 'bulk.esi'}", "epochs=0", *TINY_TRAIN])]) == 0
    params, beta = cvae.load_params(out / "model.cvw")
    init = cvae.init_params(params.config, 5)
    assert beta == 1.2 and params.config.channel_start == 20
    assert all(np.array_equal(params[k].data, init[k].data) for k in init.tensors)
    assert len((out / "loss.csv").read_text().splitlines()) == 1


@pytest.fixture(scope="module")
def trained(small):
    out = small / "t2"
    assert main(["train", "--out", str(out), *sets([f"input={small / 'bulk.esi'}", "epochs=2",
                                                    *TINY_TRAIN])]) == 0
    return out / "model.cvw"


def test_train_rows_and_reconstruct(small, trained):
    assert len((trained.parent / "loss.csv").read_text().splitlines()) == 3
    assert main(["reconstruct", "--out", str(small / "r"),
                 *sets([f"input={small / 'test.esi'}", f"model={trained}"])]) == 0
    rec = datacube.load(small / "r" / "recon.esi")
    assert rec.normalized and rec.intensities.shape == (24, 24, 48)
    assert rec.axis.offset_eV == 690.0


def test_detect_recon_equal_original(small):
    src = small / "test.esi"
    out = small / "d0"
    assert main(["detect", "--out", str(out), *sets([f"input={src}", f"recon={src}"])]) == 0
    header, row = (out / "report.csv").read_text().splitlines()
    fields = dict(zip(header.split(","), row.split(",")))
    assert fields["bimodal"] == "false" and fields["fp"] == "0" and fields["tp"] == "0"
    assert not read_mask(out / "recon_predicted.pgm").any()


def test_detect_all_methods_byte_stable(small, trained):
    args = [f"input={small / 'i' / 'cube.esi'}", f"model={trained}", f"truth={small / 'i' / 'mask.pgm'}"]
    for name in ("d1", "d2"):
        assert main(["detect", "--out", str(small / name), *sets(args)]) == 0
    for f in ("report.csv", "vae_pcc.pgm", "pca4_histogram.csv", "pr.csv", "pr_auc.csv"):
        assert (small / "d1" / f).read_bytes() == (small / "d2" / f).read_bytes()
    rows = (small / "d1" / "report.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["vae", "pca3", "pca4", "pca5"]


def test_eval(small):
    m = small / "i" / "mask.pgm"
    assert main(["eval", "--out", str(small / "e"), *sets([f"predicted={m}", f"truth={m}"])]) == 0
    header, row = (small / "e" / "report.csv").read_text().splitlines()
    assert dict(zip(header.split(","), row.split(",")))["f1"] == "1.0"


def test_sweep_table(small, trained):
    out = small / "s"
    assert main(["sweep", "--out", str(out), "--seed", "4",
                 *sets([f"input={small / 'test.esi'}", f"model={trained}", "magnitudes=0, 1.5, 2.5",
                        "clusters=6:6:3, 17:16:3"])]) == 0
    rows = (out / "f1.csv").read_text().splitlines()
    assert rows[0].startswith("method,magnitude,threshold")
    assert len(rows) - 1 == 4 * 3
    zero = [r for r in rows[1:] if r.split(",")[1] == "0.0"]
    assert all(r.split(",")[-1] == "nan" for r in zero)


def test_latent_sim(tmp_path, trained):
    big = tmp_path / "held.esi"
    assert main(["gen", "--out", str(big), "--seed", "9",
                 *sets(["width=48", "height=48", *SMALL_AXIS])]) == 0
    out = tmp_path / "ls"
    assert main(["latent-sim", "--out", str(out),
                 *sets([f"input={big}", f"model={trained}", "pairs=4", "shift_eV=0"])]) == 0
    M = np.loadtxt(out / "similarity.csv", delimiter=",")
    assert M.shape == (4, 4) and np.max(np.abs(np.diag(M) - 1)) < 1e-12
    assert (out / "summary.csv").read_text().startswith("mean_diagonal,mean_off_diagonal\n")
    assert main(["latent-sim", "--out", str(out), *sets([f"input={big}", f"model={trained}",
                                                         "pairs=5"])]) == 2
