import filecmp
import json
import struct

import numpy as np
import pytest

from cinescar import ndgrad as nd
from cinescar.netarch import UNetSpec, build, forward
from cinescar.pipeline import casedir, checkpoint, config, harness, pgm, seeds, tensorfile
from cinescar.pipeline.cli import main
from cinescar.pipeline.errors import DataError, UsageError


# --- TensorFile --------------------------------------------------------------


@pytest.mark.parametrize("shape", [(), (5,), (3, 4), (2, 3, 4), (2, 2, 3, 5), (0, 3)])
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_tensorfile_round_trip(tmp_path, rng, shape, dtype):
    x = rng.normal(size=shape).astype(dtype)
    tensorfile.write(tmp_path / "x.tns", x)
    y = tensorfile.read(tmp_path / "x.tns")
    assert y.dtype == dtype and y.shape == x.shape
    assert y.tobytes() == x.tobytes()


def test_tensorfile_layout_hand_built():
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    expected = b"TNS1" + bytes([1, 2]) + struct.pack("<II", 2, 3) + struct.pack("<6f", *range(6))
    assert tensorfile.encode(x) == expected
    assert tensorfile.decode(expected).tobytes() == x.tobytes()


def test_tensorfile_payload_length(rng):
    blob = tensorfile.encode(rng.normal(size=(4, 4)).astype(np.float32))
    assert len(blob) == 4 + 2 + 8 + 4 * 16


def test_tensorfile_masks_stored_as_f32():
    blob = tensorfile.encode(np.array([[0, 1]], dtype=np.uint8))
    assert blob[4] == 1


@pytest.mark.parametrize("blob,msg", [(b"XXXX\x01\x00", "not a TNS1"), (b"TNS1\x07\x00", "dtype code"),
                                      (b"TNS1\x01\x01\x02\x00\x00\x00abc", "payload")])
def test_tensorfile_rejects_bad_input(blob, msg):
    with pytest.raises(DataError, match=msg):
        tensorfile.decode(blob)


# --- seeds -------------------------------------------------------------------


def test_seed_streams():
    assert seeds.derive(0, "phantom", 3) == seeds.derive(0, "phantom", 3)
    assert seeds.derive(0, "phantom", 3) != seeds.derive(0, "phantom", 4)
    assert seeds.derive(0, "phantom", 3) != seeds.derive(1, "phantom", 3)
    assert seeds.derive(0, "init") != seeds.derive(0, "sampling")
    a = seeds.generator(7, "x").random(4)
    assert a.tobytes() == seeds.generator(7, "x").random(4).tobytes()


# --- config ------------------------------------------------------------------


def test_config_defaults_and_unknown_keys():
    cfg = config.from_dict({})
    assert cfg.seg.epochs == 400 and cfg.seg.batch == 8 and cfg.motion.epochs == 1000
    assert cfg.motion.batch_size == 16 and cfg.seg.lr == 5e-4
    with pytest.raises(UsageError, match="unknown config key"):
        config.from_dict({"bogus": 1})
    with pytest.raises(UsageError, match=r"motion.*lr_schedule"):
        config.from_dict({"motion": {"lr_schedule": 1}})
    with pytest.raises(UsageError, match="r_in"):
        config.from_dict({"phantom": {"r_in": 40.0}})
    with pytest.raises(UsageError, match="motion.method"):
        config.from_dict({"motion": {"method": "tvl1"}})


def test_config_round_trip(tmp_path):
    cfg = config.from_dict({"seed": 4, "seg": {"mode": "ED_ONLY"}})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    again = config.load(p)
    assert again == cfg and again.digest() == cfg.digest()


# --- case directories ----------------------------------------------------------


def _small_cfg(**kw):
    base = {"phantom": {"H": 32, "W": 32, "cx": 16.0, "cy": 16.0, "r_in": 6.0, "r_out": 11.0, "T": 4},
            "dataset": {"n_train": 2, "n_test": 1}}
    base.update(kw)
    return config.from_dict(base)


def test_casedir_round_trip(tmp_path):
    case = harness.make_cases(_small_cfg(), 1)[0]
    d = casedir.write_case(tmp_path, case)
    back = casedir.read_case(d)
    assert back.case_id == case.case_id
    np.testing.assert_array_equal(back.cine, case.cine.astype(np.float32))
    np.testing.assert_array_equal(back.myo, case.myo)
    assert back.flow_gt.shape == (3, 2, 32, 32)
    assert back.meta["seed"] == case.meta["seed"]


def test_casedir_rejects_non_binary_mask(tmp_path):
    case = harness.make_cases(_small_cfg(), 1)[0]
    d = casedir.write_case(tmp_path, case)
    tensorfile.write(d / "scar_ed.tns", np.full((32, 32), 0.5, dtype=np.float32))
    with pytest.raises(DataError, match="binary"):
        casedir.read_case(d)


# --- checkpoints ----------------------------------------------------------------


@pytest.mark.parametrize("bits", [32, 64])
def test_checkpoint_bit_exact(tmp_path, rng, bits):
    with nd.precision(bits):
        net = build(UNetSpec(3, 2, depth=2, base_channels=4, final_activation="sigmoid"), seed=5)
        x = rng.uniform(size=(2, 3, 16, 16))
        before = forward(net, x).data
        checkpoint.save(tmp_path / "ck", net, "seg", {"note": 1})
    loaded, manifest = checkpoint.load(tmp_path / "ck")
    assert [e["name"] for e in manifest["params"]] == list(net.params)
    assert manifest["precision"] == bits
    with nd.precision(bits):
        after = forward(loaded, x).data
    assert before.tobytes() == after.tobytes()
    for name in net.params:
        assert loaded.params[name].data.tobytes() == net.params[name].data.tobytes()


def test_checkpoint_spec_mismatch(tmp_path):
    net = build(UNetSpec(1, 1, depth=1, base_channels=2))
    checkpoint.save(tmp_path / "ck", net, "motion")
    with pytest.raises(DataError, match="does not match"):
        checkpoint.load(tmp_path / "ck", expected_spec=UNetSpec(1, 1, depth=1, base_channels=4))
    with pytest.raises(DataError, match="expected 'seg'"):
        checkpoint.load(tmp_path / "ck", kind="seg")


# --- PGM -----------------------------------------------------------------------


def test_pgm_header_and_scaling(tmp_path):
    img = np.array([[0.0, 0.5], [1.0, 2.0]])
    pgm.write_pgm(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw == b"P5\n2 2\n255\n" + bytes([0, 64, 128, 255])
    np.testing.assert_array_equal(pgm.read_pgm(tmp_path / "a.pgm"), [[0, 64], [128, 255]])
    assert not pgm.to_uint8(np.full((3, 3), 7.0)).any()


def test_pgm_flow_export_two_images_per_field(tmp_path, rng):
    paths = pgm.export_tensor(rng.normal(size=(3, 2, 8, 8)), tmp_path, "flow_gt")
    assert len(paths) == 6 and paths[0].name == "flow_gt_01_dx.pgm"


# --- CLI -----------------------------------------------------------------------


def _write_cfg(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(_small_cfg(**kw).to_dict()))
    return str(p)


def test_cli_phantom_gen_is_reproducible(tmp_path):
    cfg = _write_cfg(tmp_path)
    assert main(["-q", "phantom", "gen", "--config", cfg, "--cases", "2", "--out", str(tmp_path / "a")]) == 0
    assert main(["-q", "phantom", "gen", "--config", cfg, "--cases", "2", "--out", str(tmp_path / "b")]) == 0
    for name in ("case_000", "case_001"):
        cmp = filecmp.dircmp(tmp_path / "a" / name, tmp_path / "b" / name)
        assert sorted(cmp.common_files) == ["cine.tns", "flow_gt.tns", "meta.json", "myo_ed.tns", "scar_ed.tns"]
        match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / name, tmp_path / "b" / name, cmp.common_files, shallow=False)
        assert not mismatch and not errors


def test_cli_eval_on_ground_truth(tmp_path):
    cfg = _write_cfg(tmp_path)
    data = tmp_path / "data"
    main(["-q", "phantom", "gen", "--config", cfg, "--cases", "2", "--out", str(data)])
    out = tmp_path / "report.csv"
    assert main(["-q", "eval", "--pred", str(data), "--gt", str(data), "--out", str(out), "--method", "gt"]) == 0
    rows = harness.read_csv(out)
    assert rows[0]["method"] == "gt"
    assert float(rows[0]["dice_scar_mean"]) == 1.0 and float(rows[0]["hd95_mean"]) == 0.0
    assert list(rows[0]) == ["method", "dice_scar_mean", "dice_scar_sd", "dice_myo_mean", "dice_myo_sd", "hd95_mean", "hd95_sd"]


def test_cli_motion_seg_round_trip(tmp_path):
    cfg = _write_cfg(tmp_path, motion={"epochs": 3, "batch_size": 2, "base_channels": 2, "depth": 2,
                                      "varreg_iters": 5},
                     seg={"epochs": 3, "batch": 2, "base_channels": 2, "depth": 2})
    data, ck, pred = tmp_path / "data", tmp_path / "mck", tmp_path / "pred"
    assert main(["-q", "phantom", "gen", "--config", cfg, "--cases", "2", "--out", str(data)]) == 0
    assert main(["-q", "motion", "train", "--config", cfg, "--data", str(data), "--out", str(ck)]) == 0
    assert main(["-q", "motion", "estimate", "--config", cfg, "--method", "unet", "--checkpoint", str(ck), "--data", str(data)]) == 0
    assert tensorfile.read(data / "case_000" / "flow_unet.tns").shape == (3, 2, 32, 32)
    for method in ("varreg", "ilk", "f2f"):
        assert main(["-q", "motion", "estimate", "--config", cfg, "--method", method, "--data", str(data)]) == 0
    sck = tmp_path / "sck"
    assert main(["-q", "seg", "train", "--config", cfg, "--mode", "OF_PLUS_ALL", "--data", str(data), "--out", str(sck)]) == 0
    assert main(["-q", "seg", "predict", "--checkpoint", str(sck), "--data", str(data), "--out", str(pred)]) == 0
    assert (pred / "case_001" / "scar_pred.pgm").exists()
    assert main(["-q", "eval", "--pred", str(pred), "--gt", str(data), "--out", str(tmp_path / "r.csv")]) == 0
    assert main(["-q", "export", "--pgm", "--input", str(data / "case_000"), "--out", str(tmp_path / "pgm")]) == 0
    assert (tmp_path / "pgm" / "flow_gt_01_dx.pgm").exists() and (tmp_path / "pgm" / "cine_00.pgm").exists()


def test_cli_exit_codes(tmp_path, capsys):
    assert main([]) == 1
    assert main(["phantom", "gen", "--out", str(tmp_path), "--cases", "0"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"nope": 1}')
    assert main(["phantom", "gen", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert main(["eval", "--pred", str(tmp_path / "missing"), "--gt", str(tmp_path / "missing")]) == 2
    junk = tmp_path / "junk.tns"
    junk.write_bytes(b"nothing")
    assert main(["export", "--pgm", "--input", str(junk), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert all(line.startswith("error:") for line in err)


def test_cli_numeric_failure_exit_code(tmp_path):
    cfg = _write_cfg(tmp_path, motion={"epochs": 2, "batch_size": 1, "base_channels": 2, "depth": 2, "lr": 1e300})
    data = tmp_path / "data"
    main(["-q", "phantom", "gen", "--config", cfg, "--cases", "1", "--out", str(data)])
    cine = tensorfile.read(data / "case_000" / "cine.tns")
    tensorfile.write(data / "case_000" / "cine.tns", (cine * 1e30).astype(np.float32))
    with np.errstate(all="ignore"):
        assert main(["-q", "motion", "train", "--config", cfg, "--data", str(data), "--out", str(tmp_path / "ck")]) == 3
