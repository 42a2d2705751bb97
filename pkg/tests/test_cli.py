import json
from pathlib import Path

import pytest

import rtetr as rt
from rtetr import io as rio
from rtetr.cli import main
from rtetr.config import bundled_config_path, load_config, build_grid_from


SMALL_BOX = """
[grid]
geometry = box
width = 1.0
height = 1.0
n_cells = 10 10
n_theta = 4
c = 1.0

[medium]
mu_a = constant 0.0
mu_s = constant 0.1

[kernel]
kind = isotropic

[time]
tau = 1.2T
dt = auto

[initial_condition]
kind = gaussian
center = 0.5 0.5
width = 0.15

[invert]
n_iter = 4
truth_refine = 2

[control]
kind = gaussian
center = 0.5 0.5
width = 0.2
tol = 5e-2
max_iter = 40

[output]
directory = out
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small_box.cfg"
    p.write_text(SMALL_BOX)
    return p


class TestConfig:
    def test_bundled_names_resolve(self):
        for name in ("vacuum_rod", "weak_scatter_box", "regime_violation_small"):
            assert bundled_config_path(name).exists()
            cfg = load_config(name)
            grid = build_grid_from(cfg)
            assert grid.n_cells_total >= 4

    def test_missing_config_exit_code(self, tmp_path, capsys):
        assert main(["simulate", "--config", str(tmp_path / "nope.cfg")]) == 1
        assert "configuration" in capsys.readouterr().err

    def test_malformed_config_exit_code(self, tmp_path, capsys):
        p = tmp_path / "bad.cfg"
        p.write_text("[grid]\ngeometry = dodecahedron\n")
        assert main(["simulate", "--config", str(p)]) == 1

    def test_duration_suffix(self, small_cfg):
        cfg = load_config(str(small_cfg))
        grid = build_grid_from(cfg)
        from rtetr.config import build_medium_from, resolve_times

        med = build_medium_from(cfg, grid)
        tau, dt = resolve_times(cfg, grid, med)
        assert tau == pytest.approx(1.2 * grid.T)


class TestCommands:
    def test_simulate_outputs(self, small_cfg, tmp_path):
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(small_cfg), "--out", str(out)]) == 0
        for name in (
            "initial_state.rtef",
            "final_state.rtef",
            "outflow.rtet",
            "trajectory_index.csv",
            "final_state.png",
            "trajectory_norms.png",
            "manifest.json",
        ):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text())
        listed = {Path(o["path"]).name for o in manifest["outputs"]}
        written = {p.name for p in out.iterdir()} - {"manifest.json"}
        assert written == listed
        assert manifest["resolved"]["time"]["tau"] > 0

    def test_simulate_zero_initial_all_zero(self, tmp_path):
        cfg = tmp_path / "zero.cfg"
        cfg.write_text(SMALL_BOX.replace("width = 0.15", "width = 0.15\namplitude = 0.0"))
        out = tmp_path / "zsim"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        grid = build_grid_from(load_config(str(cfg)))
        final = rio.read_field(out / "final_state.rtef", grid)
        assert not final.values.any()
        trace = rio.read_trace(out / "outflow.rtet", grid, rt.OUTFLOW)
        assert not trace.values.any()

    def test_invert_and_reports(self, small_cfg, tmp_path):
        out = tmp_path / "inv"
        assert main(["invert", "--config", str(small_cfg), "--out", str(out)]) == 0
        for name in (
            "measurement.rtet",
            "measurement_index.csv",
            "reconstruction.csv",
            "reconstruction.rtef",
            "truth.rtef",
            "reconstruction.png",
            "reconstruction_fields.png",
        ):
            assert (out / name).exists(), name

    def test_invert_inverse_crime_flag(self, small_cfg, tmp_path):
        guarded = tmp_path / "g"
        crime = tmp_path / "c"
        assert main(["invert", "--config", str(small_cfg), "--out", str(guarded)]) == 0
        assert (
            main(
                [
                    "invert",
                    "--config",
                    str(small_cfg),
                    "--out",
                    str(crime),
                    "--allow-inverse-crime",
                ]
            )
            == 0
        )
        a = (guarded / "measurement.rtet").read_bytes()
        b = (crime / "measurement.rtet").read_bytes()
        assert a != b
        mg = json.loads((guarded / "manifest.json").read_text())
        mc = json.loads((crime / "manifest.json").read_text())
        assert mg["resolved"]["invert"]["truth_refine"] == 2
        assert mc["resolved"]["invert"]["truth_refine"] == 1

    def test_control_outputs(self, small_cfg, tmp_path):
        out = tmp_path / "ctl"
        assert main(["control", "--config", str(small_cfg), "--out", str(out)]) == 0
        for name in (
            "control_residuals.csv",
            "control_hmin.rtet",
            "achieved_state.rtef",
            "target_state.rtef",
        ):
            assert (out / name).exists(), name

    def test_spectrum_outputs(self, small_cfg, tmp_path):
        out = tmp_path / "spec"
        assert main(["spectrum", "--config", str(small_cfg), "--out", str(out)]) == 0
        assert (out / "spectrum.csv").exists()
        assert (out / "error_map_norm.csv").exists()

    def test_spectrum_vacuum_evacuation_row(self, tmp_path):
        # the vacuum run must report a tiny operator norm by 1.2 crossings
        import csv

        out = tmp_path / "vspec"
        assert main(["spectrum", "--config", "vacuum_rod", "--out", str(out)]) == 0
        with open(out / "spectrum.csv") as fh:
            rows = {float(r["time"]): float(r["direct_norm"]) for r in csv.DictReader(fh)}
        t12 = min(rows, key=lambda t: abs(t - 1.2))
        assert abs(t12 - 1.2) < 1e-9
        assert rows[t12] <= 1e-2

    def test_simulate_writes_snapshots_when_requested(self, small_cfg, tmp_path):
        cfg = tmp_path / "snap.cfg"
        cfg.write_text(SMALL_BOX.replace("dt = auto", "dt = auto\nrecord_every = 5"))
        out = tmp_path / "snap"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        snaps = sorted(out.glob("snapshot_*.rtef"))
        assert snaps and snaps[0].name == "snapshot_000000.rtef"

    def test_validate_passes_on_small_box(self, small_cfg, tmp_path):
        out = tmp_path / "val"
        assert main(["validate", "--config", str(small_cfg), "--out", str(out)]) == 0
        assert (out / "validation.csv").exists()

    def test_no_figures_flag(self, small_cfg, tmp_path):
        out = tmp_path / "nofig"
        assert (
            main(
                [
                    "simulate",
                    "--config",
                    str(small_cfg),
                    "--out",
                    str(out),
                    "--no-figures",
                ]
            )
            == 0
        )
        assert not list(out.glob("*.png"))


class TestDeterminism:
    def test_identical_runs_identical_bytes(self, small_cfg, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            assert (
                main(
                    [
                        "simulate",
                        "--config",
                        str(small_cfg),
                        "--out",
                        str(out),
                        "--seed",
                        "7",
                    ]
                )
                == 0
            )
            outs.append(out)
        for name in ("final_state.rtef", "outflow.rtet", "trajectory_index.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
        ma = json.loads((outs[0] / "manifest.json").read_text())
        mb = json.loads((outs[1] / "manifest.json").read_text())
        ha = {Path(o["path"]).name: o["hash"] for o in ma["outputs"]}
        hb = {Path(o["path"]).name: o["hash"] for o in mb["outputs"]}
        assert ha == hb
