import json
import hashlib
import subprocess
import sys
from pathlib import Path

import pytest

from pmegrowth.cli import main


def write_config(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return str(path)


def sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def evolve_config(tmp_path, out="out_evolve"):
    return {
        "command": "evolve",
        "seed": 0,
        "output_dir": str(tmp_path / out),
        "grid": {"dim": 1, "half_width": 1.0, "points_per_axis": 32,
                 "boundary": "periodic"},
        "initial": {"kind": "constant", "value": 1.5},
        "model": {"gamma": 2.0, "growth": {"kind": "constant", "g0": 1.0}},
        "evolution": {"t_final": 0.5, "n_steps": 8, "snapshot_times": [0.25]},
    }


def infer_config(tmp_path, out="out_infer", sampler=None):
    return {
        "command": "infer",
        "seed": 5,
        "output_dir": str(tmp_path / out),
        "grid": {"dim": 1, "half_width": 1.0, "points_per_axis": 32,
                 "boundary": "dirichlet"},
        "initial": {"kind": "bump", "amplitude": 0.5, "width": 0.4},
        "growth": {"kind": "rational", "g0": 1.0, "beta": 1.0},
        "scenario": {"t_final": 0.25, "n_steps": 8},
        "prior": {"mean": 2.0, "std": 0.3, "support": [1.5, 2.5]},
        "observations": {"synthetic": {
            "gamma_true": 2.0,
            "windows": [[-0.75, -0.25], [-0.25, 0.25], [0.25, 0.75]],
            "times": [0.125, 0.25], "noise_rel": 0.05}},
        "sampler": sampler or {"kind": "mh", "n_samples": 120, "burn_in": 30,
                               "step": 0.05},
        "quadrature": {"lo": 1.5, "hi": 2.5, "points": 21},
    }


class TestEvolveCommand:
    def test_zero_field_run(self, tmp_path):
        cfg = evolve_config(tmp_path)
        cfg["initial"] = {"kind": "zero"}
        rc = main(["evolve", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 0
        snap = (tmp_path / "out_evolve" / "snapshot_t0.500000.csv").read_text()
        assert all(line.split(",")[1] == "0.0" for line in snap.splitlines()[1:])

    def test_constant_matches_scalar_oracle(self, tmp_path):
        cfg = evolve_config(tmp_path)
        rc = main(["evolve", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 0
        rows = (tmp_path / "out_evolve" / "snapshot_t0.500000.csv").read_text().splitlines()[1:]
        val = float(rows[0].split(",")[1])
        assert val == pytest.approx(1.5 / (1 - 0.5 / 8) ** 8, rel=1e-9)
        manifest = json.loads((tmp_path / "out_evolve" / "manifest.json").read_text())
        assert manifest["verdicts"]["invariant_violations"] == 0
        listed = {o["path"] for o in manifest["outputs"]}
        assert "mass_series.csv" in listed

    def test_missing_field_names_it(self, tmp_path, capsys):
        cfg = evolve_config(tmp_path)
        del cfg["evolution"]
        rc = main(["evolve", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 2
        err = capsys.readouterr().err
        assert "evolution" in err

    def test_inadmissible_tau_names_condition(self, tmp_path, capsys):
        cfg = evolve_config(tmp_path)
        cfg["model"]["growth"]["g0"] = 20.0
        rc = main(["evolve", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 2
        assert "resolvent admissibility" in capsys.readouterr().err

    def test_bad_gamma_rejected(self, tmp_path, capsys):
        cfg = evolve_config(tmp_path)
        cfg["model"]["gamma"] = 0.9
        rc = main(["evolve", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 2
        assert "power-law admissibility" in capsys.readouterr().err


class TestCertifyCommand:
    def base(self, tmp_path):
        return {
            "command": "certify",
            "seed": 0,
            "output_dir": str(tmp_path / "out_certify"),
            "grid": {"dim": 1, "half_width": 1.5, "points_per_axis": 48,
                     "boundary": "dirichlet"},
            "initial": {"kind": "bump", "amplitude": 0.5, "width": 0.4},
            "growth": {"kind": "rational", "g0": 1.0, "beta": 1.0},
            "pairs": [[2.0, 2.0]],
            "t_final": 0.25,
            "n_steps_list": [4],
            "continuation_epsilons": [0.0],
        }

    def test_identical_pair_passes(self, tmp_path):
        rc = main(["certify", "--config",
                   write_config(tmp_path, "c.json", self.base(tmp_path))])
        assert rc == 0
        summary = json.loads((tmp_path / "out_certify" / "certify_summary.json").read_text())
        assert summary["all_certified"]

    def test_gamma_pair_passes(self, tmp_path):
        cfg = self.base(tmp_path)
        cfg["pairs"] = [[2.0, 2.2]]
        rc = main(["certify", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 0

    def test_corrupted_gap_fails_with_exit_1(self, tmp_path):
        cfg = self.base(tmp_path)
        cfg["pairs"] = [[2.0, 2.2]]
        cfg["_test_inflate_gap"] = 1e6
        rc = main(["certify", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 1
        summary = json.loads((tmp_path / "out_certify" / "certify_summary.json").read_text())
        assert not summary["all_certified"]
        assert summary["failures"]

    def test_threads_flag_same_output(self, tmp_path):
        cfg = self.base(tmp_path)
        cfg["pairs"] = [[2.0, 2.1], [2.0, 2.2]]
        cfg["output_dir"] = str(tmp_path / "seq")
        main(["certify", "--config", write_config(tmp_path, "c1.json", cfg)])
        cfg["output_dir"] = str(tmp_path / "par")
        main(["certify", "--config", write_config(tmp_path, "c2.json", cfg),
              "--threads", "2"])
        assert sha(tmp_path / "seq" / "certificates.csv") == sha(
            tmp_path / "par" / "certificates.csv")


class TestInferCommand:
    def test_runs_and_outputs(self, tmp_path):
        rc = main(["infer", "--config",
                   write_config(tmp_path, "c.json", infer_config(tmp_path))])
        assert rc == 0
        out = tmp_path / "out_infer"
        chain = out / "chain.csv"
        assert chain.exists()
        header = chain.read_text().splitlines()[0]
        assert header == "step,gamma,V,accepted,gradV"
        summary = json.loads((out / "posterior_summary.json").read_text())
        assert 0.0 <= summary["acceptance_rate"] <= 1.0

    def test_fixed_seed_bit_identical(self, tmp_path):
        cfg = infer_config(tmp_path, out="det_a")
        main(["infer", "--config", write_config(tmp_path, "a.json", cfg)])
        cfg["output_dir"] = str(tmp_path / "det_b")
        main(["infer", "--config", write_config(tmp_path, "b.json", cfg)])
        for name in ("chain.csv", "posterior_summary.json", "quadrature_posterior.csv"):
            assert sha(tmp_path / "det_a" / name) == sha(tmp_path / "det_b" / name), name

    def test_seed_changes_chain(self, tmp_path):
        cfg = infer_config(tmp_path, out="seed_a")
        main(["infer", "--config", write_config(tmp_path, "a.json", cfg)])
        cfg["output_dir"] = str(tmp_path / "seed_b")
        main(["infer", "--config", write_config(tmp_path, "b.json", cfg),
              "--seed", "99"])
        assert sha(tmp_path / "seed_a" / "chain.csv") != sha(
            tmp_path / "seed_b" / "chain.csv")

    def test_mala_sampler(self, tmp_path):
        cfg = infer_config(tmp_path, out="out_mala",
                           sampler={"kind": "mala", "n_samples": 60,
                                    "burn_in": 20, "step": 1e-4, "tune": True})
        rc = main(["infer", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 0
        chain = (tmp_path / "out_mala" / "chain.csv").read_text().splitlines()
        # gradient column populated on non-fallback steps
        assert any(line.split(",")[4] != "" for line in chain[1:])

    def test_misaligned_window_rejected(self, tmp_path, capsys):
        cfg = infer_config(tmp_path)
        cfg["observations"]["synthetic"]["windows"] = [[-0.33, 0.25]]
        rc = main(["infer", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 2
        assert "aligned" in capsys.readouterr().err

    def test_observation_file_roundtrip(self, tmp_path):
        # external observation files: windows, times, y, dense sigma
        obs_payload = {
            "windows": [[-0.5, 0.0], [0.0, 0.5]],
            "times": [0.25],
            "y": [0.05, 0.05],
            "sigma": [[1e-4, 0.0], [0.0, 1e-4]],
        }
        obs_path = tmp_path / "obs.json"
        obs_path.write_text(json.dumps(obs_payload))
        cfg = infer_config(tmp_path, out="out_file")
        cfg["observations"] = {"file": str(obs_path)}
        rc = main(["infer", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 0

    def test_tv_convergence_table(self, tmp_path):
        cfg = infer_config(tmp_path, out="out_tv")
        cfg["observations"]["synthetic"]["noise_rel"] = 0.1
        cfg["tv_convergence"] = {"n_list": [2, 4]}
        rc = main(["infer", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 0
        table = (tmp_path / "out_tv" / "posterior_tv_convergence.csv").read_text()
        assert table.splitlines()[0] == "n_steps,tv_next"
        assert len(table.splitlines()) == 3


class TestValidateCommand:
    def test_rate_and_mass(self, tmp_path):
        cfg = {
            "command": "validate",
            "seed": 0,
            "output_dir": str(tmp_path / "out_val"),
            "grid": {"dim": 1, "half_width": 1.0, "points_per_axis": 48,
                     "boundary": "periodic"},
            "initial": {"kind": "bump", "amplitude": 1.0, "width": 0.4},
            "growth": {"kind": "constant", "g0": 1.0},
            "rate_study": {"gamma": 2.0, "t": 0.25, "n_list": [4, 8, 16]},
            "mass_check": {"gamma": 2.0, "t_final": 0.1, "n_steps": 8,
                           "tolerance": 1e-6},
        }
        rc = main(["validate", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 0
        verdicts = json.loads((tmp_path / "out_val" / "manifest.json").read_text())["verdicts"]
        assert verdicts["rate_ok"] and verdicts["mass_ok"]

    def test_empty_validate_rejected(self, tmp_path):
        cfg = {"command": "validate", "seed": 0,
               "output_dir": str(tmp_path / "o")}
        rc = main(["validate", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 2


class TestManifest:
    def test_checksums_recorded_and_correct(self, tmp_path):
        cfg = evolve_config(tmp_path)
        main(["evolve", "--config", write_config(tmp_path, "c.json", cfg)])
        out = tmp_path / "out_evolve"
        manifest = json.loads((out / "manifest.json").read_text())
        for entry in manifest["outputs"]:
            assert sha(out / entry["path"]) == entry["sha256"]

    def test_config_echo_reproduces_run(self, tmp_path):
        cfg = evolve_config(tmp_path)
        main(["evolve", "--config", write_config(tmp_path, "c.json", cfg)])
        out = tmp_path / "out_evolve"
        manifest = json.loads((out / "manifest.json").read_text())
        echoed = manifest["config"]
        echoed["output_dir"] = str(tmp_path / "replay")
        main(["evolve", "--config", write_config(tmp_path, "echo.json", echoed)])
        for entry in manifest["outputs"]:
            assert sha(tmp_path / "replay" / entry["path"]) == entry["sha256"]

    def test_command_mismatch_rejected(self, tmp_path, capsys):
        cfg = evolve_config(tmp_path)
        rc = main(["certify", "--config", write_config(tmp_path, "c.json", cfg)])
        assert rc == 2


class TestConsoleEntry:
    def test_module_invocation(self, tmp_path):
        cfg = evolve_config(tmp_path)
        path = write_config(tmp_path, "c.json", cfg)
        proc = subprocess.run([sys.executable, "-m", "pmegrowth.cli", "evolve",
                               "--config", path], capture_output=True, text=True)
        assert proc.returncode == 0
