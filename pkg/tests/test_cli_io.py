import hashlib
import os

import numpy as np
import pytest

from kslab import io as ksio
from kslab.cli import main, parse_config
from kslab.errors import ConfigError, FormatError
from kslab.particles import ParticleEnsemble
from kslab.pde import GridField


MINIMAL = """
d: 2
m: 2.0
sigma: 0.25
eps_k: 0.5
eps_p: 0.5
n_particles: 8
t_end: 0.004
dt: 0.002
seed: 42
initial: {kind: gaussian, center: [0.0, 0.0], scale: 0.5}
grid: {L: 3.0, n: 32, store_every: 0.002}
"""


def tree_digest(root):
    digest = hashlib.sha256()
    for name in sorted(os.listdir(root)):
        digest.update(name.encode())
        with open(os.path.join(root, name), "rb") as fh:
            digest.update(fh.read())
    return digest.hexdigest()


class TestBinaryFormats:
    def test_snapshot_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        ens = ParticleEnsemble(rng.standard_normal((17, 3)), t=0.125)
        path = tmp_path / "a.kspc"
        ksio.write_snapshot(path, ens)
        back = ksio.read_snapshot(path)
        assert back.t == ens.t
        assert np.array_equal(back.positions, ens.positions)

    def test_empty_snapshot_round_trip(self, tmp_path):
        ens = ParticleEnsemble(np.zeros((0, 2)), t=0.0)
        path = tmp_path / "e.kspc"
        ksio.write_snapshot(path, ens)
        back = ksio.read_snapshot(path)
        assert back.positions.shape == (0, 2)

    def test_corrupted_magic(self, tmp_path):
        path = tmp_path / "bad.kspc"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(FormatError):
            ksio.read_snapshot(path)

    def test_version_mismatch(self, tmp_path):
        ens = ParticleEnsemble(np.zeros((1, 2)))
        path = tmp_path / "v.kspc"
        ksio.write_snapshot(path, ens)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            ksio.read_snapshot(path)

    def test_field_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        f = GridField(2.5, rng.random((16, 16)), t=0.5)
        path = tmp_path / "f.ksfd"
        ksio.write_field(path, f)
        back = ksio.read_field(path)
        assert back.L == f.L and back.t == f.t
        assert np.array_equal(back.values, f.values)

    def test_truncated_field(self, tmp_path):
        f = GridField(1.0, np.ones((8, 8)))
        path = tmp_path / "t.ksfd"
        ksio.write_field(path, f)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(FormatError):
            ksio.read_field(path)


class TestParseConfig:
    def test_minimal_fills_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.data["replications"] == 1
        assert cfg.data["drift_mode"] == "direct"
        sim = cfg.sim_config()
        assert sim.params.lam == pytest.approx(0.125)

    def test_invalid_m_cited(self):
        with pytest.raises(ConfigError) as err:
            parse_config(MINIMAL.replace("m: 2.0", "m: 2.5"))
        assert any("m must be 2 or >= 3" in v for v in err.value.violations)

    def test_band_constraint_cited(self):
        with pytest.raises(ConfigError) as err:
            parse_config(MINIMAL + "\nlambda: 0.3\n")
        assert any("eps_p^d/2" in v for v in err.value.violations)

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError) as err:
            parse_config(MINIMAL + "\nwibble: 3\n")
        assert any("wibble" in v for v in err.value.violations)

    def test_all_violations_reported(self):
        text = MINIMAL.replace("m: 2.0", "m: 2.5").replace("sigma: 0.25", "sigma: -1")
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        joined = " | ".join(err.value.violations)
        assert "m must be" in joined and "sigma" in joined

    def test_not_yaml(self):
        with pytest.raises(ConfigError):
            parse_config("::: not yaml {")


class TestCliCommands:
    def write_config(self, tmp_path, text=MINIMAL):
        path = tmp_path / "run.yaml"
        path.write_text(text)
        return str(path)

    def test_simulate_t_zero_single_snapshot(self, tmp_path):
        cfgtext = MINIMAL.replace("t_end: 0.004", "t_end: 0.0").replace("dt: 0.002", "")
        cfg = self.write_config(tmp_path, cfgtext)
        out = tmp_path / "out"
        assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        snaps = [f for f in os.listdir(out) if f.endswith(".kspc")]
        assert len(snaps) == 1

    def test_simulate_deterministic_rerun(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["simulate", "--config", cfg, "--out", str(out1)]) == 0
        assert main(["simulate", "--config", cfg, "--out", str(out2)]) == 0
        assert tree_digest(out1) == tree_digest(out2)

    def test_provenance_block(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "o"
        main(["simulate", "--config", cfg, "--out", str(out)])
        text = (out / "trajectory.csv").read_text()
        assert text.startswith("#")
        assert "eps_k: 0.5" in text
        header = [l for l in text.splitlines() if not l.startswith("#")][0]
        assert header.split(",") == ["t", "i", "x_1", "x_2"]

    def test_plan_csv(self, tmp_path):
        cfg = self.write_config(tmp_path, MINIMAL + "\nplan: {N: 10000, alpha_k: 0.05, alpha_p: 0.05}\n")
        out = tmp_path / "o"
        assert main(["plan", "--config", cfg, "--out", str(out)]) == 0
        rows = [l for l in (out / "plan.csv").read_text().splitlines() if not l.startswith("#")]
        header = rows[0].split(",")
        values = rows[1].split(",")
        eps_p = float(values[header.index("eps_p")])
        assert eps_p == pytest.approx(1.2140, abs=2e-4)

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path, MINIMAL.replace("m: 2.0", "m: 2.5"))
        code = main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")])
        assert code == 2
        err = capsys.readouterr().err
        assert "m must be 2 or >= 3" in err

    def test_pde_command(self, tmp_path):
        cfg = self.write_config(tmp_path, MINIMAL + "\npde: {mode: mollified}\n")
        out = tmp_path / "o"
        assert main(["pde", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "field_final.ksfd").exists()
        diag = (out / "pde_diagnostics.csv").read_text()
        lines = [l for l in diag.splitlines() if not l.startswith("#")][1:]
        for line in lines:
            mass = float(line.split(",")[1])
            assert abs(mass - 1.0) <= 1e-8

    def test_couple_command(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "o"
        assert main(["couple", "--config", cfg, "--out", str(out)]) == 0
        for pair in ("interacting_vs_intermediate", "intermediate_vs_limit",
                     "interacting_vs_limit"):
            text = (out / f"errors_{pair}.csv").read_text()
            header = [l for l in text.splitlines() if not l.startswith("#")][0]
            assert header.split(",") == ["t", "metric", "estimate", "stderr", "N",
                                         "eps_k", "eps_p", "lambda", "sigma", "R"]

    def test_workers_do_not_change_bytes(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out1, out2 = tmp_path / "w1", tmp_path / "w2"
        assert main(["couple", "--config", cfg, "--out", str(out1), "--workers", "1"]) == 0
        assert main(["couple", "--config", cfg, "--out", str(out2), "--workers", "2"]) == 0
        assert tree_digest(out1) == tree_digest(out2)

    def test_seed_override(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        main(["simulate", "--config", cfg, "--out", str(out1)])
        main(["simulate", "--config", cfg, "--out", str(out2), "--seed", "43"])
        assert tree_digest(out1) != tree_digest(out2)

    def test_fluctuation_command(self, tmp_path):
        cfg = self.write_config(
            tmp_path,
            MINIMAL + "\nreplications: 2\nstudy: {n_list: [4, 8, 16]}\n",
        )
        out = tmp_path / "o"
        assert main(["fluctuation", "--config", cfg, "--out", str(out)]) == 0
        text = (out / "fluctuation_study.csv").read_text()
        assert "slope" in text

    def test_meanfield_rate_command(self, tmp_path):
        cfg = self.write_config(
            tmp_path, MINIMAL + "\nstudy: {eps_list: [0.4, 0.3, 0.2], dt: 0.002}\n"
        )
        out = tmp_path / "o"
        assert main(["meanfield-rate", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "meanfield_rate_study.csv").exists()

    def test_chaos_command(self, tmp_path):
        cfg = self.write_config(
            tmp_path,
            MINIMAL + "\nreplications: 3\nstudy: {directions: 8, baseline_draws: 2}\n",
        )
        out = tmp_path / "o"
        assert main(["chaos", "--config", cfg, "--out", str(out)]) == 0
        text = (out / "chaos_metrics.csv").read_text()
        assert "sliced_w1" in text and "pair_independence" in text

    def test_bench_command(self, tmp_path):
        cfg = self.write_config(
            tmp_path, MINIMAL + "\nbench: {n_particles: 400, steps: 2}\n"
        )
        out = tmp_path / "o"
        assert main(["bench", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "bench.csv").exists()

    def test_workers_env_fallback(self, tmp_path, monkeypatch):
        from kslab.cli import _resolve_workers, parse_config
        import argparse

        cfg = parse_config(MINIMAL + "\nworkers: 3\n")
        args = argparse.Namespace(workers=None)
        monkeypatch.setenv("KSLAB_WORKERS", "5")
        assert _resolve_workers(args, cfg) == 5
        monkeypatch.delenv("KSLAB_WORKERS")
        assert _resolve_workers(args, cfg) == 3
        args.workers = 2
        monkeypatch.setenv("KSLAB_WORKERS", "5")
        assert _resolve_workers(args, cfg) == 2

    def test_pde_pressure_table(self, tmp_path):
        cfg = self.write_config(tmp_path, MINIMAL + "\npde: {mode: limit}\n")
        out = tmp_path / "o"
        assert main(["pde", "--config", cfg, "--out", str(out)]) == 0
        text = (out / "pressure_table.csv").read_text()
        header = [l for l in text.splitlines() if not l.startswith("#")][0]
        assert header.split(",") == ["r", "p_lambda", "p_lambda_prime", "p_lambda_second"]
