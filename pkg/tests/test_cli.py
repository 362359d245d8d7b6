import json
import re
import socket
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import pytest

from wflmpc.cli import demo, load_config, main
from wflmpc.errors import ConfigError

ROOT = Path(__file__).resolve().parent.parent
CLI = [sys.executable, "-m", "wflmpc"]


def free_ports(n):
    socks = [socket.socket() for _ in range(n)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def local_config(tmp_path, **overrides):
    cfg = json.loads((ROOT / "configs" / "local.json").read_text())
    ports = free_ports(3)
    cfg["peers"] = {f"server{i + 1}": f"127.0.0.1:{port}" for i, port in enumerate(ports)}
    cfg.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def launch(args):
    return subprocess.Popen(CLI + args, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, cwd=ROOT)


def run_cli(args, timeout=60):
    return subprocess.run(CLI + args, capture_output=True, text=True, timeout=timeout, cwd=ROOT)


class TestMultiProcess:
    @pytest.mark.parametrize("oracle", ["zero-sum", "beaver"])
    def test_local_launch_prints_sixteen(self, tmp_path, oracle):
        cfg = str(local_config(tmp_path, oracle=oracle))
        procs = [launch(["server", "--config", cfg, "--id", str(i)]) for i in (1, 2, 3)]
        if oracle == "beaver":
            procs.append(launch(["dealer", "--config", cfg]))
        agg = launch(["aggregator", "--config", cfg])
        procs.append(launch(["client", "--config", cfg, "--weight", "2", "--features", "configs/alice.txt"]))
        procs.append(launch(["client", "--config", cfg, "--weight", "3", "--features", "configs/bob.txt"]))
        out, err = agg.communicate(timeout=60)
        codes = [p.wait(timeout=60) for p in procs]
        assert agg.returncode == 0, err
        assert codes == [0] * len(procs)
        result = json.loads(out)
        assert result["average"] == ["16"] and result["n"] == 5

    def test_aggregator_timeout_exit_4(self, tmp_path):
        cfg = str(local_config(tmp_path, timeout_ms=300))
        r = run_cli(["aggregator", "--config", cfg])
        assert r.returncode == 4, r.stderr


class TestValidation:
    def test_zero_weight_exits_2(self, tmp_path):
        cfg = str(local_config(tmp_path))
        r = run_cli(["client", "--config", cfg, "--weight", "0", "--features", "configs/alice.txt"])
        assert r.returncode == 2
        assert "weight" in r.stderr

    def test_non_prime_exits_2(self, tmp_path):
        cfg = str(local_config(tmp_path, prime=2**61 - 3))
        r = run_cli(["server", "--config", cfg, "--id", "1"])
        assert r.returncode == 2
        assert "not prime" in r.stderr

    def test_undeclared_client_exits_2(self, tmp_path):
        cfg = str(local_config(tmp_path))
        assert main(["client", "--config", cfg, "--weight", "1", "--features", "configs/alice.txt",
                     "--id", "mallory"]) == 2

    def test_missing_config(self, tmp_path):
        assert main(["aggregator", "--config", str(tmp_path / "nope.json")]) == 2

    def test_bad_feature_file(self, tmp_path):
        cfg = str(local_config(tmp_path))
        bad = tmp_path / "alice.txt"
        bad.write_text("1.0\nbanana\n")
        assert main(["client", "--config", cfg, "--weight", "1", "--features", str(bad)]) == 2

    def test_config_parsing(self, tmp_path):
        cfg = load_config(str(local_config(tmp_path, oracle="beaver", timeout_ms=2500)))
        assert cfg.oracle == "beaverDealer"
        assert cfg.timeout == 2.5
        assert cfg.clients == ["alice", "bob"]
        with pytest.raises(ConfigError):
            load_config(str(local_config(tmp_path, peers={"server1": "127.0.0.1:1"})))


class TestDemo:
    def test_hundred_clients_at_600_samples(self):
        out = demo(100, 10, 42, "zero-sum")
        assert out["within_bound"]
        assert Fraction(out["max_deviation_exact"]) <= Fraction(1, 2**16)

    def test_single_dyadic_client_exact(self):
        assert demo(1, 6, 3, "beaver", dyadic=True)["max_deviation_exact"] == "0"

    def test_oracles_agree(self):
        a, b = demo(20, 5, 8, "zero-sum"), demo(20, 5, 8, "beaver")
        assert a["mpc_average"] == b["mpc_average"]

    def test_bound_over_100_seeds(self):
        for seed in range(100):
            assert demo(10, 4, seed, "zero-sum", weight_range=(1, 1000))["within_bound"], seed

    def test_bad_parameters(self):
        with pytest.raises(ConfigError):
            demo(0, 3, 1, "zero-sum")

    def test_command_prints_json(self):
        r = run_cli(["demo", "--clients", "5", "--dim", "3", "--seed", "1", "--oracle", "beaver"])
        assert r.returncode == 0
        out = json.loads(r.stdout)
        assert {"mpc_average", "clear_average", "max_deviation", "frames", "wall_time_s"} <= set(out)


class TestSelftest:
    def test_quick(self):
        r = run_cli(["selftest", "--level", "quick"])
        assert r.returncode == 0, r.stdout
        rows = [json.loads(line) for line in r.stdout.splitlines()]
        mul = [row for row in rows if row["test"].startswith("mul_exhaustive")]
        assert [row["cases"] for row in mul] == ["961/961", "961/961"]

    def test_full_honest(self):
        r = run_cli(["selftest", "--level", "full"], timeout=300)
        assert r.returncode == 0, r.stdout

    def test_full_with_reshare_disabled(self):
        r = run_cli(["selftest", "--level", "full", "--inject-fault", "reshare-off"], timeout=300)
        assert r.returncode != 0
        rows = {json.loads(line)["test"]: json.loads(line) for line in r.stdout.splitlines()}
        assert rows["reshare_pad_p5"]["pass"] is False
        # products stay correct: the fault only removes the pads
        assert rows["mul_exhaustive_p31_zero_sum"]["pass"] is True

    def test_full_with_constant_split(self, capsys):
        assert main(["selftest", "--level", "full", "--inject-fault", "constant-split"]) == 1
        rows = {r["test"]: r for r in map(json.loads, capsys.readouterr().out.splitlines())}
        assert rows["share_uniformity_p31"]["pass"] is False
        assert rows["share_pair_uniformity_p5"]["pass"] is False


class TestReadmeCommands:
    def commands(self):
        text = (ROOT / "README.md").read_text()
        return re.findall(r"^\$ (wflmpc (?:demo|selftest)[^\n]*)$", text, re.M)

    def test_documented_commands_run(self):
        cmds = self.commands()
        assert cmds, "README lists no runnable commands"
        for cmd in cmds:
            args = cmd.split()[1:]
            r = run_cli(args, timeout=300)
            assert r.returncode == 0, (cmd, r.stderr)
            if args[0] == "demo":
                assert json.loads(r.stdout)["within_bound"]
            else:
                assert all(json.loads(line)["pass"] for line in r.stdout.splitlines())
