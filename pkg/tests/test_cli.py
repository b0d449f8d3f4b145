import json
import shutil
import subprocess
import sys
import time
import urllib.request

import pytest

from mevo.cli import analyze_main, peer_main, sim_main
from mevo.netsim import Scenario, packaged_scenario_names
from mevo.telemetry import read_log

TINY_SCENARIO = """\
name = "tiny"
duration_s = 5.0
seed = 11

[[peer]]
id = "a"
source = "silence"

[[peer]]
id = "b"
source = "silence"

[[link]]
from = "a"
to = "b"
base_owd_ms = 10.0
loss_prob = 0.0

[[link]]
from = "b"
to = "a"
base_owd_ms = 10.0
loss_prob = 0.0

[stream]
frames_per_packet = 128
"""

SOLO_SESSION = """\
local_peer_id = "solo"
control_port = 0

[[peer]]
id = "solo"
address = "127.0.0.1:0"
"""


def keyvals(path):
    return dict(line.split(",") for line in
                path.read_text().splitlines()[1:])


# ---- mevo-sim ----------------------------------------------------------


def test_sim_run_writes_logs_and_ground_truth(tmp_path, capsys):
    scenario = tmp_path / "tiny.toml"
    scenario.write_text(TINY_SCENARIO)
    out = tmp_path / "out"

    assert sim_main(["run", str(scenario), "--out", str(out)]) == 0

    printed = capsys.readouterr().out
    assert "5 s virtual" in printed
    for pid in ("a", "b"):
        log = read_log(out / ("telemetry_%s.csv" % pid))
        assert log.duration_s() == 5.0
        assert log.final_rows()[(pid, 0 if pid == "b" else 1)].frames_lost == 0
    gt_head = (out / "ground_truth.csv").read_text().splitlines()[0]
    assert gt_head == "# mevo-ground-truth v1"


def test_sim_rejects_unknown_scenario(tmp_path, capsys):
    assert sim_main(["run", "no-such", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "mevo-sim:" in err and "replication" in err


def test_packaged_scenarios_resolve():
    names = packaged_scenario_names()
    assert "replication" in names and "replication-300s" in names
    from mevo.cli import _resolve_scenario
    assert isinstance(_resolve_scenario("replication"), Scenario)


# ---- mevo-analyze ------------------------------------------------------


@pytest.fixture()
def tiny_log(tmp_path):
    scenario = tmp_path / "tiny.toml"
    scenario.write_text(TINY_SCENARIO)
    out = tmp_path / "simout"
    assert sim_main(["run", str(scenario), "--out", str(out)]) == 0
    return out / "telemetry_a.csv"


def test_analyze_commands_produce_artifacts(tiny_log, tmp_path, capsys):
    out = tmp_path / "an"
    capsys.readouterr()  # drop the fixture's simulator output
    for cmd in (["rtt", "--bin-ms", "0.25"], ["loss"], ["m2e"], ["summary"]):
        assert analyze_main(cmd + ["--log", str(tiny_log),
                                   "--out", str(out)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 8

    rtt = keyvals(out / "rtt_summary.csv")
    # constant-delay mesh: every RTT sample is exactly 2 x 10 ms
    assert float(rtt["min_ms"]) == float(rtt["max_ms"]) == 20.0
    assert rtt["fraction_below_threshold"] == "1.000000"
    loss = keyvals(out / "loss_summary.csv")
    assert loss["final_frames_lost"] == "0"
    m2e = (out / "m2e_budget.csv").read_text().splitlines()
    assert m2e[1].split(",")[2] == "10.000000"


def test_analyze_reruns_are_byte_identical(tiny_log, tmp_path):
    outs = (tmp_path / "r1", tmp_path / "r2")
    for out in outs:
        for cmd in (["rtt"], ["loss"], ["m2e"], ["summary"]):
            assert analyze_main(cmd + ["--log", str(tiny_log),
                                       "--out", str(out)]) == 0
    for path in sorted(outs[0].iterdir()):
        assert path.read_bytes() == (outs[1] / path.name).read_bytes()


def test_analyze_diagnoses_bad_input(tmp_path, capsys):
    assert analyze_main(["summary", "--log", str(tmp_path / "absent.csv"),
                         "--out", str(tmp_path)]) == 1
    garbage = tmp_path / "garbage.csv"
    garbage.write_text("not,a,log\n1,2,3\n")
    assert analyze_main(["rtt", "--log", str(garbage),
                         "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.count("mevo-analyze:") == 2


def test_analyze_rtt_requires_rtt_samples(tmp_path, capsys):
    from mevo.telemetry import TelemetryRow, TelemetryWriter
    from mevo.wire import StreamConfig

    path = tmp_path / "nortt.csv"
    writer = TelemetryWriter(path, StreamConfig())
    writer.write(TelemetryRow(1.0, "p", 0, None, 1.0, 1.0,
                              0, 0, 0, 0, 0, 0, 0, 0))
    writer.close()
    assert analyze_main(["rtt", "--log", str(path),
                         "--out", str(tmp_path)]) == 1
    assert "RTT" in capsys.readouterr().err


# ---- mevo-peer ---------------------------------------------------------


def test_peer_rejects_bad_config(tmp_path, capsys):
    missing = tmp_path / "absent.toml"
    assert peer_main(["--config", str(missing)]) == 1
    bad_source = tmp_path / "solo.toml"
    bad_source.write_text(SOLO_SESSION)
    assert peer_main(["--config", str(bad_source),
                      "--virtual-audio", "square"]) == 1
    err = capsys.readouterr().err
    assert err.count("mevo-peer:") == 2


def test_peer_runs_until_stopped_over_control_api(tmp_path):
    config = tmp_path / "solo.toml"
    config.write_text(SOLO_SESSION)
    log_path = tmp_path / "solo-telemetry.csv"

    script = shutil.which("mevo-peer")
    cmd = ([script] if script else
           [sys.executable, "-c",
            "import sys; from mevo.cli import peer_main; "
            "sys.exit(peer_main())"])
    proc = subprocess.Popen(
        cmd + ["--config", str(config), "--virtual-audio", "sine",
               "--telemetry-log", str(log_path)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    try:
        port = None
        for _ in range(2):
            line = proc.stdout.readline()
            if "control on http://127.0.0.1:" in line:
                port = int(line.rsplit(":", 1)[1])
        assert port is not None

        deadline = time.monotonic() + 10.0
        status = None
        while time.monotonic() < deadline:
            with urllib.request.urlopen(
                    "http://127.0.0.1:%d/status" % port, timeout=2) as resp:
                status = json.load(resp)
            if status["counters"]["dgrams_sent"] == 0:
                break
            time.sleep(0.1)
        assert status is not None and status["peer_id"] == "solo"

        req = urllib.request.Request(
            "http://127.0.0.1:%d/session/stop" % port, data=b"{}",
            method="POST")
        with urllib.request.urlopen(req, timeout=2) as resp:
            assert json.load(resp) == {"stopping": True}

        out, err = proc.communicate(timeout=10)
        assert proc.returncode == 0, err
        assert "peer solo: stopped" in out
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.communicate()

    log = read_log(log_path)
    assert log.sample_rate == 44100
