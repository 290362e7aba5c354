import json
import socket
import subprocess
import sys
from pathlib import Path

import pytest

from airstation.cli import build_parser, main
from airstation.protocols import DumpRecord, SensorKind, write_dump
from airstation.simulator import Scenario, Step, run_scenario
from airstation.storage import CSV_HEADER, read_csv_log

ROOT = Path(__file__).resolve().parents[1]


def test_aqi_text(capsys):
    assert main(["aqi", "pm2.5=55.5"]) == 0
    out = capsys.readouterr().out
    assert "sub-index 151" in out and "overall  151" in out and "category Unhealthy" in out


def test_aqi_json(capsys):
    assert main(["aqi", "pm2.5=0", "pm10=0", "co=0", "--json"]) == 0
    record = json.loads(capsys.readouterr().out)
    assert record["overall"] == 0 and record["category"] == "Good"
    assert record["sub_indices"] == {"pm2_5": 0, "pm10": 0, "co": 0}


def test_aqi_dominant(capsys):
    assert main(["aqi", "pm2.5=100", "co=5.68"]) == 0
    out = capsys.readouterr().out
    assert "overall  174" in out and "dominant PM2_5" in out


@pytest.mark.parametrize("args", [["pm10=700"], ["lead=3"], ["pm10"], ["co=abc"]])
def test_aqi_errors(args, capsys):
    assert main(["aqi", *args]) == 1
    assert capsys.readouterr().err


def test_aqi_out_of_range_names_pollutant(capsys):
    main(["aqi", "pm10=700"])
    assert "pm10" in capsys.readouterr().err
    assert main(["aqi", "pm10=700", "--clamp"]) == 0


def test_missing_config_exit_1(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "absent.yaml")]) == 1
    assert "absent.yaml" in capsys.readouterr().err


def test_source_failure_exit_2(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"sources: {{adc: {tmp_path}/no-such-device}}\n")
    assert main(["run", "--config", str(cfg)]) == 2


def test_bound_port_exit_3(tmp_path):
    with socket.socket() as held:
        held.bind(("127.0.0.1", 0))
        held.listen()
        port = held.getsockname()[1]
        cfg = tmp_path / "c.yaml"
        cfg.write_text(f"sinks: {{query: {{bind: '127.0.0.1:{port}'}}}}\n")
        assert main(["run", "--config", str(cfg)]) == 3


def test_run_demo_style_config(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(
        f"sampling: {{period: 0.001}}\n"
        f"sources: {{pms5003: sim:{ROOT}/scenarios/faults.yaml, dht11: sim:{ROOT}/scenarios/faults.yaml, adc: sim:{ROOT}/scenarios/faults.yaml}}\n"
        f"sinks: {{csv: {{directory: logs, fsync: false}}, telemetry: {{endpoint: tel.txt}}}}\n"
    )
    assert main(["run", "--config", str(cfg)]) == 0
    [csv] = (tmp_path / "logs").glob("*.csv")
    assert len(read_csv_log(csv)) == 60
    assert (tmp_path / "tel.txt").read_bytes().count(b"\r\n") == 60


def test_simulate_table1_headerless(tmp_path, capsys):
    args = ["simulate", str(ROOT / "scenarios" / "table1.yaml"), "--config", str(ROOT / "configs" / "table1.yaml"),
            "--out", str(tmp_path), "--headerless", "--period", "0.001"]
    assert main(args) == 0
    [csv] = tmp_path.glob("*.csv")
    lines = csv.read_text().splitlines()
    assert lines[0].startswith("1,0,0,29,62,5.68,")
    assert lines[1].startswith("2,180,108,29,62,5.27,")


def test_simulate_check(capsys):
    assert main(["simulate", str(ROOT / "scenarios" / "faults.yaml"), "--check"]) == 0
    assert "# valid: 60 cycles" in capsys.readouterr().out


def test_simulate_invalid_scenario(tmp_path):
    bad = tmp_path / "s.yaml"
    bad.write_text("seed: 1\nsteps: []\n")
    assert main(["simulate", str(bad), "--check"]) == 1


def test_dump_then_replay(tmp_path, capsys):
    dump = tmp_path / "cap.bin"
    assert main(["simulate", str(ROOT / "scenarios" / "faults.yaml"), "--dump", str(dump)]) == 0
    assert main(["replay", str(dump), "--out", str(tmp_path / "logs")]) == 0
    [csv] = (tmp_path / "logs").glob("*.csv")
    assert csv.read_text().startswith(CSV_HEADER)
    assert len(read_csv_log(csv)) == 60


def capture(tmp_path, faults=()):
    s = Scenario(seed=1, steps=(Step(3, 20, 30, 25, 50, 2.0),), faults=faults)
    path = tmp_path / "cap.bin"
    write_dump(path, [DumpRecord(SensorKind.PMS5003, c) for c in run_scenario(s).pms5003])
    return path


def test_decode_valid(tmp_path, capsys):
    assert main(["decode", str(capture(tmp_path))]) == 0
    out = capsys.readouterr().out
    assert out.count(": OK ") == 3 and "invalid frames: 0" in out


def test_decode_corrupt(tmp_path, capsys):
    from airstation.simulator import Fault

    path = capture(tmp_path, (Fault(2, "corrupt-checksum"),))
    assert main(["decode", str(path)]) == 4
    assert main(["decode", str(path), "--tolerate"]) == 0
    assert "BADCHECKSUM" in capsys.readouterr().out


def test_decode_malformed(tmp_path, capsys):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x09\x00\x00\x00\x00")
    assert main(["decode", str(path)]) == 1
    assert "offset 0" in capsys.readouterr().err


def test_export(tmp_path, capsys):
    csv = tmp_path / "a.csv"
    csv.write_text(CSV_HEADER + "\n1,180,108,29,62,5.27,230\n")
    assert main(["export", str(csv)]) == 0
    record = json.loads(capsys.readouterr().out)
    assert record == {"file": str(csv), "no": 1, "pm2_5": 180, "pm10": 108, "temperature": 29,
                      "humidity": 62, "co": "5.27", "aqi": 230}
    csv.write_text("1,2\n")
    assert main(["export", str(csv)]) == 1


def test_watch_server_down(capsys):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    assert main(["watch", f"127.0.0.1:{port}", "--polls", "2", "--interval", "0.01"]) == 0
    assert capsys.readouterr().out.count("[stale]") == 2


def test_help_lists_every_subcommand():
    text = build_parser().format_help()
    for cmd in ("run", "simulate", "replay", "decode", "aqi", "watch", "export"):
        assert cmd in text
    assert "exit codes" in text


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "airstation.cli", "aqi", "pm2.5=55.5", "--json"],
                         capture_output=True, text=True, check=True).stdout
    assert json.loads(out)["overall"] == 151
