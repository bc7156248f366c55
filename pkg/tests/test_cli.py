import io
import json
import socket

import dpkt
import pytest

from pce import cli
from pce.cli import EXIT_FAIL, EXIT_FAULT, EXIT_INPUT, EXIT_OK, NOT_MODELED_BANNER, main
from pce.isa import CompareOp, MemoryImage, SubRule, read_image, write_image

from conftest import SAMPLE_POLICY

PACKETS = """\
tcp,167.205.3.11,167.205.65.32,25,8080
tcp,192.168.1.5,10.0.0.1,80,443
udp,8.8.8.8,9.9.9.9,53,53
udp,167.205.65.5,1.2.3.4,1000,2000
tcp,5.5.5.5,134.25.5.2,5000,80
"""


@pytest.fixture
def work(tmp_path):
    (tmp_path / "rules.txt").write_text(SAMPLE_POLICY)
    (tmp_path / "packets.csv").write_text(PACKETS)
    return tmp_path


def compiled(work, capsys):
    assert main(["compile", str(work / "rules.txt"), "-o", str(work / "img.txt")]) == EXIT_OK
    capsys.readouterr()
    return work / "img.txt"


def _image_file(path, words):
    buf = io.StringIO()
    write_image(MemoryImage(words), buf)
    path.write_text(buf.getvalue())
    return path


def test_compile_reports_size(work, capsys):
    rc = main(["compile", str(work / "rules.txt"), "-o", str(work / "img.txt"), "--print-asm"])
    out = capsys.readouterr().out
    assert rc == EXIT_OK
    assert out.splitlines()[0] == "32 words / 256"
    assert len(out.splitlines()) == 33
    assert len(read_image((work / "img.txt").read_text())) == 32


def test_compile_syntax_error(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("allow tcp 1.2.3.4\n")
    assert main(["compile", str(tmp_path / "bad.txt"), "-o", str(tmp_path / "o")]) == EXIT_INPUT
    assert "line 1" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_compile_capacity_overflow(tmp_path, capsys):
    (tmp_path / "big.txt").write_text("allow tcp 1.2.3.4 5.6.7.8 1 2\n" * 40)
    assert main(["compile", str(tmp_path / "big.txt"), "-o", str(tmp_path / "o")]) == EXIT_FAIL
    assert "521 words > 256" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_run_sample_policy(work, capsys):
    img = compiled(work, capsys)
    assert main(["run", str(img), "--csv", str(work / "packets.csv")]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[:5] == [
        "1 tcp 167.205.3.11 167.205.65.32 25 8080 PERMIT 13",
        "2 tcp 192.168.1.5 10.0.0.1 80 443 DENY 7",
        "3 udp 8.8.8.8 9.9.9.9 53 53 DENY 6",
        "4 udp 167.205.65.5 1.2.3.4 1000 2000 PERMIT 7",
        "5 tcp 5.5.5.5 134.25.5.2 5000 80 PERMIT 13",
    ]
    assert lines[5] == "--"
    assert lines[6:] == ["packets 5", "permitted 3", "denied 2", "non_classifiable 0",
                         "cycles_min 6", "cycles_avg 9.20", "cycles_max 13"]


def test_run_is_byte_identical(work, capsys):
    img = compiled(work, capsys)
    outs = []
    for _ in range(2):
        main(["run", str(img), "--csv", str(work / "packets.csv"), "--trace"])
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    assert "# cycle pc word" in outs[0]


def test_run_trace_agrees_with_batch(work, capsys):
    img = compiled(work, capsys)
    main(["run", str(img), "--csv", str(work / "packets.csv")])
    plain = capsys.readouterr().out
    main(["run", str(img), "--csv", str(work / "packets.csv"), "--trace"])
    # drop the per-word trace lines, which are all hex columns ending in a pc or "stop"
    kept = [line for line in capsys.readouterr().out.splitlines()
            if not line.startswith("#") and not (line[:1].isdigit() and len(line.split()) == 9)]
    assert kept == plain.splitlines()


def test_run_json_and_stats(work, capsys):
    img = compiled(work, capsys)
    stats = work / "stats.json"
    rc = main(["run", str(img), "--csv", str(work / "packets.csv"), "--json",
               "--stats-json", str(stats)])
    assert rc == EXIT_OK
    first = json.loads(capsys.readouterr().out.splitlines()[0])
    assert first == {"n": 1, "packet": "tcp 167.205.3.11 167.205.65.32 25 8080",
                     "verdict": "PERMIT", "cycles": 13}
    payload = json.loads(stats.read_text())
    assert payload["packets"] == 5 and payload["permitted"] == 3 and "wall_time_s" in payload


def _pcap(path, frames):
    with path.open("wb") as fp:
        w = dpkt.pcap.Writer(fp)
        for i, f in enumerate(frames):
            w.writepkt(f, ts=i)


def _tcp_frame():
    tcp = dpkt.tcp.TCP(sport=25, dport=8080)
    ip = dpkt.ip.IP(src=socket.inet_aton("167.205.3.11"), dst=socket.inet_aton("167.205.65.32"),
                    p=6, data=tcp)
    return bytes(dpkt.ethernet.Ethernet(type=dpkt.ethernet.ETH_TYPE_IP, data=ip))


def _arp_frame():
    return bytes(dpkt.ethernet.Ethernet(type=dpkt.ethernet.ETH_TYPE_ARP, data=dpkt.arp.ARP()))


def test_run_pcap_with_arp(work, capsys):
    img = compiled(work, capsys)
    _pcap(work / "cap.pcap", [_arp_frame(), _tcp_frame()])
    assert main(["run", str(img), "--pcap", str(work / "cap.pcap")]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "1 nonclassifiable(non-IPv4 ethertype) DENY 0"
    assert out[1] == "2 tcp 167.205.3.11 167.205.65.32 25 8080 PERMIT 13"
    assert "non_classifiable 1" in out and "cycles_min 13" in out

    main(["run", str(img), "--pcap", str(work / "cap.pcap"), "--pass-nonip"])
    assert capsys.readouterr().out.splitlines()[0] == "1 nonclassifiable(non-IPv4 ethertype) PERMIT 0"


def test_run_bad_csv(work, capsys):
    img = compiled(work, capsys)
    (work / "bad.csv").write_text("tcp,1.2.3.4,5.6.7.8,99999,80\n")
    assert main(["run", str(img), "--csv", str(work / "bad.csv")]) == EXIT_INPUT
    assert "line 1" in capsys.readouterr().err
    assert main(["run", str(img), "--csv", str(work / "bad.csv"), "--lenient"]) == EXIT_OK
    assert "nonclassifiable(port out of range" in capsys.readouterr().out


def test_run_rejects_invalid_image(work, capsys):
    loop = _image_file(work / "loop.txt", [SubRule(op=CompareOp.EQ, operand=0xFF, address=0),
                                           SubRule(op=CompareOp.ALWAYS, action=1)])
    assert main(["run", str(loop), "--csv", str(work / "packets.csv")]) == EXIT_INPUT
    assert "backward edge at 0x00" in capsys.readouterr().err


def test_run_missing_image(work, capsys):
    assert main(["run", str(work / "nope"), "--csv", str(work / "packets.csv")]) == EXIT_INPUT


@pytest.mark.parametrize("trace", [False, True])
def test_run_fault_exit(work, capsys, monkeypatch, trace):
    # the validator rules out every fault, so bypass it to reach the runtime path
    monkeypatch.setattr(cli, "validate_image", lambda img: [])
    img = _image_file(work / "bad.txt", [SubRule(selector=14, op=CompareOp.EQ, address=1),
                                         SubRule(op=CompareOp.ALWAYS, action=1)])
    argv = ["run", str(img), "--csv", str(work / "packets.csv")] + (["--trace"] if trace else [])
    assert main(argv) == EXIT_FAULT
    assert "engine fault on packet 1" in capsys.readouterr().err


def test_diff_clean(work, capsys):
    assert main(["diff", str(work / "rules.txt"), "--seeds", "3", "--headers", "50"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("rulesets 3 headers ")
    assert main(["diff", "--seeds", "20", "--headers", "30"]) == EXIT_OK
    assert "mismatches 0" in capsys.readouterr().out


def test_diff_mutant_image(work, capsys):
    img_path = compiled(work, capsys)
    words = list(read_image(img_path.read_text()))
    words[12] = words[12]._replace(jump=0)
    mutant = _image_file(work / "mutant.txt", words)
    report = work / "report.jsonl"
    rc = main(["diff", str(work / "rules.txt"), "--image", str(mutant), "--seeds", "1",
               "--report", str(report)])
    assert rc == EXIT_FAIL
    rows = [json.loads(line) for line in report.read_text().splitlines()]
    assert rows and all(r["seed"] == 0 for r in rows)
    assert "report written" in capsys.readouterr().err


def test_bench_deny_all(tmp_path, capsys):
    img = _image_file(tmp_path / "deny.txt", [SubRule(op=CompareOp.ALWAYS, action=1)])
    assert main(["bench", str(img), "--packets", "2000", "--backend", "all"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0] == NOT_MODELED_BANNER
    assert out[0].startswith("hardware frequency not modeled")
    assert "    1 2000" in out and out[-1] == "mode 1"
    assert any(line.startswith("backend python:") for line in out)


def test_bench_replay(work, capsys):
    img = compiled(work, capsys)
    (work / "row1.csv").write_text(PACKETS.splitlines()[0] + "\n")
    assert main(["bench", str(img), "--csv", str(work / "row1.csv"), "--packets", "500"]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[-1] == "mode 13"


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "pce", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "compile" in res.stdout
