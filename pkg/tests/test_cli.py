from app.apps.microburst import MICROBURST_SOURCE
from app.apps.rcp import COLLECT_SOURCE
from app.cli import EXIT_INPUT, EXIT_OK, EXIT_VIOLATIONS, main


def test_asm_then_disasm(tmp_path, capsys):
    src = tmp_path / "probe.tpp"
    src.write_text(MICROBURST_SOURCE, encoding="utf-8")
    out = tmp_path / "probe.bin"
    assert main(["asm", str(src), "-o", str(out)]) == EXIT_OK
    assert len(out.read_bytes()) == 54
    capsys.readouterr()
    assert main(["disasm", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "PUSH [Queue:QueueOccupancy]" in text


def test_analyze_exit_codes(tmp_path):
    src = tmp_path / "collect.tpp"
    src.write_text(COLLECT_SOURCE, encoding="utf-8")
    grants = ["--grant", "read:0x0000-0x00ff", "--grant", "read:0xa000-0xa03f"]
    assert main(["analyze", str(src), *grants]) == EXIT_OK
    assert main(["analyze", str(src), "--grant", "read:0x0000-0x00ff"]) == EXIT_VIOLATIONS
    assert main(["analyze", str(src), "--grant", "bogus"]) == EXIT_INPUT


def test_bad_input(tmp_path):
    assert main(["disasm", str(tmp_path / "missing.bin")]) == EXIT_INPUT
    bad = tmp_path / "bad.tpp"
    bad.write_text("FROB [Switch:SwitchID]", encoding="utf-8")
    assert main(["asm", str(bad), "--hex"]) == EXIT_INPUT
    assert main(["run", str(tmp_path / "nope.json")]) == EXIT_INPUT


def test_list_experiments(capsys):
    assert main(["list-experiments"]) == EXIT_OK
    assert "rcp_maxmin" in capsys.readouterr().out


def test_run_short_experiment(tmp_path, capsys):
    assert main(["run", "ndb", "--duration-ms", "10", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "manifest.json").is_file()
    assert "ndb" in capsys.readouterr().out
