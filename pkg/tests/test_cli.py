"""CLI surface: input parsing (text and JSON), report determinism, exit
codes, and the monitor mutation test."""

import json

import pytest

from oliverpg import corpus
from oliverpg.cli import (
    InputDocument,
    export_json_doc,
    export_text,
    main,
    parse_input,
)
from oliverpg.errors import InputFormatError

UT35_TEXT = """oliver-input v1
p 5
module-dim 3
gen
1 1 0
0 1 0
0 0 1
gen
1 0 0
0 1 1
0 0 1
"""


def run_cli(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, out


def write(tmp_path, text, name="in.txt"):
    f = tmp_path / name
    f.write_text(text)
    return str(f)


def test_parse_minimal_document():
    doc = parse_input(UT35_TEXT)
    assert doc.p == 5 and doc.module_dim == 3 and len(doc.generators) == 2


def test_parse_rejects_bad_header():
    with pytest.raises(InputFormatError, match="header"):
        parse_input("p 5\ngen\n1\n")


def test_parse_rejects_p2_and_nonprime():
    with pytest.raises(InputFormatError, match="p = 2"):
        parse_input("oliver-input v1\np 2\ngen\n1 0\n0 1\n")
    with pytest.raises(InputFormatError, match="not prime"):
        parse_input("oliver-input v1\np 9\ngen\n1 0\n0 1\n")


def test_parse_rejects_singular_generator():
    bad = "oliver-input v1\np 5\ngen\n0 0\n0 0\n"
    with pytest.raises(InputFormatError, match="generator 1"):
        parse_input(bad)


def test_parse_reports_line_numbers():
    bad = "oliver-input v1\np 5\ngen\n1 x\n"
    with pytest.raises(InputFormatError, match="line 4"):
        parse_input(bad)


def test_json_mirror_roundtrip():
    doc = parse_input(UT35_TEXT)
    doc2 = parse_input(export_json_doc(doc))
    assert doc2 == doc
    doc3 = parse_input(export_text(doc))
    assert doc3 == doc


def test_corpus_export_parse_digest_roundtrip():
    for name in corpus.instance_names():
        obj = corpus.get_instance(name, verify=False)
        text = corpus.export_input_text(obj)
        d1 = parse_input(text)
        d2 = parse_input(export_json_doc(d1))
        assert d1.digest() == d2.digest()


def test_cli_corpus_list(capsys):
    code, out = run_cli(capsys, ["corpus", "--list"])
    assert code == 0
    assert "ut3_5" in out.split()


def test_cli_corpus_export_then_check(tmp_path, capsys):
    code, out = run_cli(capsys, ["corpus", "ut3_5"])
    assert code == 0
    path = write(tmp_path, out)
    code, out = run_cli(capsys, ["check", path, "--k", "3", "--json"])
    assert code == 0
    rep = json.loads(out)
    assert rep["format"] == "oliver-report v1"
    assert rep["results"]["verdict"] is True


def test_cli_reports_deterministic(tmp_path, capsys):
    path = write(tmp_path, UT35_TEXT)
    outs = []
    for _ in range(2):
        code, out = run_cli(capsys, ["offenders", path, "--json"])
        assert code == 0
        rep = json.loads(out)
        rep.pop("timings")
        outs.append(json.dumps(rep, sort_keys=True))
    assert outs[0] == outs[1]


def test_cli_usage_error_is_exit_1(tmp_path, capsys):
    path = write(tmp_path, "oliver-input v1\np 9\ngen\n1 0\n0 1\n")
    code = main(["check", path])
    assert code == 1


def test_cli_missing_input_is_exit_1(capsys):
    assert main(["check"]) == 1


def test_cli_monitors_pass_on_corpus(tmp_path, capsys):
    code, out = run_cli(capsys, ["corpus", "jordan5_5"])
    path = write(tmp_path, out)
    code, out = run_cli(capsys, ["monitors", path, "--k", "5"])
    assert code == 0
    assert "FIRED" not in out


def test_cli_mutation_test_fires_exit_2(tmp_path, capsys):
    code, out = run_cli(capsys, ["corpus", "jordan5_5"])
    path = write(tmp_path, out)
    code, out = run_cli(
        capsys,
        ["monitors", path, "--k", "5", "--corrupt-offender-check", "--json"],
    )
    assert code == 2
    rep = json.loads(out)
    assert rep["exit_code"] == 2
    assert rep["certificate"] is not None
    fired = [m for m in rep["monitors"] if m["applicable"] and not m["passed"]]
    assert fired and all(m["certificate"] for m in fired)


def test_cli_xk_on_standalone_group(tmp_path, capsys):
    no_module = UT35_TEXT.replace("module-dim 3\n", "")
    path = write(tmp_path, no_module)
    code, out = run_cli(capsys, ["xk", path, "--k", "3", "--json"])
    assert code == 0
    rep = json.loads(out)
    assert rep["results"]["order"] == 125
    assert rep["results"]["coordinates"] == "input"


def test_cli_two_subnormal(tmp_path, capsys):
    path = write(tmp_path, UT35_TEXT)
    code, out = run_cli(capsys, ["two-subnormal", path, "--json"])
    assert code == 0
    rep = json.loads(out)
    assert rep["results"]["order"] == 25


def test_cli_env_cap(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("OLIVER_CAP", "10")
    path = write(tmp_path, UT35_TEXT)
    code = main(["je", path])
    assert code == 1  # closure exceeds the configured cap
