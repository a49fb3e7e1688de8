import json
import subprocess
import sys

import numpy as np
import pytest

from keyagree import cli


def run(argv, tmp_path, name="out.json"):
    out = tmp_path / name
    code = cli.main(list(argv) + ["--out", str(out)])
    return code, (json.loads(out.read_text()) if code == 0 else None)


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


# ---------------------------------------------------------------- channel files

@pytest.mark.parametrize("name", cli.BUNDLED)
def test_bundled_channel_round_trip(name):
    text = cli.bundled_channel_path(name).read_text()
    ch = cli.parse_channel(name)
    assert cli.channel_to_json(ch, name) == text
    again = cli.channel_from_dict(json.loads(cli.channel_to_json(ch)))
    assert cli.channel_to_json(again) == cli.channel_to_json(ch)


def test_round_trip_preserves_floats_exactly(tmp_path):
    rng = np.random.default_rng(0)
    data = json.loads(cli.channel_to_json(cli.parse_channel("bsc-wiretap")))
    W = rng.dirichlet(np.ones(8), size=2).reshape(2, 1, 2, 2, 2)
    data["transition"] = W.tolist()
    ch = cli.channel_from_dict(data)
    assert np.array_equal(np.asarray(ch.W), W)
    text = cli.channel_to_json(ch)
    assert cli.channel_to_json(cli.channel_from_dict(json.loads(text))) == text


def test_invalid_json_reports_line_and_column(tmp_path, capsys):
    path = write(tmp_path, "bad.json", '{\n  "schema_version": 1,\n  oops\n}')
    assert cli.main(["region", "inner-fb", "--channel", path]) == 1
    assert f"{path}:3:3" in capsys.readouterr().err


def test_row_sum_error_names_cell(tmp_path, capsys):
    data = json.loads(cli.channel_to_json(cli.parse_channel("noiseless-binary")))
    data["transition"][1][0][1][1][0] = 0.5
    path = write(tmp_path, "rows.json", data)
    assert cli.main(["region", "inner-fb", "--channel", path]) == 1
    assert "(x=1, s=0)" in capsys.readouterr().err


@pytest.mark.parametrize("mutate, needle", [
    (lambda d: d.update(schema_version=2), "schema_version"),
    (lambda d: d["alphabets"].pop("Z"), "alphabets"),
    (lambda d: d.update(state_pmf=[0.5]), "state_pmf"),
    (lambda d: d["transition"].pop(), "transition"),
    (lambda d: d["transition"][0][0][0][0].__setitem__(0, -1.0), "non-negative"),
])
def test_channel_validation_errors(tmp_path, capsys, mutate, needle):
    data = json.loads(cli.channel_to_json(cli.parse_channel("noiseless-binary")))
    mutate(data)
    path = write(tmp_path, "c.json", data)
    assert cli.main(["region", "inner-fb", "--channel", path]) == 1
    assert needle in capsys.readouterr().err


def test_missing_file(tmp_path, capsys):
    assert cli.main(["region", "inner-fb", "--channel", str(tmp_path / "nope.json")]) == 1
    assert "cannot read" in capsys.readouterr().err


# ---------------------------------------------------------------- exit codes

def test_no_arguments_is_usage_error():
    assert cli.main([]) == 1


@pytest.mark.parametrize("argv", [["bogus"], ["simulate", "nofb", "--n", "0"],
                                  ["simulate", "nofb", "--seed", "-1"],
                                  ["region", "inner-nofb", "--workers", "x"]])
def test_bad_arguments(argv):
    assert cli.main(argv) == 1


def test_simulation_errors_exit_one(tmp_path):
    assert cli.main(["simulate", "nofb", "--eps", "1.5", "--out", str(tmp_path / "x")]) == 1


def test_internal_errors_exit_two(monkeypatch, tmp_path):
    def boom(args):
        raise RuntimeError("boom")
    monkeypatch.setattr(cli, "cmd_reduce", boom)
    assert cli.main(["reduce", "wiretap"]) == 2


def test_reduction_error(capsys):
    assert cli.main(["reduce", "wiretap", "--channel", "state-binary"]) == 1


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "keyagree.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("keyagree ")


# ---------------------------------------------------------------- output documents

def test_output_document_fields(tmp_path):
    code, doc = run(["simulate", "nofb", "--trials", "50", "--seed", "4"], tmp_path)
    assert code == 0
    assert doc["schema_version"] == 1 and doc["seed"] == 4
    assert doc["config_hash"] == cli.config_hash(doc["config"])
    assert doc["command"] == "simulate nofb"


def test_default_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(tmp_path / "results"))
    assert cli.main(["region", "inner-fb"]) == 0
    files = list((tmp_path / "results").glob("region-inner-fb-*.json"))
    assert len(files) == 1
    assert json.loads(files[0].read_text())["config_hash"].startswith(files[0].stem[-12:])


def test_csv_output(tmp_path):
    csv = tmp_path / "m.csv"
    code, _ = run(["simulate", "fb", "--trials", "50", "--eps", "0.75", "--csv", str(csv)],
                  tmp_path)
    assert code == 0 and csv.read_text().startswith("metric,value\n")


def test_scheme_file(tmp_path):
    ch = cli.parse_channel("noiseless-binary")
    scheme = cli.nofb_scheme_dict(cli.default_nofb_scheme(ch))
    path = write(tmp_path, "s.json", scheme)
    code, doc = run(["region", "inner-nofb", "--scheme", path], tmp_path)
    assert code == 0 and doc["seed"] is None
    assert doc["result"]["r0"] == pytest.approx(1.0)


def test_scheme_kind_mismatch(tmp_path, capsys):
    ch = cli.parse_channel("noiseless-binary")
    path = write(tmp_path, "s.json", cli.fb_scheme_dict(cli.default_fb_scheme(ch)))
    assert cli.main(["region", "inner-nofb", "--scheme", path]) == 1
    assert "kind" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["simulate", "nofb", "--trials", "200", "--seed", "11"],
    ["region", "inner-nofb", "--restarts", "3", "--iterations", "20", "--seed", "2"],
])
def test_deterministic_across_workers(tmp_path, argv):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert cli.main(argv + ["--workers", "1", "--out", str(a)]) == 0
    assert cli.main(argv + ["--workers", "3", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_reduce_emits_parseable_channel(tmp_path):
    code, doc = run(["reduce", "wiretap", "--channel", "bsc-wiretap"], tmp_path)
    assert code == 0
    red = cli.channel_from_dict(doc["result"]["channel"])
    W = np.asarray(red.W)
    off = W.sum(axis=4) * (1 - np.eye(red.cards["Y1"]))[None, None]
    assert np.all(off == 0)                                    # Y2 copies Y1
    code, doc = run(["reduce", "wiretap", "--mode", "fb_keep_rx1"], tmp_path, "b.json")
    assert code == 0 and doc["result"]["channel"]["alphabets"]["Y2"] == 1
