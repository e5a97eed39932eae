import csv
import json
import os

import pytest

from mcwf.cli import main, parse_config, read_config_file
from mcwf.errors import ValidationError


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_sample_command_line():
    cfg = parse_config(["--dpLimit", "0.1", "--seed", "1000", "--cutoff", "200", "--nTh", "5"])
    assert cfg.dpLimit == 0.1
    assert cfg.seed == 1000
    assert cfg.cutoff == 200
    assert cfg.nTh == 5.0


def test_kappa_defaults_to_one():
    assert parse_config([]).kappa == 1.0


@pytest.mark.parametrize("argv, key", [
    (["--dpLimit", "1.5"], "dpLimit"),
    (["--dpLimit", "0"], "dpLimit"),
    (["--nTh", "-1"], "nTh"),
    (["--kappa", "nan"], "kappa"),
    (["--cutoff", "ten"], "cutoff"),
    (["--T", "1.01", "--Dt", "0.05"], "T"),
    (["--method", "oracle-discrete", "--eta", "1"], "eta"),
])
def test_validation_names_offending_key(argv, key):
    with pytest.raises(ValidationError) as info:
        parse_config(argv)
    assert info.value.key == key


def test_validation_exit_code_and_record(capsys, tmp_path):
    code = main(["--dpLimit", "1.5", "--output", str(tmp_path)])
    assert code == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["key"] == "dpLimit"
    assert rec["exit_code"] == 2
    assert not os.path.exists(tmp_path / "series.csv")


def test_unknown_flag_rejected():
    with pytest.raises(ValidationError) as info:
        parse_config(["--dpLimt", "0.1"])
    assert info.value.key == "dpLimt"


def test_unknown_config_key_rejected(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("dpLimit=0.2\nbogus=1\n", encoding="utf-8")
    with pytest.raises(ValidationError) as info:
        parse_config([], config_file=str(p))
    assert info.value.key == "bogus"


def test_flags_override_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment line\ndpLimit = 0.2  # trailing\nnTh=3\n\n", encoding="utf-8")
    cfg = parse_config(["--config", str(p), "--nTh", "5"])
    assert cfg.dpLimit == 0.2
    assert cfg.nTh == 5.0


def test_malformed_config_line(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("dpLimit 0.2\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        read_config_file(str(p))


def test_default_pictures():
    assert parse_config(["--method", "master"]).picture == "schroedinger"
    assert parse_config([]).picture == "non-unitary-interaction"
    assert parse_config(["--model", "particle"]).picture == "interaction"


def test_master_run_initial_row(tmp_path):
    out = tmp_path / "m"
    code = main(["--method", "master", "--nTh", "5", "--cutoff", "40", "--T", "0.5",
                 "--Dt", "0.05", "--output", str(out)])
    assert code == 0
    rows = read_csv(out / "series.csv")
    assert rows[0][:5] == ["t", "re_a", "im_a", "n", "var_n"]
    assert float(rows[1][0]) == 0.0
    assert float(rows[1][3]) == pytest.approx(10.0, abs=1e-12)
    assert len(rows) == 1 + 11
    assert os.path.exists(out / "stats.csv")
    assert read_csv(out / "stats.csv")[0] == ["key", "value"]


def test_numbers_round_trip(tmp_path):
    out = tmp_path / "m"
    assert main(["--method", "master", "--nTh", "5", "--cutoff", "30", "--T", "0.2",
                 "--Dt", "0.1", "--output", str(out)]) == 0
    rows = read_csv(out / "series.csv")
    for cell in rows[2][1:]:
        assert format(float(cell), ".17g") == cell


def test_manifest_reproduces_bitwise(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    argv = ["--method", "stepwise", "--nTh", "5", "--cutoff", "60", "--T", "1",
            "--nTraj", "20", "--seed", "7", "--output", str(a)]
    assert main(argv) == 0
    manifest = (a / "manifest").read_text(encoding="utf-8")
    assert "seed=7" in manifest
    assert manifest.startswith("# mcwf ")
    assert main(["--config", str(a / "manifest"), "--output", str(b)]) == 0
    assert (a / "series.csv").read_bytes() == (b / "series.csv").read_bytes()
    assert (a / "stats.csv").read_bytes() == (b / "stats.csv").read_bytes()


def test_integrating_and_oracle_runs(tmp_path):
    for method in ("integrating", "oracle-discrete", "oracle-gillespie"):
        out = tmp_path / method
        assert main(["--method", method, "--nTh", "5", "--cutoff", "60", "--T", "0.5",
                     "--nTraj", "5", "--output", str(out)]) == 0
        rows = read_csv(out / "series.csv")
        assert float(rows[1][3]) == 10.0


def test_truncation_exit_code(capsys, tmp_path):
    code = main(["--nTh", "5", "--cutoff", "12", "--T", "5", "--nTraj", "4",
                 "--output", str(tmp_path)])
    assert code == 4
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["exit_code"] == 4


def test_coherent_input_run(tmp_path):
    assert main(["--alpha", "2", "--nTh", "0", "--cutoff", "40", "--T", "1",
                 "--output", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "series.csv")
    assert float(rows[1][3]) == pytest.approx(4.0, abs=1e-9)
    assert float(rows[-1][3]) == pytest.approx(4 * 2.718281828459045 ** -2, abs=1e-6)
