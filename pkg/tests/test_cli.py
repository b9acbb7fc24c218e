import json

import numpy as np
import pytest

from se3inv import so3
from se3inv.cli import EXIT_DEGENERATE, EXIT_INPUT, EXIT_OK, EXIT_USAGE, main
from se3inv.config import CACHE_ENV
from se3inv.serialize import load_descriptor


@pytest.fixture
def ell_off(tmp_path):
    p = tmp_path / "ell.off"
    assert main(["gen", "ellipsoid", "1", "1.3", "1.7", "--resolution", "2", "--out", str(p)]) == EXIT_OK
    return p


def _inv(path, out, *extra):
    return main(["invariants", str(path), "--caps-d", "2", "--caps-dprime", "2", "--out", str(out), *extra])


def test_gen_embeds_config(ell_off):
    head = ell_off.read_text().splitlines()[:2]
    assert head[0] == "OFF" and head[1].startswith("# run_config ")
    assert json.loads(head[1][len("# run_config "):])["command"] == "gen"


@pytest.mark.parametrize("argv", [["gen", "blob"], ["gen", "sphere", "-1"], ["gen", "ellipsoid", "1"],
                                  ["invariants"], ["nope"], ["selftest", "--caps-d", "40"]])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as e:
        raise SystemExit(main(argv))
    assert e.value.code == EXIT_USAGE


def test_missing_and_corrupt_inputs(tmp_path):
    assert _inv(tmp_path / "none.off", tmp_path / "x") == EXIT_INPUT
    bad = tmp_path / "bad.off"
    bad.write_text("OFF\n3 1 0\n0 0 0\n")
    assert _inv(bad, tmp_path / "x") == EXIT_INPUT
    junk = tmp_path / "junk.se3"
    junk.write_bytes(b"SE3INVD\x00garbage")
    assert main(["compare", str(junk), str(junk)]) == EXIT_INPUT


def test_invariants_deterministic_and_compare(ell_off, tmp_path, capsys):
    a, b = tmp_path / "a.se3", tmp_path / "b.se3"
    assert _inv(ell_off, a) == EXIT_OK and _inv(ell_off, b) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    out = tmp_path / "cmp.txt"
    assert main(["compare", str(a), str(b), "--out", str(out)]) == EXIT_OK
    assert out.read_text().splitlines()[0] == "distance = 0"


def test_text_format_matches_binary(ell_off, tmp_path):
    a, t = tmp_path / "a.se3", tmp_path / "a.txt"
    _inv(ell_off, a)
    _inv(ell_off, t, "--format", "text")
    np.testing.assert_array_equal(load_descriptor(a).values, load_descriptor(t).values)


def test_cap_mismatch_is_input_error(ell_off, tmp_path):
    a, b = tmp_path / "a.se3", tmp_path / "b.se3"
    _inv(ell_off, a)
    main(["invariants", str(ell_off), "--caps-d", "1", "--caps-dprime", "1", "--out", str(b)])
    assert main(["compare", str(a), str(b)]) == EXIT_INPUT


def test_cache_is_used(ell_off, tmp_path, monkeypatch):
    monkeypatch.setenv(CACHE_ENV, str(tmp_path / "cache"))
    a, b = tmp_path / "a.se3", tmp_path / "b.se3"
    _inv(ell_off, a)
    assert len(list((tmp_path / "cache").iterdir())) == 1
    _inv(ell_off, b)
    assert a.read_bytes() == b.read_bytes()


def test_config_file_and_flag_precedence(ell_off, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"caps_d": 1, "caps_dprime": 1}))
    out = tmp_path / "a.se3"
    assert main(["invariants", str(ell_off), "--config", str(cfg), "--caps-d", "2", "--out", str(out)]) == EXIT_OK
    d = load_descriptor(out)
    assert (d.d, d.dp) == (2, 1)
    cfg.write_text("{not json")
    assert main(["invariants", str(ell_off), "--config", str(cfg), "--out", str(out)]) == EXIT_INPUT


def test_check_report(tmp_path):
    disc = tmp_path / "disc.off"
    main(["gen", "disc", "1", "--resolution", "2", "--out", str(disc)])
    out = tmp_path / "rep.txt"
    assert main(["check", str(disc), "--out", str(out)]) == EXIT_OK
    text = out.read_text()
    assert "[star]\nverdict = fail" in text and "failed_requirements = 1" in text
    assert "[star_star]\nverdict = skipped" in text


def test_reconstruct_flat_disc_is_degenerate(tmp_path):
    disc = tmp_path / "disc.off"
    main(["gen", "disc", "1", "--out", str(disc)])
    assert main(["reconstruct", str(disc), "--out", str(tmp_path / "r")]) == EXIT_DEGENERATE


def test_reconstruct_writes_clouds(tmp_path):
    ell = tmp_path / "ell.off"
    main(["gen", "ellipsoid", "1", "1.3", "1.7", "--out", str(ell)])
    out = tmp_path / "rec"
    assert main(["reconstruct", str(ell), "--out", str(out)]) == EXIT_OK
    rep = (out / "report.txt").read_text()
    assert "copies = " in rep and "precision = " in rep
    clouds = sorted(out.glob("fiber0_candidate*.off"))
    assert clouds and clouds[0].read_text().startswith("OFF\n# run_config")


def test_selftest_passes(capsys):
    assert main(["selftest"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 6 and all(x.startswith("PASS") for x in lines)


def test_selftest_names_corrupted_table(monkeypatch, capsys):
    real = so3.cg_matrix

    def corrupt(j1, j2, J):
        m = real(j1, j2, J).copy()
        if j1 == 2 and j2 == 1 and J == 2:
            m.flat[0] += 1e-3
        return m

    monkeypatch.setattr(so3, "cg_matrix", corrupt)
    assert main(["selftest"]) == EXIT_DEGENERATE
    out = capsys.readouterr().out
    assert "FAIL clebsch-gordan orthogonality" in out
