import json
import math
import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest

import hetero_spectra.cli as cli
from hetero_spectra import ModelParams, gen_instance, symmetrize
from hetero_spectra.cli import (
    ParseError,
    load_config,
    main,
    parse_matrix,
    write_matrix_csv,
)

SVG_NS = "{http://www.w3.org/2000/svg}"


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def minimal_config(**overrides):
    cfg = {
        "n": 20,
        "p": 8,
        "r": 2,
        "vary": {"param": "omega", "values": [1.0]},
        "methods": ["svd"],
        "replicates": 1,
        "seed": 130,
    }
    cfg.update(overrides)
    return cfg


# ---------------------------------------------------------------- parse_matrix


def test_parse_csv_basic(tmp_path):
    path = write(tmp_path / "m.csv", "1,2\n2,3\n")
    got = parse_matrix(path)
    assert np.array_equal(got, np.array([[1.0, 2.0], [2.0, 3.0]]))


def test_parse_csv_rejects_nonsquare(tmp_path):
    path = write(tmp_path / "m.csv", "1,2,3\n4,5,6\n")
    with pytest.raises(ParseError, match="2x3"):
        parse_matrix(path)


def test_parse_csv_rejects_ragged(tmp_path):
    path = write(tmp_path / "m.csv", "1,2\n3\n")
    with pytest.raises(ParseError, match="line 2"):
        parse_matrix(path)


def test_parse_csv_rejects_bad_token(tmp_path):
    path = write(tmp_path / "m.csv", "1,2\nx,3\n")
    with pytest.raises(ParseError, match="line 2, column 1"):
        parse_matrix(path)


def test_parse_rejects_nonfinite(tmp_path):
    path = write(tmp_path / "m.csv", "1,nan\nnan,3\n")
    with pytest.raises(ParseError, match="non-finite"):
        parse_matrix(path)


def test_parse_missing_file(tmp_path):
    with pytest.raises(ParseError):
        parse_matrix(str(tmp_path / "missing.csv"))


def test_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(131)
    a = rng.standard_normal((6, 6))
    m = symmetrize(a @ a.T) / 3.0
    path = tmp_path / "round.csv"
    write_matrix_csv(str(path), m)
    got = parse_matrix(str(path))
    assert np.max(np.abs(got - m)) <= 1e-15 * max(1.0, float(np.max(np.abs(m))))


def test_parse_asymmetric_rejected_names_pair(tmp_path):
    path = write(tmp_path / "m.csv", "1,1.001\n1,1\n")
    with pytest.raises(ParseError) as exc:
        parse_matrix(path)
    msg = str(exc.value)
    assert "a[0,1]" in msg and "a[1,0]" in msg
    assert "0.001" in msg


def test_parse_tiny_asymmetry_symmetrized_with_warning(tmp_path):
    path = write(tmp_path / "m.csv", "1,1.000000000000001\n1,1\n")
    with pytest.warns(UserWarning, match="symmetrized"):
        got = parse_matrix(path)
    assert np.array_equal(got, got.T)


def test_parse_matrix_market_general(tmp_path):
    text = "%%MatrixMarket matrix array real general\n% comment\n2 2\n1\n3\n3\n2\n"
    path = write(tmp_path / "m.mtx", text)
    got = parse_matrix(path)
    assert np.array_equal(got, np.array([[1.0, 3.0], [3.0, 2.0]]))


def test_parse_matrix_market_symmetric(tmp_path):
    # lower triangle, column major
    text = "%%MatrixMarket matrix array real symmetric\n3 3\n1\n2\n3\n5\n6\n9\n"
    path = write(tmp_path / "m.mtx", text)
    got = parse_matrix(path)
    want = np.array([[1.0, 2.0, 3.0], [2.0, 5.0, 6.0], [3.0, 6.0, 9.0]])
    assert np.array_equal(got, want)


def test_parse_matrix_market_errors(tmp_path):
    bad_header = write(tmp_path / "a.mtx", "%%MatrixMarket matrix coordinate real general\n2 2\n")
    with pytest.raises(ParseError):
        parse_matrix(bad_header)
    short = write(tmp_path / "b.mtx", "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n")
    with pytest.raises(ParseError, match="expected 4 entries"):
        parse_matrix(short)


def test_matrix_market_round_trip_against_csv(tmp_path):
    rng = np.random.default_rng(132)
    a = rng.standard_normal((4, 4))
    m = symmetrize(a @ a.T)
    lines = ["%%MatrixMarket matrix array real general", "4 4"]
    for j in range(4):
        for i in range(4):
            lines.append(format(m[i, j], ".17g"))
    path = write(tmp_path / "m.mtx", "\n".join(lines) + "\n")
    got = parse_matrix(path)
    assert np.array_equal(got, m)


# ---------------------------------------------------------------- load_config


def test_load_config_valid(tmp_path):
    path = write(tmp_path / "cfg.json", json.dumps(minimal_config()))
    cfg = load_config(path)
    assert cfg.n == 20 and cfg.p == 8 and cfg.r == 2
    assert cfg.vary_param == "omega"
    assert cfg.vary_values == (1.0,)
    assert cfg.methods == ("svd",)


def test_load_config_rejects_unknown_field(tmp_path):
    path = write(tmp_path / "cfg.json", json.dumps(minimal_config(extra=1)))
    with pytest.raises(ValueError, match="unknown config fields: extra"):
        load_config(path)


def test_load_config_rejects_unknown_vary_field(tmp_path):
    cfg = minimal_config()
    cfg["vary"]["step"] = 2
    path = write(tmp_path / "cfg.json", json.dumps(cfg))
    with pytest.raises(ValueError, match="unknown vary fields"):
        load_config(path)


def test_load_config_missing_required(tmp_path):
    cfg = minimal_config()
    del cfg["vary"]
    path = write(tmp_path / "cfg.json", json.dumps(cfg))
    with pytest.raises(ValueError, match="vary"):
        load_config(path)


def test_load_config_bad_json(tmp_path):
    path = write(tmp_path / "cfg.json", "{not json")
    with pytest.raises(ValueError, match="invalid JSON"):
        load_config(path)


# ---------------------------------------------------------------- solve


def test_solve_diagonal_rmtfa(tmp_path):
    inp = write(tmp_path / "m.csv", "2,0,0\n0,3,0\n0,0,4\n")
    out = tmp_path / "out"
    ret = main(["solve", "--input", inp, "--method", "rmtfa", "--tau", "0.5", "--out", str(out)])
    assert ret == 0
    L = parse_matrix(str(out / "L.csv"))
    D = parse_matrix(str(out / "D.csv"))
    assert np.array_equal(L, np.zeros((3, 3)))
    assert np.array_equal(D, np.diag([2.0, 3.0, 4.0]))
    summary = json.loads((out / "summary.json").read_text())
    assert summary["heywood"] is False
    assert summary["converged"] is True
    assert summary["rank_L"] == 0
    trace_lines = (out / "trace.csv").read_text().splitlines()
    assert trace_lines[0] == "k,objective,fixed_point_residual,psi"
    assert len(trace_lines) >= 2


def test_solve_generated_instance_certificate(tmp_path):
    # normalized so the relative stop rule certifies an absolute residual
    inst = gen_instance(ModelParams(n=200, p=50, r=5, kappa=3.0, omega=1.0, seed=133))
    scale = 1.0 / float(np.max(np.abs(inst.sigma)))
    tau = inst.params.sigma_r() ** 2 / 16.0 * scale
    inp = tmp_path / "sigma.csv"
    write_matrix_csv(str(inp), inst.sigma * scale)
    out = tmp_path / "out"
    ret = main(
        ["solve", "--input", str(inp), "--method", "rmtfa", "--tau", str(tau), "--out", str(out)]
    )
    assert ret == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["fixed_point_residual"] < 1e-8
    assert summary["converged"] is True


def test_solve_spectral_method(tmp_path):
    rng = np.random.default_rng(134)
    a = rng.standard_normal((6, 6))
    inp = tmp_path / "m.csv"
    write_matrix_csv(str(inp), symmetrize(a @ a.T))
    out = tmp_path / "out"
    ret = main(["solve", "--input", str(inp), "--method", "hpca", "--rank", "2", "--out", str(out)])
    assert ret == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rank_L"] <= 2
    L = parse_matrix(str(out / "L.csv"))
    assert np.array_equal(L, L.T)
    assert np.linalg.matrix_rank(L, tol=1e-8) <= 2


def test_solve_flag_validation(tmp_path):
    inp = write(tmp_path / "m.csv", "1,0\n0,1\n")
    out = str(tmp_path / "out")
    assert main(["solve", "--input", inp, "--method", "rmtfa", "--out", out]) == 2
    assert main(["solve", "--input", inp, "--method", "rmtfa", "--tau", "1", "--rank", "2", "--out", out]) == 2
    assert main(["solve", "--input", inp, "--method", "hpca", "--out", out]) == 2
    assert main(["solve", "--input", inp, "--method", "hpca", "--tau", "1", "--out", out]) == 2


def test_solve_asymmetric_exit_code(tmp_path, capsys):
    inp = write(tmp_path / "m.csv", "1,1.001\n1,1\n")
    ret = main(["solve", "--input", inp, "--method", "rmtfa", "--tau", "0.5", "--out", str(tmp_path / "o")])
    assert ret == 1
    err = capsys.readouterr().err
    assert "a[0,1]" in err and "a[1,0]" in err


def test_solve_nonconvergence_exit_code(tmp_path, monkeypatch, capsys):
    real = cli.rmtfa

    def stubborn(sigma, tau):
        dec, trace = real(sigma, tau)
        return replace(dec, converged=False), trace

    monkeypatch.setattr(cli, "rmtfa", stubborn)
    inp = write(tmp_path / "m.csv", "2,1\n1,2\n")
    out = tmp_path / "out"
    ret = main(["solve", "--input", inp, "--method", "rmtfa", "--tau", "0.5", "--out", str(out)])
    assert ret == 3
    # outputs are still written
    assert (out / "L.csv").exists()
    assert (out / "summary.json").exists()
    assert json.loads((out / "summary.json").read_text())["converged"] is False
    assert "did not converge" in capsys.readouterr().err


# ---------------------------------------------------------------- simulate


def test_simulate_minimal(tmp_path):
    cfg = write(tmp_path / "cfg.json", json.dumps(minimal_config()))
    out = tmp_path / "rows.csv"
    ret = main(["simulate", "--config", cfg, "--out", str(out)])
    assert ret == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "# hetero-spectra results v1"
    assert lines[1] == "method,param,value,replicate,sin_theta,wall_ms,status"
    assert len(lines) == 3
    fields = lines[2].split(",")
    assert fields[0] == "svd" and fields[1] == "omega"
    assert 0.0 <= float(fields[4]) <= 1.0
    assert fields[6] == "ok"


def test_simulate_cardinality(tmp_path):
    cfg = write(
        tmp_path / "cfg.json",
        json.dumps(
            minimal_config(
                methods=["svd", "hpca", "rmtfa"],
                vary={"param": "kappa", "values": [1.0, 2.0, 4.0]},
                replicates=2,
            )
        ),
    )
    out = tmp_path / "rows.csv"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2 + 3 * 3 * 2


def test_simulate_byte_identical_reruns(tmp_path):
    cfg = write(
        tmp_path / "cfg.json",
        json.dumps(minimal_config(methods=["svd", "rmtfa"], replicates=2)),
    )
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--config", cfg, "--out", str(out1)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_simulate_seed_and_replicate_overrides(tmp_path):
    cfg = write(tmp_path / "cfg.json", json.dumps(minimal_config()))
    base = tmp_path / "base.csv"
    reseeded = tmp_path / "seeded.csv"
    more = tmp_path / "more.csv"
    assert main(["simulate", "--config", cfg, "--out", str(base)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(reseeded), "--seed", "999"]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(more), "--replicates", "3"]) == 0
    assert base.read_bytes() != reseeded.read_bytes()
    assert len(more.read_text().splitlines()) == 2 + 3


def test_simulate_timings_flag(tmp_path):
    cfg = write(tmp_path / "cfg.json", json.dumps(minimal_config(methods=["rmtfa"])))
    out = tmp_path / "rows.csv"
    assert main(["simulate", "--config", cfg, "--out", str(out), "--timings"]) == 0
    wall = float(out.read_text().splitlines()[2].split(",")[5])
    assert wall > 0.0


def test_simulate_jobs_match_serial(tmp_path, monkeypatch):
    cfg = write(
        tmp_path / "cfg.json",
        json.dumps(minimal_config(methods=["svd", "dd"], replicates=3)),
    )
    serial = tmp_path / "serial.csv"
    threaded = tmp_path / "threaded.csv"
    env_run = tmp_path / "env.csv"
    assert main(["simulate", "--config", cfg, "--out", str(serial)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(threaded), "--jobs", "3"]) == 0
    monkeypatch.setenv("HETERO_SPECTRA_JOBS", "2")
    assert main(["simulate", "--config", cfg, "--out", str(env_run)]) == 0
    assert serial.read_bytes() == threaded.read_bytes()
    assert serial.read_bytes() == env_run.read_bytes()


def test_simulate_bad_jobs_env(tmp_path, monkeypatch, capsys):
    cfg = write(tmp_path / "cfg.json", json.dumps(minimal_config()))
    monkeypatch.setenv("HETERO_SPECTRA_JOBS", "soon")
    ret = main(["simulate", "--config", cfg, "--out", str(tmp_path / "rows.csv")])
    assert ret == 2
    assert "HETERO_SPECTRA_JOBS" in capsys.readouterr().err


def test_simulate_invalid_config_exit_codes(tmp_path, capsys):
    bad_field = write(tmp_path / "a.json", json.dumps(minimal_config(bogus=1)))
    assert main(["simulate", "--config", bad_field, "--out", str(tmp_path / "o.csv")]) == 2
    bad_value = write(tmp_path / "b.json", json.dumps(minimal_config(r=100)))
    assert main(["simulate", "--config", bad_value, "--out", str(tmp_path / "o.csv")]) == 2
    missing = str(tmp_path / "missing.json")
    assert main(["simulate", "--config", missing, "--out", str(tmp_path / "o.csv")]) == 1
    capsys.readouterr()


# ---------------------------------------------------------------- plot


def run_small_sweep(tmp_path, methods, values, replicates=2, seed=135):
    cfg = write(
        tmp_path / "cfg.json",
        json.dumps(
            minimal_config(
                methods=list(methods),
                vary={"param": "omega", "values": list(values)},
                replicates=replicates,
                seed=seed,
            )
        ),
    )
    out = tmp_path / "rows.csv"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    return out


def svg_root(path):
    return ET.fromstring(path.read_text(encoding="utf-8"))


def test_plot_single_method_structure(tmp_path):
    rows = run_small_sweep(tmp_path, ["svd"], [0.5, 1.0])
    out = tmp_path / "fig.svg"
    assert main(["plot", "--input", str(rows), "--out", str(out)]) == 0
    root = svg_root(out)
    polylines = root.findall(f".//{SVG_NS}polyline")
    assert len(polylines) == 1
    assert len(polylines[0].attrib["points"].split()) == 2
    circles = root.findall(f".//{SVG_NS}circle")
    assert len(circles) == 2


def test_plot_seven_method_legend(tmp_path):
    rows = run_small_sweep(
        tmp_path,
        ["svd", "dd", "hpca", "dhpca", "hpca_plus", "rmtfa", "si"],
        [1.0],
        replicates=1,
        seed=136,
    )
    out = tmp_path / "fig.svg"
    assert main(["plot", "--input", str(rows), "--out", str(out)]) == 0
    root = svg_root(out)
    assert len(root.findall(f".//{SVG_NS}polyline")) == 7
    texts = [t.text for t in root.findall(f".//{SVG_NS}text")]
    for label in ("SVD", "DD", "HPCA", "DHPCA", "HPCA+", "rMTFA", "SI"):
        assert texts.count(label) == 1


def test_plot_metadata_means_match_recomputation(tmp_path):
    rows_path = run_small_sweep(tmp_path, ["svd", "rmtfa"], [0.5, 1.0], replicates=3, seed=137)
    out = tmp_path / "fig.svg"
    assert main(["plot", "--input", str(rows_path), "--out", str(out)]) == 0
    root = svg_root(out)
    meta = root.find(f".//{SVG_NS}metadata")
    series = json.loads(meta.text)["series"]

    want = {}
    for line in rows_path.read_text().splitlines()[2:]:
        method, _, value, _, sin_t, _, status = line.split(",")
        assert status == "ok"
        want.setdefault(method, {}).setdefault(float(value), []).append(float(sin_t))
    for method, by_value in want.items():
        got = dict((x, y) for x, y in series[method])
        for value, ys in by_value.items():
            assert got[value] == pytest.approx(sum(ys) / len(ys), abs=1e-12)


def test_plot_deterministic(tmp_path):
    rows = run_small_sweep(tmp_path, ["svd"], [0.5, 1.0], seed=138)
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    assert main(["plot", "--input", str(rows), "--out", str(a)]) == 0
    assert main(["plot", "--input", str(rows), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_plot_malformed_csv(tmp_path, capsys):
    bad = write(tmp_path / "bad.csv", "method,oops\nsvd,1\n")
    assert main(["plot", "--input", bad, "--out", str(tmp_path / "fig.svg")]) == 1
    missing = str(tmp_path / "missing.csv")
    assert main(["plot", "--input", missing, "--out", str(tmp_path / "fig.svg")]) == 1
    capsys.readouterr()


def test_plot_empty_data(tmp_path, capsys):
    header_only = write(
        tmp_path / "empty.csv",
        "# hetero-spectra results v1\nmethod,param,value,replicate,sin_theta,wall_ms,status\n",
    )
    assert main(["plot", "--input", header_only, "--out", str(tmp_path / "fig.svg")]) == 2
    all_failed = write(
        tmp_path / "failed.csv",
        "# hetero-spectra results v1\n"
        "method,param,value,replicate,sin_theta,wall_ms,status\n"
        "svd,omega,1,0,nan,0,error: boom\n",
    )
    assert main(["plot", "--input", all_failed, "--out", str(tmp_path / "fig.svg")]) == 2
    capsys.readouterr()


def test_plot_skips_failed_rows(tmp_path):
    mixed = write(
        tmp_path / "mixed.csv",
        "# hetero-spectra results v1\n"
        "method,param,value,replicate,sin_theta,wall_ms,status\n"
        "svd,omega,1,0,0.25,0,ok\n"
        "svd,omega,1,1,nan,0,error: boom\n"
        "svd,omega,2,0,0.5,0,ok\n",
    )
    out = tmp_path / "fig.svg"
    assert main(["plot", "--input", mixed, "--out", str(out)]) == 0
    meta = svg_root(out).find(f".//{SVG_NS}metadata")
    series = json.loads(meta.text)["series"]
    assert series["svd"] == [[1.0, 0.25], [2.0, 0.5]]
