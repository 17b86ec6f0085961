import json
import warnings

import numpy as np
import pytest

from fodkit import io
from fodkit.cli import main


@pytest.fixture
def env(tmp_path, monkeypatch):
    monkeypatch.setenv("FODKIT_CACHE_DIR", str(tmp_path / "cache"))
    return tmp_path


@pytest.fixture
def cached(env):
    assert main(["precompute", "--out", str(env / "pre")]) == 0
    return env


def run(*argv):
    return main([str(a) for a in argv])


def test_precompute_dimensions_and_cache(cached, capsys):
    cache = cached / "cache"
    assert io.read_matrix(cache / "phi_hemi-fib41_l8.fkm").shape == (41, 45)
    assert io.read_matrix(cache / "phi_eval_ico4_l8.fkm").shape == (2562, 45)
    c = io.read_matrix(cache / "c_l8.fkm")
    cstar = io.read_matrix(cache / "cstar_l8.fkm")
    assert c.shape == (45, 511) and cstar.shape == (511, 45)
    assert io.read_matrix(cache / "a_hemi-fib41_b1000_ratio10_l8.fkm").shape == (41, 511)
    side = json.loads((cache / "c_l8.json").read_text())
    assert (side["l_max"], side["j_max"], side["gradient_grid"], side["eval_grid"]) == (8, 4, "hemi-fib41", "ico4")
    assert side["sha256"] == io.sha256_file(cache / "c_l8.fkm")
    capsys.readouterr()
    assert run("precompute", "--out", cached / "pre") == 0
    assert capsys.readouterr().out.count("cached") == 6
    assert (cached / "pre" / "provenance.json").exists()


def test_precompute_corruption(cached, capsys):
    path = cached / "cache" / "c_l8.fkm"
    data = bytearray(path.read_bytes())
    data[40] ^= 1
    path.write_bytes(bytes(data))
    assert run("precompute", "--strict", "--out", cached / "pre") == 2
    assert run("precompute", "--out", cached / "pre") == 0
    assert "written" in capsys.readouterr().out
    assert run("precompute", "--strict", "--out", cached / "pre") == 0


def test_fit_before_precompute(env, capsys):
    assert run("simulate", "--scenario", "1fib_b1000_n41_snr20", "--reps", 1, "--out", env / "sim") == 0
    code = run("fit", "--method", "sh-ridge", "--dataset", env / "sim" / "1fib_b1000_n41_snr20",
               "--out", env / "fit")
    assert code == 3
    assert "fodkit precompute --b 1000" in capsys.readouterr().err


def test_simulate_deterministic(env):
    for d in ("a", "b"):
        assert run("simulate", "--scenario", "2fib_sep60_b1000_n41_snr20", "--reps", 3,
                   "--seed", 9, "--out", env / d) == 0
    name = "2fib_sep60_b1000_n41_snr20"
    for rep in range(3):
        f = f"{name}/signal_rep{rep:03d}.csv"
        assert (env / "a" / f).read_bytes() == (env / "b" / f).read_bytes()
    text = (env / "a" / name / "signal_rep000.csv").read_bytes()
    assert text.startswith(b"replicate,gradient_index,theta,phi,y\r\n")
    assert text.count(b"\r\n") == 42
    truth = json.loads((env / "a" / name / "truth.json").read_text())
    assert truth["k"] == 2 and len(truth["f_star_l8"]) == 45
    assert (env / "a" / name / "provenance.json").exists()


def test_unknown_scenario(env):
    assert run("simulate", "--scenario", "5fib", "--out", env / "x") == 2


def test_bad_config(env):
    cfg = env / "c.json"
    cfg.write_text('{"bogus": 1}')
    assert run("simulate", "--scenario", "0fib_b1000_n41_snr20", "--config", cfg, "--out", env / "x") == 2


def test_fit_peaks_mesh_pipeline(cached, capsys):
    sid = "2fib_sep90_b1000_n41_snr20"
    sim = cached / "sim"
    assert run("simulate", "--scenario", sid, "--reps", 2, "--out", sim) == 0
    ds = sim / sid
    assert run("fit", "--method", "super-csd", "--dataset", ds, "--out", cached / "bad") == 2
    assert run("fit", "--method", "sh-ridge", "--dataset", ds, "--out", cached / "fit", "--grid-binary") == 0
    est = json.loads((cached / "fit" / "estimate_rep000.json").read_text())
    assert est["method"] == "sh_ridge"
    diag = est["diagnostics"]
    assert {"bic", "df", "lambdas", "rss"} <= set(diag)
    assert est["lambda"] == pytest.approx(diag["lambdas"][int(np.argmin(diag["bic"]))])
    assert len(est["grid_values"]) == 2562
    assert io.read_matrix(cached / "fit" / "estimate_rep000_grid.fkm").shape == (2562, 1)
    assert (cached / "fit" / "provenance.json").exists()

    assert run("fit", "--method", "super-csd", "--lmax-s", 12, "--dataset", ds, "--out", cached / "scsd") == 0
    assert run("peaks", "--estimates", cached / "scsd", "--out", cached / "pk") == 0
    pk = json.loads((cached / "pk" / "peaks_rep000.json").read_text())
    assert len(pk["peaks"]) == 2
    assert pk["params"]["alpha"] == 0.25

    mesh = cached / "glyph.obj"
    assert run("export-mesh", "--estimate", cached / "fit" / "estimate_rep000.json", "--mesh", mesh,
               "--out", cached / "m") == 0
    lines = mesh.read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 2562
    assert sum(l.startswith("f ") for l in lines) == 5120


def test_isotropic_sn_lasso_and_degenerate_mesh(cached):
    sid = "0fib_b1000_n41_snr20"
    assert run("simulate", "--scenario", sid, "--reps", 1, "--seed", 3, "--out", cached / "sim") == 0
    assert run("fit", "--method", "sn-lasso", "--dataset", cached / "sim" / sid, "--out", cached / "fit") == 0
    est_path = cached / "fit" / "estimate_rep000.json"
    est = json.loads(est_path.read_text())
    assert est["method"] == "sn_lasso"
    assert est["beta"]["support"] == [0]
    assert run("peaks", "--estimates", est_path, "--out", cached / "pk") == 0
    pk = json.loads((cached / "pk" / "peaks_rep000.json").read_text())
    assert pk["peaks"] == []

    # a field with no positive mass falls back to the unit sphere
    est["grid_values"] = [-1.0] * 2562
    est_path.write_text(json.dumps(est))
    mesh = cached / "unit.obj"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert run("export-mesh", "--estimate", est_path, "--mesh", mesh) == 0
    assert any("unit sphere" in str(w.message) for w in caught)
    verts = np.array([[float(t) for t in l.split()[1:]] for l in mesh.read_text().splitlines() if l.startswith("v ")])
    assert np.allclose(np.linalg.norm(verts, axis=1), 1.0, atol=1e-8)


def _mesh_vertices(path):
    return np.array([[float(t) for t in l.split()[1:]] for l in path.read_text().splitlines() if l.startswith("v ")])


def test_mesh_radii(ico4, tmp_path):
    import math

    from fodkit.cli import mesh_obj
    from fodkit.peaks import angular_error, detect_peaks

    iso = tmp_path / "iso.obj"
    iso.write_text(mesh_obj(ico4, np.full(len(ico4), 1 / (4 * math.pi))))
    assert np.allclose(np.linalg.norm(_mesh_vertices(iso), axis=1), 1 / (4 * math.pi))

    axes = np.array([[math.cos(0.5), math.sin(0.5), 0.0], [math.cos(0.5), -math.sin(0.5), 0.0]])
    values = np.sum(np.exp(8.0 * ((ico4.xyz @ axes.T) ** 2 - 1.0)), axis=1)
    two = tmp_path / "two.obj"
    two.write_text(mesh_obj(ico4, values))
    r = np.linalg.norm(_mesh_vertices(two), axis=1)
    peaks = detect_peaks(values, ico4)
    assert len(peaks) == 2
    top = ico4.xyz[np.argmax(r)]
    assert min(angular_error(top, d) for d in peaks.directions) < 3.0
