import json

import numpy as np
import pytest
from click.testing import CliRunner

from vsig.cli import EXIT_IO, EXIT_NUMERIC, EXIT_PARSE, EXIT_VALIDATION, args_from_manifest, main
from vsig.experiments import goursat_test_kernel
from vsig.io import read_series

EXP = json.dumps({"components": [{"kernel": {"type": "exponential", "alpha": 1.0, "lam": 0.8}}]})
CONST = json.dumps({"components": [{"kernel": {"type": "constant"}}]})


@pytest.fixture(scope="module")
def pathdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("paths")
    res = CliRunner().invoke(main, ["gen-paths", "--seed", "3", "-M", "2", "-J", "16", "--outdir", str(d)])
    assert res.exit_code == 0, res.output
    return d


def fssk_json(lam, b):
    return json.dumps({"jordan": {"blocks": [{"type": "real", "lambda": lam, "size": 1}]}, "b": [[b]],
                       "A": [np.eye(3).tolist()]})


def invoke(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env)


def test_gen_paths_manifest(pathdir):
    man = json.loads((pathdir / "manifest.json").read_text())
    assert man["files"] == ["path_0000.csv", "path_0001.csv"]
    assert man["params"]["seed"] == 3


def test_quad_manifest_records_exponents(pathdir, tmp_path):
    p = pathdir / "path_0000.csv"
    res = invoke("quad", p, "--order", 1, "--beta", 0.6, "-N", 3,
                 "--out", tmp_path / "v.json", "--manifest", tmp_path / "m.json")
    assert res.exit_code == 0, res.output
    man = json.loads((tmp_path / "m.json").read_text())
    assert sorted(man["B"]["rhos"]) == pytest.approx([0.0, 0.6, 1.0])
    for key in ("kernel_spec_hash", "grid", "op_counts", "wall_time_s", "tolerances", "inputs"):
        assert key in man
    assert man["op_counts"]["total"] > 0
    assert len(read_series(tmp_path / "v.json")) == 17


def test_cross_command_agreement(pathdir, tmp_path):
    p = pathdir / "path_0001.csv"
    zero = fssk_json(0.0, 1.0)
    assert invoke("quad", p, "--kernel", CONST, "-N", 3, "--out", tmp_path / "q.json").exit_code == 0
    r = invoke("fssk", p, "--kernel", zero, "-N", 3, "--out", tmp_path / "f.json")
    assert r.exit_code == 0, r.output
    q, f = read_series(tmp_path / "q.json")[-1], read_series(tmp_path / "f.json")[-1]
    assert q.max_abs_diff(f) < 1e-10
    assert invoke("quad", p, "--kernel", EXP, "-N", 3, "--out", tmp_path / "qe.json").exit_code == 0
    assert invoke("fft", p, "--kernel", EXP, "-N", 3, "--out", tmp_path / "fe.json").exit_code == 0
    qe, fe = read_series(tmp_path / "qe.json")[-1], read_series(tmp_path / "fe.json")[-1]
    assert qe.max_abs_diff(fe) < 1e-9


def test_jobs_split_output_dir(pathdir, tmp_path):
    ps = [pathdir / "path_0000.csv", pathdir / "path_0001.csv"]
    res = invoke("quad", *ps, "--kernel", EXP, "-N", 2, "--jobs", 2, "--out", tmp_path / "out",
                 "--manifest", tmp_path / "m.json")
    assert res.exit_code == 0, res.output
    assert sorted(f.name for f in (tmp_path / "out").iterdir()) == ["path_0000.json", "path_0001.json"]


def test_manifest_rerun_is_bit_identical(pathdir, tmp_path):
    p = pathdir / "path_0000.csv"
    env = {"VSIG_DETERMINISTIC": "1"}
    assert invoke("fft", p, "--beta", 0.6, "--order", 2, "-N", 3, "--out", tmp_path / "a.bin",
                  "--manifest", tmp_path / "m.json", env=env).exit_code == 0
    argv = args_from_manifest(json.loads((tmp_path / "m.json").read_text()))
    res = CliRunner().invoke(main, argv + ["--out", str(tmp_path / "b.bin")], env=env)
    assert res.exit_code == 0, res.output
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_sigkernel_output(pathdir, tmp_path):
    kern = json.dumps(goursat_test_kernel().to_json())
    res = invoke("sigkernel", pathdir / "path_0000.csv", pathdir / "path_0001.csv", "--kernel", kern,
                 "--dyadic", 1, "--full-grid", tmp_path / "g.json")
    assert res.exit_code == 0, res.output
    out = json.loads(res.output)
    assert out["grid_dims"] == [32, 32] and np.isfinite(out["kappa"])
    full = json.loads((tmp_path / "g.json").read_text())
    assert full["kappa"] == pytest.approx(out["kappa"])
    swapped = json.loads(invoke("sigkernel", pathdir / "path_0001.csv", pathdir / "path_0000.csv",
                                "--kernel", kern, "--dyadic", 1).output)
    assert swapped["kappa"] == pytest.approx(out["kappa"], abs=1e-13)


def test_exit_codes(pathdir, tmp_path):
    p = pathdir / "path_0000.csv"
    assert invoke("quad", p, "--kernel", "{broken").exit_code == EXIT_PARSE
    assert invoke("quad", p, "--order", 1).exit_code == EXIT_VALIDATION
    assert invoke("sigkernel", p, p, "--kernel", fssk_json(1e12, 1e200)).exit_code == EXIT_NUMERIC
    assert invoke("sigkernel", p, p, "--kernel", fssk_json(-1.0, 1.0)).exit_code == EXIT_VALIDATION
    assert invoke("quad", p, "--kernel", EXP, "--out", tmp_path / "missing" / "x" / "v.json").exit_code == EXIT_IO


@pytest.mark.parametrize("suite", ["scaling", "oracle"])
def test_validate_suites(suite, tmp_path):
    res = invoke("validate", suite, "-J", 16, "--levels", 3, "--format", "csv", "--out", tmp_path / "r.csv")
    assert res.exit_code == 0, res.output
    assert (tmp_path / "r.csv").read_text().count("\n") >= 2


def test_validate_convergence_json():
    res = invoke("validate", "convergence", "-J", 8, "-N", 3, "-M", 2, "--levels", 3)
    assert res.exit_code == 0, res.output
    rep = json.loads(res.output)
    assert set(rep["slopes"]) == {"0", "1"}


def test_bench():
    res = invoke("bench", "-J", 8, "--dyadic", 0, "--repeats", 1)
    assert res.exit_code == 0, res.output
    assert "numpy" in json.loads(res.output)["seconds"]
