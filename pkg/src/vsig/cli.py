"""``vsig`` command-line interface.

Exit codes: 0 success, 2 usage (click), 3 parse, 4 validation, 5 numeric,
6 I/O. Failures print a one-line JSON object ``{"error": kind, "message": ...}``
on stderr.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path as FsPath
from typing import Any, Callable, Sequence

import click
import numpy as np

from . import __version__, opcount
from ._accel import HAVE_NUMBA, deterministic
from .bench import bench_goursat
from .experiments import SCALING_BOUNDS, convergence_study, oracle_study, scaling_study
from .fft_scheme import run_fft_batch, run_fft_scheme
from .fssk import run_fssk
from .io import (
    ParseError,
    fssk_data_from_json,
    load_path,
    read_json,
    spec_from_json,
    spec_hash,
    to_jsonable,
    write_series,
)
from .oracles import OracleError
from .paths import FINE_FACTOR, gen_paths
from .quad_scheme import ExponentSet, run_scheme
from .sig_kernel import SERIES_THRESHOLD, StaticLift, run_goursat

EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 3, 4, 5, 6
TOLERANCES = {"weight_quad_rtol": 1e-11, "special_fn_eps": 1e-16, "phi_series_threshold": SERIES_THRESHOLD}


class NumericError(RuntimeError):
    """Non-finite output or a failed numerical sub-step."""


def _fail(kind: str, code: int, exc: BaseException) -> None:
    click.echo(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), err=True)
    sys.exit(code)


def _guarded(fn: Callable[[], None]) -> None:
    try:
        fn()
    except ParseError as e:
        _fail("parse", EXIT_PARSE, e)
    except (NumericError, OracleError, FloatingPointError, np.linalg.LinAlgError) as e:
        _fail("numeric", EXIT_NUMERIC, e)
    except (ValueError, TypeError, KeyError) as e:
        _fail("validation", EXIT_VALIDATION, e)
    except OSError as e:
        _fail("io", EXIT_IO, e)


def _sha256_file(p: str) -> str:
    return hashlib.sha256(FsPath(p).read_bytes()).hexdigest()


def _load_kernel_obj(kernel: str | None, beta: float | None) -> dict | None:
    """``--kernel`` takes a file name or inline JSON; a bare ``--beta`` means a fractional kernel."""
    if kernel is None:
        if beta is None:
            return None
        return {"components": [{"kernel": {"type": "fractional", "beta": beta}}]}
    if kernel.lstrip().startswith("{"):
        try:
            return json.loads(kernel)
        except json.JSONDecodeError as e:
            raise ParseError(f"inline kernel JSON: {e}") from e
    return read_json(kernel)


def _check_finite(series) -> None:
    for t in series:
        if not np.all(np.isfinite(t.flat())):
            raise NumericError("non-finite tensor entries in output")


def _effective_jobs(jobs: int) -> int:
    return 1 if deterministic() else max(1, jobs)


def _grid_info(paths) -> dict:
    p = paths[0]
    return {"J": p.J, "d": p.d, "t0": float(p.t[0]), "T": float(p.t[-1]),
            "uniform": all(q.is_uniform() for q in paths), "n_paths": len(paths)}


def _out_targets(out: str | None, inputs: Sequence[str], suffix: str) -> list[str | None]:
    if out is None:
        return [None] * len(inputs)
    if len(inputs) == 1 and not out.endswith(os.sep) and not FsPath(out).is_dir():
        return [out]
    FsPath(out).mkdir(parents=True, exist_ok=True)
    return [str(FsPath(out) / (FsPath(i).stem + suffix)) for i in inputs]


def _emit_manifest(manifest: dict, manifest_path: str | None) -> None:
    text = json.dumps(to_jsonable(manifest), indent=2, sort_keys=True)
    if manifest_path:
        FsPath(manifest_path).write_text(text + "\n")
    else:
        click.echo(text)


# workers live at module level so they pickle into subprocesses


def _quad_worker(args: tuple) -> tuple[list, dict, dict]:
    path, spec_obj, N, B_json = args
    spec = spec_from_json(spec_obj, path.d)
    B = ExponentSet(tuple(B_json["rhos"]), tuple(B_json["thetas"]))
    with opcount.counting() as c:
        res = run_scheme(path, spec, N, B)
    return res.v, res.manifest, dict(c)


def _fssk_worker(args: tuple) -> tuple[list, dict, dict]:
    path, data_obj, N, mquad = args
    data = fssk_data_from_json(data_obj, path.d)
    with opcount.counting() as c:
        res = run_fssk(path, data, N, mquad=mquad)
    return res.v, res.manifest, dict(c)


def _fft_worker(args: tuple) -> tuple[list, dict, dict]:
    paths, spec_obj, N, B_json = args
    spec = spec_from_json(spec_obj, paths[0].d)
    B = ExponentSet(tuple(B_json["rhos"]), tuple(B_json["thetas"]))
    with opcount.counting() as c:
        if len(paths) == 1:
            res = run_fft_scheme(paths[0], spec, N, B)
            return [res.v], res.manifest, dict(c)
        vs = run_fft_batch(paths, spec, N, B)
    return vs, {"scheme": "fft", "J": paths[0].J, "N": N}, dict(c)


def _map(worker, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
        return list(ex.map(worker, tasks))


def _merge_counts(parts: Sequence[dict]) -> dict:
    tot: dict[str, int] = {}
    for c in parts:
        for k, v in c.items():
            tot[k] = tot.get(k, 0) + int(v)
    tot["total"] = sum(v for k, v in tot.items())
    return tot


def args_from_manifest(manifest: dict) -> list[str]:
    """Rebuild the argv that reproduces a run from its manifest and input files."""
    cmd = manifest["command"]
    argv = [cmd, *manifest["inputs"]["paths"]]
    for k, v in manifest["params"].items():
        flag = ("-" + k) if len(k) == 1 else "--" + k.replace("_", "-")
        if v is None:
            continue
        if isinstance(v, bool):
            if v:
                argv.append(flag)
            continue
        argv += [flag, str(v) if not isinstance(v, (dict, list)) else json.dumps(v)]
    return argv


# ---------------------------------------------------------------------------


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="vsig")
def main() -> None:
    """Volterra signatures and signature kernels."""


@main.command("gen-paths")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-M", "M", type=int, default=16, show_default=True, help="Number of paths.")
@click.option("-J", "J", type=int, default=64, show_default=True, help="Grid intervals per path.")
@click.option("--fine-factor", type=int, default=FINE_FACTOR, show_default=True)
@click.option("--outdir", type=click.Path(file_okay=False), required=True)
def gen_paths_cmd(seed: int, M: int, J: int, fine_factor: int, outdir: str) -> None:
    """Write M sample paths in R^3 as CSV files plus a manifest."""

    def run() -> None:
        paths = gen_paths(seed, M, J, fine_factor)
        out = FsPath(outdir)
        out.mkdir(parents=True, exist_ok=True)
        names = []
        for i, p in enumerate(paths):
            name = out / f"path_{i:04d}.csv"
            p.save(name)
            names.append(name.name)
        _emit_manifest({"command": "gen-paths", "version": __version__,
                        "params": {"seed": seed, "M": M, "J": J, "fine_factor": fine_factor},
                        "files": names}, str(out / "manifest.json"))
        click.echo(json.dumps({"written": len(names), "outdir": str(out)}))

    _guarded(run)


def _scheme_options(f):
    f = click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False), default=None,
                     help="Manifest file (stdout when omitted).")(f)
    f = click.option("--out", type=click.Path(), default=None,
                     help="Tensor output file (.json or .bin), or a directory for several paths.")(f)
    f = click.option("--jobs", type=int, default=1, show_default=True, help="Worker processes over paths.")(f)
    f = click.option("-N", "N", type=int, default=4, show_default=True, help="Truncation level.")(f)
    f = click.option("--kernel", type=str, default=None, help="KernelSpec JSON file or inline JSON.")(f)
    return click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))(f)


def _run_series_command(command: str, paths_in: Sequence[str], kernel_obj: dict, N: int, params: dict,
                        worker, tasks_of, B: ExponentSet | None, out: str | None, manifest_path: str | None,
                        jobs: int) -> None:
    paths = [load_path(p) for p in paths_in]
    t0 = time.perf_counter()
    tasks = tasks_of(paths)
    results = _map(worker, tasks, _effective_jobs(jobs))
    wall = time.perf_counter() - t0
    series = [v for vs, _, _ in results for v in (vs if command == "fft" else [vs])]
    for s in series:
        _check_finite(s)
    for target, s in zip(_out_targets(out, paths_in, ".json"), series):
        if target:
            write_series(target, s)
    engine = [m for _, m, _ in results]
    manifest = {
        "command": command,
        "version": __version__,
        "inputs": {"paths": [str(FsPath(p).resolve()) for p in paths_in],
                   "path_sha256": [_sha256_file(p) for p in paths_in]},
        "params": params,
        "kernel_spec": kernel_obj,
        "kernel_spec_hash": spec_hash(kernel_obj),
        "scheme": command,
        "grid": _grid_info(paths),
        "N": N,
        "B": B.to_json() if B is not None else None,
        "tolerances": TOLERANCES,
        "op_counts": _merge_counts([c for _, _, c in results]),
        "wall_time_s": wall,
        "fine_factor": FINE_FACTOR,
        "deterministic": deterministic(),
        "numba": HAVE_NUMBA,
        "engine": engine[0] if len(engine) == 1 else engine,
    }
    _emit_manifest(manifest, manifest_path)


def _resolve_B(order: int, beta: float | None, rhos: str | None) -> ExponentSet:
    if rhos:
        vals = tuple(float(r) for r in rhos.split(","))
        return ExponentSet(vals, tuple(np.linspace(0, 1, len(vals)))) if len(vals) > 1 else ExponentSet(vals)
    if order > 0 and beta is None:
        raise ValueError("--order 1 and 2 need --beta")
    return ExponentSet.for_order(order, beta if beta is not None else 0.0)


@main.command("quad")
@_scheme_options
@click.option("--order", type=click.IntRange(0, 2), default=0, show_default=True, help="Interpolation order.")
@click.option("--beta", type=float, default=None, help="Fractional exponent (also the default kernel).")
def quad_cmd(paths, kernel, N, jobs, out, manifest_path, order, beta) -> None:
    """Product-integration scheme on each path."""

    def run() -> None:
        kobj = _load_kernel_obj(kernel, beta)
        if kobj is None:
            raise ValueError("give --kernel or --beta")
        B = _resolve_B(order, beta, None)
        params = {"kernel": json.dumps(kobj, sort_keys=True), "N": N, "order": order, "beta": beta, "jobs": jobs}
        _run_series_command("quad", paths, kobj, N, params, _quad_worker,
                            lambda ps: [(p, kobj, N, B.to_json()) for p in ps], B, out, manifest_path, jobs)

    _guarded(run)


@main.command("fft")
@_scheme_options
@click.option("--order", type=click.IntRange(0, 2), default=0, show_default=True)
@click.option("--beta", type=float, default=None)
def fft_cmd(paths, kernel, N, jobs, out, manifest_path, order, beta) -> None:
    """FFT-accelerated scheme; all paths must share one uniform grid."""

    def run() -> None:
        kobj = _load_kernel_obj(kernel, beta)
        if kobj is None:
            raise ValueError("give --kernel or --beta")
        B = _resolve_B(order, beta, None)
        params = {"kernel": json.dumps(kobj, sort_keys=True), "N": N, "order": order, "beta": beta, "jobs": jobs}

        def tasks_of(ps):
            n = _effective_jobs(jobs)
            chunks = [list(c) for c in np.array_split(np.arange(len(ps)), min(n, len(ps))) if len(c)]
            return [([ps[i] for i in c], kobj, N, B.to_json()) for c in chunks]

        _run_series_command("fft", paths, kobj, N, params, _fft_worker, tasks_of, B, out, manifest_path, jobs)

    _guarded(run)


@main.command("fssk")
@_scheme_options
@click.option("--mquad", type=int, default=32, show_default=True, help="Contour quadrature nodes.")
def fssk_cmd(paths, kernel, N, jobs, out, manifest_path, mquad) -> None:
    """Exact finite-state-space scheme; kernel is FsskData or a state-space KernelSpec."""

    def run() -> None:
        kobj = _load_kernel_obj(kernel, None)
        if kobj is None:
            raise ValueError("give --kernel")
        params = {"kernel": json.dumps(kobj, sort_keys=True), "N": N, "mquad": mquad, "jobs": jobs}
        _run_series_command("fssk", paths, kobj, N, params, _fssk_worker,
                            lambda ps: [(p, kobj, N, mquad) for p in ps], None, out, manifest_path, jobs)

    _guarded(run)


@main.command("sigkernel")
@click.argument("x_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("w_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--kernel", type=str, required=True, help="FsskData JSON file or inline JSON.")
@click.option("--scheme", type=click.Choice(["pc", "exp", "naive"]), default="pc", show_default=True)
@click.option("--dyadic", type=int, default=0, show_default=True, help="Refinement level lambda.")
@click.option("--static-gram", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON Gram table of the static kernel on the two grids.")
@click.option("--full-grid", type=click.Path(dir_okay=False), default=None, help="Dump eta and K to this JSON file.")
@click.option("--backend", type=click.Choice(["auto", "numba", "numpy"]), default="auto", show_default=True)
def sigkernel_cmd(x_path, w_path, kernel, scheme, dyadic, static_gram, full_grid, backend) -> None:
    """Signature kernel of two paths via the Goursat solver."""

    def run() -> None:
        x, w = load_path(x_path), load_path(w_path)
        data = fssk_data_from_json(_load_kernel_obj(kernel, None), x.d)
        lift = StaticLift.from_gram(read_json(static_gram)) if static_gram else None
        b = "numba" if deterministic() and HAVE_NUMBA and backend == "auto" else backend
        t0 = time.perf_counter()
        with opcount.counting() as c:
            grid = run_goursat(x, w, data, lift=lift, scheme=scheme, lam=dyadic, backend=b)
        wall = time.perf_counter() - t0
        if not np.isfinite(grid.kappa):
            raise NumericError("non-finite kernel value")
        if full_grid:
            FsPath(full_grid).write_text(json.dumps(to_jsonable(grid.to_json(full=True))))
        click.echo(json.dumps(to_jsonable({"kappa": grid.kappa, "grid_dims": list(grid.dims),
                                           "op_count": _merge_counts([dict(c)]), "wall_time_s": wall,
                                           "manifest": grid.manifest})))

    _guarded(run)


def _rows_to_csv(rows: list[dict]) -> str:
    buf = _io.StringIO()
    keys = list(dict.fromkeys(k for r in rows for k in r))
    wr = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    wr.writeheader()
    wr.writerows(rows)
    return buf.getvalue()


@main.command("validate")
@click.argument("suite", type=click.Choice(["convergence", "scaling", "oracle"]))
@click.option("--beta", type=float, default=0.6, show_default=True)
@click.option("-J", "J", type=int, default=32, show_default=True)
@click.option("-N", "N", type=int, default=6, show_default=True)
@click.option("-M", "M", type=int, default=8, show_default=True)
@click.option("--levels", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def validate_cmd(suite, beta, J, N, M, levels, seed, fmt, out) -> None:
    """Convergence slopes, op-count scaling or oracle agreement reports."""

    def run() -> None:
        rows: list[dict] = []
        if suite == "convergence":
            rep = convergence_study(beta, (0, 1), J=J, N=N, M=M, seed=seed, levels=levels)
            report: Any = rep.to_json()
            for o, errs in rep.errors.items():
                rows += [{"order": o, "level": l, "error": e, "slope": ""} for l, e in enumerate(errs)]
                rows.append({"order": o, "level": "fit", "error": "", "slope": rep.slopes[o]})
        elif suite == "scaling":
            report = scaling_study(J=J, seed=seed)
            for k, r in report.items():
                lo, hi = SCALING_BOUNDS[k]
                r["bounds"] = [lo, hi]
                r["ok"] = lo <= r["ratio"] <= hi
                rows.append({"case": k, "ratio": r["ratio"], "low": lo, "high": hi, "ok": r["ok"]})
        else:
            report = oracle_study(beta=beta, levels=levels, seed=seed)
            rows = [{"level": l, "error": e} for l, e in enumerate(report["errors"])]
        text = _rows_to_csv(rows) if fmt == "csv" else json.dumps(to_jsonable(report), indent=2)
        if out:
            FsPath(out).write_text(text)
        else:
            click.echo(text.rstrip("\n"))

    _guarded(run)


@main.command("bench")
@click.option("-J", "J", type=int, default=32, show_default=True)
@click.option("--dyadic", type=int, default=2, show_default=True)
@click.option("--scheme", type=click.Choice(["pc", "exp", "naive"]), default="pc", show_default=True)
@click.option("--repeats", type=int, default=3, show_default=True)
def bench_cmd(J, dyadic, scheme, repeats) -> None:
    """Time the Goursat sweep with the compiled and the numpy backend."""
    _guarded(lambda: click.echo(json.dumps(bench_goursat(J, dyadic, scheme, repeats), indent=2)))


if __name__ == "__main__":  # pragma: no cover
    main()
