"""Command-line entry point: ``thomas-lab run | validate | report``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .clusters import (
    ClusterError,
    cluster_members,
    cluster_norm,
    condition_Aq_fit,
    lemma_sums,
    weighted_cluster_sum,
)
from .config import ConfigError, build_model, consistency_warnings, content_hash, load
from .free_operator import NonInvertibleError, QuasiMomentum, build_modes, lambda_rule
from .galerkin import AssemblyError
from .thomas import (
    Prober,
    band_ac_indicator,
    potential_c_delta,
    robin_trace_decay,
    thomas_decay_scan,
)

EXIT_OK, EXIT_ASSERTION, EXIT_SCHEMA, EXIT_NUMERIC = 0, 1, 2, 3


class NumericFailure(RuntimeError):
    pass


def _grid(spec, default=None) -> np.ndarray:
    if spec is None:
        if default is None:
            raise ConfigError("task: a grid is required")
        return np.asarray(default, dtype=float)
    if isinstance(spec, dict):
        if spec.get("spacing", "linear") == "log":
            return np.geomspace(spec["start"], spec["stop"], spec["num"])
        return np.linspace(spec["start"], spec["stop"], spec["num"])
    return np.asarray(spec, dtype=float)


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, rows: list[dict]) -> None:
    cols = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r[c]) for c in cols])


def _finite(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# tasks: each returns (csv rows, summary fields, assertion outcomes)
# ---------------------------------------------------------------------------


def _task_thomas(cfg, model, seed, threads):
    task, num, want = cfg["task"], cfg["numeric"], cfg["assertions"]
    taus = _grid(task.get("taus"))
    lambdas = [complex(*l) if isinstance(l, list) else complex(l) for l in task.get("lambdas", [0.0])]
    xi = task.get("xi_perp")
    rows, fits, checks = [], [], {}
    for lam in lambdas:
        scan = thomas_decay_scan(model, taus, lam, xi, num.get("lambda_max"), num.get("margin", 100.0),
                                 task.get("tau_min"), n_jobs=threads)
        for r in scan.rows():
            rows.append({"lambda_re": lam.real, "lambda_im": lam.imag, **r})
        fits.append({"lambda": [lam.real, lam.imag], "slope": _finite(scan.slope), "C": _finite(scan.constant),
                     "residual": _finite(scan.residual), "tau_min": scan.tau_min, "lambda_max": scan.lambda_max})
        tag = f"lambda={lam.real!r}{lam.imag:+}j"
        if "slope_max" in want:
            checks[f"slope_max[{tag}]"] = bool(scan.slope <= want["slope_max"])
        if "slope_min" in want:
            checks[f"slope_min[{tag}]"] = bool(scan.slope >= want["slope_min"])
        if "slope_target" in want:
            target, tol = want["slope_target"]
            checks[f"slope_target[{tag}]"] = bool(abs(scan.slope - target) <= tol)
        if want.get("free_bound"):
            prod = scan.norms * np.abs(scan.taus) * 2 * math.pi
            checks[f"free_bound[{tag}]"] = bool(np.all(prod <= 1 + 1e-12))
        if not math.isfinite(scan.constant):
            checks[f"finite_constant[{tag}]"] = False
    return rows, {"fits": fits}, checks


def _task_bands(cfg, model, seed, threads):
    task, num, want = cfg["task"], cfg["numeric"], cfg["assertions"]
    thetas = _grid(task.get("thetas"), np.linspace(0.0, 2 * math.pi, 64))
    n_bands = task.get("n_bands", 8)
    lam_max = num.get("lambda_max", 400.0)
    ind = band_ac_indicator(model, n_bands, thetas, lam_max, task.get("xi_perp"), n_jobs=threads)
    rows = []
    for i, th in enumerate(ind.table.thetas.tolist()):
        row = {"theta": th}
        row.update({f"band_{b}": float(ind.table.bands[i, b]) for b in range(ind.table.n_bands)})
        rows.append(row)
    summary = {"variation": ind.variation.tolist(), "flat_bands": ind.flat_bands.tolist(),
               "threshold": ind.threshold, "lambda_max": lam_max}
    checks = {}
    if "min_variation" in want:
        checks["min_variation"] = bool(ind.variation.min() > want["min_variation"])
    if "expect_flat" in want:
        checks["expect_flat"] = bool((ind.flat_bands.size > 0) == want["expect_flat"])
    return rows, summary, checks


def _context(cfg, model):
    task, num = cfg["task"], cfg["numeric"]
    k_hi = task.get("k_range", [1, 10])[1]
    lam_max = num.get("lambda_max", float(k_hi) ** 2)
    xi = task.get("xi_perp", [0.0] * model.lattice.dim)
    if task.get("context", "cross_section") == "fiber":
        return model.modes(QuasiMomentum(np.asarray(xi, dtype=float)), lam_max)
    return build_modes(None, model.cross, QuasiMomentum(np.zeros(0)), lam_max)


def _task_clusters(cfg, model, seed, threads):
    task, want = cfg["task"], cfg["assertions"]
    ctx = _context(cfg, model)
    k0, k1 = task.get("k_range", [1, 10])
    qs = [math.inf if q == "inf" else float(q) for q in task.get("q_list", ["inf"])]
    starts = task.get("starts", 32)
    max_iter = task.get("max_iter", 30)
    rows, fits, checks = [], [], {}
    for q in qs:
        reports = [cluster_norm(cluster_members(ctx, k), q, starts=starts, seed=seed, max_iter=max_iter) for k in range(k0, k1 + 1)]
        rows.extend(r.row() for r in reports)
        fit = condition_Aq_fit([r.k for r in reports], [r.lower for r in reports], q)
        fits.append({"q": "inf" if math.isinf(q) else q, "slope": fit.slope, "epsilon": fit.epsilon,
                     "residual": fit.residual, "k_range": list(fit.k_range), "condition_holds": fit.condition_holds})
        tag = "inf" if math.isinf(q) else repr(q)
        if "slope_max" in want:
            checks[f"slope_max[q={tag}]"] = bool(fit.slope <= want["slope_max"])
        if "slope_min" in want:
            checks[f"slope_min[q={tag}]"] = bool(fit.slope >= want["slope_min"])
        if "slope_target" in want:
            target, tol = want["slope_target"]
            checks[f"slope_target[q={tag}]"] = bool(abs(fit.slope - target) <= tol)
    for r in rows:
        r["q"] = "inf" if math.isinf(r["q"]) else r["q"]
    return rows, {"fits": fits, "lambda_max": ctx.lambda_max}, checks


def _task_lemma(cfg, model, seed, threads):
    task, num, want = cfg["task"], cfg["numeric"], cfg["assertions"]
    eps = task.get("eps", 0.1)
    taus = _grid(task.get("taus"), np.geomspace(2.0, 1e4, 50))
    weighted = task.get("weighted", False)
    ctx = None
    if weighted:
        k_exact = task.get("k_exact", 40)
        lam_max = num.get("lambda_max", float(k_exact) ** 2)
        xi = task.get("xi_perp", [0.0] * model.lattice.dim)
        ctx = model.modes(QuasiMomentum(np.asarray(xi, dtype=float)), lam_max)
    rows = []
    for t in taus.tolist():
        s = lemma_sums(eps, t)
        row = {"tau": t, "s1": s.s1, "s2": s.s2, "tail_bound": s.tail_bound}
        if weighted:
            w = weighted_cluster_sum(eps, t, ctx, task.get("k_exact", 40))
            row.update({"weighted": w.value, "exceptional_k": w.exceptional_k,
                        "exceptional_constant": w.exceptional_constant})
        rows.append(row)
    key = "weighted" if weighted else "s1"
    vals = np.array([r[key] for r in rows]) + (0 if weighted else np.array([r["s2"] for r in rows]))
    tv = np.array([r["tau"] for r in rows])
    checks = {}
    if want.get("uniform_bound"):
        finite = bool(np.all(np.isfinite(vals)))
        hi, lo = tv >= 1e3, tv < 1e3
        bounded = (not hi.any() or not lo.any()) or bool(vals[hi].max() <= vals[lo].max())
        checks["uniform_bound"] = finite and bounded
    return rows, {"eps": eps, "max": float(vals.max()), "argmax_tau": float(tv[vals.argmax()])}, checks


def _task_robin(cfg, model, seed, threads):
    task, num, want = cfg["task"], cfg["numeric"], cfg["assertions"]
    if model.sigma is None:
        raise ConfigError("model/sigma: required for robin-trace")
    taus = _grid(task.get("taus"))
    scale = task.get("scale", 1.0)
    sigma = model.sigma.scaled(scale)
    rep = robin_trace_decay(model, sigma, taus, num.get("lambda_max"), num.get("margin", 100.0),
                            task.get("ny", 256), task.get("xi_perp"), n_jobs=threads)
    rows = rep.rows()
    checks = {}
    ratio = float(rep.values[-1] / rep.values[0]) if rep.values[0] > 0 else 0.0
    if "decay_ratio_max" in want:
        checks["decay_ratio_max"] = bool(ratio < want["decay_ratio_max"])
    return rows, {"ratio_last_first": ratio, "scale": scale}, checks


def _task_probe(cfg, model, seed, threads):
    task, num, want = cfg["task"], cfg["numeric"], cfg["assertions"]
    tau = task.get("tau", 100.0)
    delta = task.get("delta", 0.1)
    p = task.get("p", 2.0)
    prober = Prober(model, tau, num.get("lambda_max"), task.get("xi_perp"), num.get("margin", 100.0))
    c_delta = potential_c_delta(model, p, delta)
    rng = np.random.Generator(np.random.Philox(key=seed))
    rows = []
    for i in range(task.get("samples", 100)):
        r = prober.probe(prober.random_unit(rng), delta, c_delta)
        rows.append({"sample": i, "free_re": r.free_term.real, "free_im": r.free_term.imag,
                     "potential_re": r.potential_term.real, "potential_im": r.potential_term.imag,
                     "ratio": r.ratio, "free_imag_defect": r.free_imag_defect})
    free = np.array([r["free_re"] for r in rows])
    defect = np.array([r["free_imag_defect"] for r in rows])
    checks = {}
    if want.get("free_bound"):
        checks["free_bound"] = bool(np.all(free >= 2 * math.pi * abs(tau) - 1e-6) and np.all(defect <= 1e-10))
    if "min_ratio" in want:
        checks["min_ratio"] = bool(min(r["ratio"] for r in rows) >= want["min_ratio"])
    return rows, {"tau": tau, "modes": len(prober.modes), "c_delta": c_delta,
                  "min_free": float(free.min()), "max_imag_defect": float(defect.max())}, checks


TASKS = {
    "thomas": _task_thomas,
    "bands": _task_bands,
    "clusters": _task_clusters,
    "lemma-sums": _task_lemma,
    "robin-trace": _task_robin,
    "probe": _task_probe,
}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def run(config_path, out_dir, threads=None, seed=None) -> tuple[int, dict]:
    cfg = load(config_path)
    if seed is not None:
        cfg["numeric"]["seed"] = int(seed)
    seed = int(cfg["numeric"].get("seed", 0))
    name = cfg["task"]["name"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        model = build_model(cfg)
        rows, summary, checks = TASKS[name](cfg, model, seed, threads)
    except (NonInvertibleError, ClusterError, AssemblyError, np.linalg.LinAlgError) as exc:
        raise NumericFailure(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    elapsed = time.perf_counter() - t0
    csv_path = out / f"{name}.csv"
    write_csv(csv_path, rows)
    echo = {k: v for k, v in cfg.items() if not k.startswith("_")}
    report = {
        "version": __version__,
        "config": echo,
        "config_sha256": content_hash(cfg),
        "task": name,
        "artifacts": [csv_path.name],
        "results": summary,
        "assertions": checks,
        "passed": all(checks.values()),
        "timings": {"task_seconds": elapsed},
    }
    (out / "summary.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return (EXIT_OK if report["passed"] else EXIT_ASSERTION), report


def validate(config_path) -> list[str]:
    cfg = load(config_path)
    build_model(cfg)
    return consistency_warnings(cfg)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thomas-lab", description="Numerical checks for periodic operators on cylinders.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute the task of a config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=os.environ.get("THOMAS_LAB_OUT", "thomas_lab_out"))
    r.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    r.add_argument("--seed", type=int, default=None, help="overrides numeric.seed")
    v = sub.add_parser("validate", help="schema check plus exponent-window warnings")
    v.add_argument("--config", required=True)
    p = sub.add_parser("report", help="pretty-print a summary.json")
    p.add_argument("path", nargs="?", default=None, help="summary.json or its directory")
    p.add_argument("--out", default=os.environ.get("THOMAS_LAB_OUT", "thomas_lab_out"))
    return ap


def _print_report(rep: dict) -> None:
    print(f"task      {rep['task']}")
    print(f"config    sha256 {rep['config_sha256']}")
    print(f"artifacts {', '.join(rep['artifacts'])}")
    for k, v in rep["results"].items():
        print(f"  {k}: {json.dumps(v)}")
    for k, ok in rep["assertions"].items():
        print(f"  [{'PASS' if ok else 'FAIL'}] {k}")
    print(f"overall   {'PASS' if rep['passed'] else 'FAIL'} in {rep['timings']['task_seconds']:.2f}s")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            if args.seed is not None and not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            code, rep = run(args.config, args.out, args.threads, args.seed)
            _print_report(rep)
            return code
        if args.command == "validate":
            warnings = validate(args.config)
            for w in warnings:
                print(f"warning: {w}")
            print("config ok" if not warnings else f"config ok, {len(warnings)} warning(s)")
            return EXIT_OK
        path = Path(args.path or args.out)
        if path.is_dir():
            path = path / "summary.json"
        _print_report(json.loads(path.read_text()))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
