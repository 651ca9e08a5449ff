"""Run configuration: YAML loading, schema validation, and model construction."""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .cross_section import Circle, FlatTorus, Interval, IntervalTimesTorus
from .galerkin import Model
from .lattice import Lattice
from .potential import (
    BoundarySigma,
    PotentialSpec,
    cell_grid,
    from_samples,
    read_couplings_text,
    read_samples_binary,
)


class ConfigError(ValueError):
    """Schema or semantic violation in a run configuration."""


def schema() -> dict:
    text = resources.files("thomas_lab").joinpath("schema/run_config.schema.json").read_text()
    return json.loads(text)


def load(path) -> dict:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    check(raw)
    raw.setdefault("numeric", {})
    raw.setdefault("assertions", {})
    raw["_base_dir"] = str(path.parent.resolve())
    return raw


def check(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {err.message}")


def content_hash(cfg: dict) -> str:
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)


def _series(entries) -> dict:
    return {tuple(e["nu"]): _complex(e["value"]) for e in entries}


def build_cross_section(block: dict):
    variant = block["variant"]
    bc = block.get("bc", "neumann")
    if variant == "circle":
        return Circle(block.get("length", 2 * np.pi))
    if variant == "interval":
        return Interval(block.get("length", np.pi), bc)
    if variant == "flat_torus":
        if "torus" not in block:
            raise ConfigError("model/cross_section/torus: required for flat_torus")
        return FlatTorus(np.asarray(block["torus"], dtype=float))
    if "torus" not in block:
        raise ConfigError("model/cross_section/torus: required for interval_times_torus")
    return IntervalTimesTorus(Interval(block.get("length", np.pi), bc), FlatTorus(np.asarray(block["torus"], dtype=float)))


def _resolve(cfg: dict, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else Path(cfg.get("_base_dir", ".")) / path


def build_model(cfg: dict) -> Model:
    mb = cfg["model"]
    try:
        lattice = Lattice(np.asarray(mb["lattice"], dtype=float))
    except ValueError as exc:
        raise ConfigError(f"model/lattice: {exc}") from exc
    cross = build_cross_section(mb["cross_section"])
    potential = None
    pb = mb.get("potential")
    if pb is not None:
        kind = pb["kind"]
        if kind == "zero":
            potential = PotentialSpec.zero(lattice, cross)
        elif kind == "mathieu":
            potential = PotentialSpec.mathieu(lattice, cross, pb.get("amplitude", 1.0), pb.get("direction", 0))
        elif kind == "fourier":
            potential = PotentialSpec.from_fourier(lattice, cross, _series(pb.get("coefficients", [])))
        elif kind == "couplings_file":
            entries = read_couplings_text(_resolve(cfg, pb["path"]), lattice.dim)
            potential = PotentialSpec.from_couplings(lattice, cross, entries)
        else:
            grid = cell_grid(lattice, cross, pb.get("x_resolution", 64), pb.get("ny", 64))
            samples = read_samples_binary(_resolve(cfg, pb["path"]))
            potential = from_samples(samples, grid, pb.get("nu_cap", 8), pb.get("x_cap", 400.0))
    sigma = None
    sb = mb.get("sigma")
    if sb is not None:
        kind = sb["kind"]
        if kind == "constant":
            sigma = BoundarySigma.constant(lattice, sb.get("value", 1.0))
        elif kind == "cosine":
            sigma = BoundarySigma.cosine(lattice, sb.get("amplitude", 1.0), sb.get("direction", 0))
        else:
            sigma = BoundarySigma(lattice, _series(sb.get("at_zero", [])), _series(sb.get("at_a", [])))
    try:
        return Model(lattice, cross, potential, sigma, tuple(mb.get("direct_sum_levels", ())))
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def consistency_warnings(cfg: dict) -> list[str]:
    """Warnings about the integrability exponents declared for V and sigma."""
    out = []
    mb = cfg["model"]
    m = len(mb["lattice"])
    cs = mb["cross_section"]
    k = {"circle": 1, "interval": 1}.get(cs["variant"])
    if k is None:
        k = len(cs.get("torus", [])) + (1 if cs["variant"] == "interval_times_torus" else 0)
    d = k + m
    boundary = cs["variant"] in ("interval", "interval_times_torus")
    p = (mb.get("potential") or {}).get("p")
    if d < 3:
        out.append(f"d = {d} < 3: the absolute-continuity setting assumes d >= 3")
    if p is not None and d >= 3:
        if boundary and k > 1 and d >= 5:
            if p <= d - 2:
                out.append(f"p = {p} is below threshold p > d-2 = {d - 2} (boundary, d >= 5)")
        elif p <= d / 2:
            out.append(f"p = {p} is below threshold p > d/2 = {d / 2}")
        if p > 1:
            q = 2 * p / (p - 1)
            top = 2 * d / (d - 2)
            if q >= top:
                out.append(f"q = 2p/(p-1) = {q:.6g} is outside (2, 2d/(d-2)) = (2, {top:.6g})")
    sb = mb.get("sigma")
    if sb is not None:
        if not (cs["variant"] == "interval"):
            out.append("sigma is only meaningful on a layer (interval cross-section)")
        need = 2.0 if d <= 3 else 2.0 * d - 2.0
        q = sb.get("q")
        if q is not None and q < need:
            out.append(f"sigma declared in L_{q}; d = {d} needs L_q with q >= {need}")
    return out
