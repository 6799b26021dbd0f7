"""JSON run configuration: parsing, validation, defaulting, hashing.

A config is one JSON object with optional sections; every key has a
default, so ``{}`` is valid.  Sections and defaults:

=========  ===============  =======================================
section    key              default
=========  ===============  =======================================
grid       dim              1
grid       inv_mesh         8
params     nu_s             0.1
params     nu_i             0.1
params     gamma            1.0
params     horizon          1.0
new_law    kind/...         constant_exponential, amp 1.0, rate 1.0
initial_law  kind/...       same as new_law's default
kernel     kind/...         local, scale 1.0, no modulation
densities  kind/...         uniform, s_mass 0.9, i_mass 0.1
solver     step             1/128
solver     modes            16
solver     reference_modes  null (converge picks from the schedule)
solver     pde_backend      "marching"
sim        scale            100
sim        replicates       1
sim        sample_count     33
sim        backend          null (auto)
output     probe_times      null (harness default probe grid)
(top)      seed             0
(top)      threads          null (EPIGRID_THREADS or serial)
(top)      beta_star        null (no declared contact cap)
(top)      lambda_star      null (no declared infectivity cap)
(top)      experiment       null (required only by ``converge``)
(top)      schedule         null (entries [N or null, inv_mesh, R])
=========  ===============  =======================================

Validation constructs the actual model objects, so every structural
assumption is checked at load time and nothing invalid reaches a solver.
The config digest is the SHA-256 of the canonicalized raw JSON (sorted
keys, minimal separators), so key order never changes the hash.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .contact import (
    CosineModulation,
    GaussianContact,
    LocalContact,
    MatrixContact,
    TopHatContact,
)
from .errors import ValidationError
from .grid import TorusGrid
from .infectivity import (
    AgeShifted,
    ConstantExponential,
    ConstantFixed,
    PlateauTrapezoid,
)
from .model import (
    ModelParams,
    cosine_densities,
    fourier_densities,
    uniform_densities,
)

_DEFAULTS = {
    "grid": {"dim": 1, "inv_mesh": 8},
    "params": {"nu_s": 0.1, "nu_i": 0.1, "gamma": 1.0, "horizon": 1.0},
    "new_law": {"kind": "constant_exponential", "amp": 1.0, "rate": 1.0},
    "initial_law": {"kind": "constant_exponential", "amp": 1.0, "rate": 1.0},
    "kernel": {"kind": "local", "scale": 1.0},
    "densities": {"kind": "uniform", "s_mass": 0.9, "i_mass": 0.1},
    "solver": {"step": 1.0 / 128.0, "modes": 16, "reference_modes": None,
               "pde_backend": "marching"},
    "sim": {"scale": 100, "replicates": 1, "sample_count": 33, "backend": None},
    "output": {"probe_times": None},
    "seed": 0,
    "threads": None,
    "beta_star": None,
    "lambda_star": None,
    "experiment": None,
    "schedule": None,
}


def canonical_bytes(obj) -> bytes:
    """Key-order-independent serialization used for hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True).encode()


def config_digest(obj) -> str:
    return hashlib.sha256(canonical_bytes(obj)).hexdigest()


def _number(value, where: str) -> float:
    if isinstance(value, str) and value.lower() in ("inf", "infinity"):
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value == int(value):
            return int(value)
        raise ValidationError(f"{where}: expected an integer, got {value!r}")
    return value


_POLYMORPHIC = ("new_law", "initial_law", "kernel", "densities")


def _section(data: dict, name: str) -> dict:
    """Section with defaults applied.

    Kind-dispatched sections take their defaults from the builder per kind,
    so a given section replaces the default wholesale instead of merging
    (otherwise another kind's default fields would leak in).
    """
    given = data.get(name)
    if given is None:
        return dict(_DEFAULTS[name])
    if not isinstance(given, dict):
        raise ValidationError(f"section {name!r} must be an object")
    if name in _POLYMORPHIC:
        return dict(given)
    merged = dict(_DEFAULTS[name])
    for key, value in given.items():
        if key not in merged:
            raise ValidationError(f"unknown key {name}.{key}")
        merged[key] = value
    return merged


def _build_law(spec: dict, where: str):
    spec = dict(spec)
    kind = spec.pop("kind", "constant_exponential")
    shift = spec.pop("shift", 0.0)
    try:
        if kind == "constant_fixed":
            law = ConstantFixed(_number(spec.pop("amp", 1.0), where),
                                _number(spec.pop("lifetime", 1.0), where))
        elif kind == "constant_exponential":
            law = ConstantExponential(_number(spec.pop("amp", 1.0), where),
                                      _number(spec.pop("rate", 1.0), where))
        elif kind == "plateau_trapezoid":
            law = PlateauTrapezoid(_number(spec.pop("amp", 1.0), where),
                                   _number(spec.pop("plateau_lo", 0.0), where),
                                   _number(spec.pop("plateau_hi", 1.0), where),
                                   _number(spec.pop("ramp", 1.0), where))
        else:
            raise ValidationError(f"{where}.kind: unknown law kind {kind!r}")
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from exc
    if spec:
        raise ValidationError(f"unknown key {where}.{sorted(spec)[0]}")
    if shift:
        law = AgeShifted(law, _number(shift, where))
    return law


def _build_modulation(spec, where: str):
    if spec is None:
        return None
    if not isinstance(spec, dict):
        raise ValidationError(f"{where}.modulation must be an object or null")
    extra = set(spec) - {"base", "amp", "period"}
    if extra:
        raise ValidationError(f"unknown key {where}.modulation.{sorted(extra)[0]}")
    return CosineModulation(_number(spec.get("base", 1.0), where),
                            _number(spec.get("amp", 0.0), where),
                            _number(spec.get("period", 1.0), where))


def _build_kernel(spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind", "local")
    mod = _build_modulation(spec.pop("modulation", None), "kernel")
    try:
        if kind == "local":
            kernel = LocalContact(_number(spec.pop("scale", 1.0), "kernel"), mod)
        elif kind == "gaussian":
            kernel = GaussianContact(_number(spec.pop("scale", 1.0), "kernel"),
                                     _number(spec.pop("width", 0.1), "kernel"),
                                     mod)
        elif kind == "tophat":
            kernel = TopHatContact(_number(spec.pop("scale", 1.0), "kernel"),
                                   _number(spec.pop("radius", 0.25), "kernel"),
                                   mod)
        elif kind == "matrix":
            kernel = MatrixContact(spec.pop("matrix"), mod)
        else:
            raise ValidationError(f"kernel.kind: unknown kernel kind {kind!r}")
    except KeyError as exc:
        raise ValidationError(f"kernel: missing required key {exc}") from exc
    except ValidationError as exc:
        raise ValidationError(f"kernel: {exc}") from exc
    if spec:
        raise ValidationError(f"unknown key kernel.{sorted(spec)[0]}")
    return kernel


def _parse_mode_key(key, where: str):
    if isinstance(key, str):
        parts = key.split(",")
    elif isinstance(key, (list, tuple)):
        parts = key
    else:
        parts = [key]
    try:
        return tuple(int(p) for p in parts)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: bad mode key {key!r}") from exc


def _build_densities(spec: dict, dim: int):
    spec = dict(spec)
    kind = spec.pop("kind", "uniform")
    try:
        if kind == "uniform":
            dens = uniform_densities(_number(spec.pop("s_mass", 0.9), "densities"),
                                     _number(spec.pop("i_mass", 0.1), "densities"),
                                     dim=dim)
        elif kind == "cosine":
            dens = cosine_densities(
                _number(spec.pop("s_mass", 0.9), "densities"),
                _number(spec.pop("i_mass", 0.1), "densities"),
                _number(spec.pop("s_contrast", 0.0), "densities"),
                _number(spec.pop("i_contrast", 0.0), "densities"),
                _integer(spec.pop("wavenumber", 1), "densities"),
                dim=dim)
        elif kind == "fourier":
            def amplitudes(raw, where):
                if not isinstance(raw, dict):
                    raise ValidationError(f"{where} must be an object")
                out = {}
                for key, val in raw.items():
                    kt = _parse_mode_key(key, where)
                    if isinstance(val, (list, tuple)):
                        val = complex(val[0], val[1])
                    out[kt] = val
                return out
            dens = fourier_densities(
                amplitudes(spec.pop("s_modes", {"0": 0.9}), "densities.s_modes"),
                amplitudes(spec.pop("i_modes", {"0": 0.1}), "densities.i_modes"),
                dim=dim)
        else:
            raise ValidationError(f"densities.kind: unknown preset {kind!r}")
    except ValidationError as exc:
        raise ValidationError(f"densities: {exc}") from exc
    if spec:
        raise ValidationError(f"unknown key densities.{sorted(spec)[0]}")
    problems = dens.validate()
    if problems:
        raise ValidationError("densities: " + "; ".join(problems))
    return dens


@dataclass
class RunConfig:
    """Fully validated configuration with constructed model objects."""

    raw: dict
    effective: dict
    digest: str
    grid: TorusGrid
    params: ModelParams
    kernel: object
    new_law: object
    initial_law: object
    densities: object
    scale: int
    replicates: int
    sim_backend: str | None
    step: float
    modes: int
    reference_modes: int | None
    pde_backend: str
    sample_count: int
    probe_times: tuple | None
    seed: int
    threads: int | None
    experiment: str | None
    schedule: list | None

    def sample_times(self):
        """Uniform output grid over [0, horizon] with sample_count points."""
        return np.linspace(0.0, self.params.horizon, self.sample_count)


def build_config(data: dict) -> RunConfig:
    """Validate a parsed JSON object and construct the model stack."""
    if not isinstance(data, dict):
        raise ValidationError("config root must be a JSON object")
    unknown = set(data) - set(_DEFAULTS)
    if unknown:
        raise ValidationError(f"unknown key {sorted(unknown)[0]}")

    grid_spec = _section(data, "grid")
    dim = _integer(grid_spec["dim"], "grid.dim")
    inv_mesh_raw = grid_spec["inv_mesh"]
    if not isinstance(inv_mesh_raw, int) or isinstance(inv_mesh_raw, bool):
        raise ValidationError(
            f"grid.inv_mesh must be a positive integer (integer mesh), "
            f"got {inv_mesh_raw!r}")
    grid = TorusGrid(dim, inv_mesh_raw)

    p = _section(data, "params")
    params = ModelParams(_number(p["nu_s"], "params.nu_s"),
                         _number(p["nu_i"], "params.nu_i"),
                         _number(p["gamma"], "params.gamma"),
                         _number(p["horizon"], "params.horizon"))

    new_law = _build_law(_section(data, "new_law"), "new_law")
    initial_law = _build_law(_section(data, "initial_law"), "initial_law")
    kernel = _build_kernel(_section(data, "kernel"))
    densities = _build_densities(_section(data, "densities"), dim)

    beta_star = data.get("beta_star")
    if beta_star is not None:
        bcap = _number(beta_star, "beta_star")
        if kernel.bound > bcap:
            raise ValidationError(
                f"kernel row sums reach {kernel.bound:g}, above the declared "
                f"contact cap beta_star={bcap:g}")
    lambda_star = data.get("lambda_star")
    if lambda_star is not None:
        cap = _number(lambda_star, "lambda_star")
        worst = max(new_law.bound, initial_law.bound)
        if worst > cap:
            raise ValidationError(
                f"infectivity bound {worst:g} exceeds the declared cap "
                f"lambda_star={cap:g}")

    solver = _section(data, "solver")
    step = _number(solver["step"], "solver.step")
    if step <= 0:
        raise ValidationError("solver.step must be > 0")
    modes = _integer(solver["modes"], "solver.modes")
    reference_modes = solver["reference_modes"]
    if reference_modes is not None:
        reference_modes = _integer(reference_modes, "solver.reference_modes")
    pde_backend = solver["pde_backend"]
    if pde_backend not in ("marching", "picard"):
        raise ValidationError(
            f"solver.pde_backend must be 'marching' or 'picard', got {pde_backend!r}")

    sim = _section(data, "sim")
    scale = _integer(sim["scale"], "sim.scale")
    if scale < 1:
        raise ValidationError("sim.scale must be >= 1")
    replicates = _integer(sim["replicates"], "sim.replicates")
    if replicates < 1:
        raise ValidationError("sim.replicates must be >= 1")
    sample_count = _integer(sim["sample_count"], "sim.sample_count")
    if sample_count < 2:
        raise ValidationError("sim.sample_count must be >= 2")
    sim_backend = sim["backend"]
    if sim_backend not in (None, "auto", "compiled", "python"):
        raise ValidationError(f"sim.backend: unknown backend {sim_backend!r}")

    output = _section(data, "output")
    probe_times = output["probe_times"]
    if probe_times is not None:
        probe_times = tuple(_number(t, "output.probe_times") for t in probe_times)
        if any(t < 0 or t > params.horizon for t in probe_times):
            raise ValidationError("output.probe_times must lie in [0, horizon]")

    seed = _integer(data.get("seed", _DEFAULTS["seed"]), "seed")
    if seed < 0:
        raise ValidationError("seed must be >= 0")
    threads = data.get("threads")
    if threads is not None:
        threads = _integer(threads, "threads")
        if threads < 1:
            raise ValidationError("threads must be >= 1")

    experiment = data.get("experiment")
    if experiment not in (None, "lln_fixed_eps", "eps_limit", "joint_limit",
                          "f0_check"):
        raise ValidationError(f"experiment: unknown experiment {experiment!r}")
    schedule = data.get("schedule")
    if schedule is not None:
        if not isinstance(schedule, list) or not schedule:
            raise ValidationError("schedule must be a non-empty array")
        parsed = []
        for i, entry in enumerate(schedule):
            if not isinstance(entry, list) or len(entry) not in (2, 3):
                raise ValidationError(
                    f"schedule[{i}] must be [N or null, inv_mesh] or "
                    f"[N or null, inv_mesh, replicates]")
            n = entry[0]
            if n is not None:
                n = _integer(n, f"schedule[{i}][0]")
            mesh = _integer(entry[1], f"schedule[{i}][1]")
            reps = _integer(entry[2], f"schedule[{i}][2]") if len(entry) == 3 else 1
            parsed.append((n, mesh, reps))
        schedule = parsed

    effective = {name: _section(data, name)
                 for name in ("grid", "params", "new_law", "initial_law",
                              "kernel", "densities", "solver", "sim", "output")}
    effective.update({"seed": seed, "threads": threads,
                      "beta_star": beta_star, "lambda_star": lambda_star,
                      "experiment": experiment,
                      "schedule": data.get("schedule")})

    return RunConfig(
        raw=data, effective=effective, digest=config_digest(data),
        grid=grid, params=params, kernel=kernel, new_law=new_law,
        initial_law=initial_law, densities=densities,
        scale=scale, replicates=replicates, sim_backend=sim_backend,
        step=step, modes=modes, reference_modes=reference_modes,
        pde_backend=pde_backend,
        sample_count=sample_count, probe_times=probe_times,
        seed=seed, threads=threads,
        experiment=experiment, schedule=schedule)


def load_config(path) -> RunConfig:
    """Read, parse, and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{path}: parse error at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}") from exc
    return build_config(data)
