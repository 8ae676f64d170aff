"""Batch orchestration: configuration, the plastic -> elastic pipeline, and
deterministic exporters (legacy VTK, profile CSV).

Configuration lives in a flat INI file (sections [domain], [grid],
[dislocation], [material], [solver], [output]); every key can be overridden
on the command line with section.key=value pairs. All defaults echo into
the run metadata so any artifact is reproducible from its header alone.

Outputs are byte-stable: fixed '%.17g' float formatting, fixed iteration
and summation orders, and a config hash in every header.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import subprocess
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .elastic import BoundarySpec, ElasticState, Material, newton_solve, stress_many, \
    write_newton_history
from .errors import ConfigError, DislomechError, InvalidArgumentError, PipelineError
from .forms import TorsionField, edge_dislocation, screw_dislocation
from .geometry import Patch, box_patch
from .oracles import VolterraParams, homotopy_theta, volterra_edge_stress, \
    volterra_screw_stress
from .plastic import PlasticField, load_plastic_field, save_plastic_field, solve_plastic
from .sparsela import SolverConfig, write_residual_history
from .splines import TensorBasis3D, make_graded_knot_vector


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; defaults are the desk-scale screw model."""

    extents: tuple = (40.0, 40.0, 20.0)   # multiples of |b|
    grid: tuple = (48, 48, 24)            # basis counts per direction
    degrees: tuple = (2, 2, 2)
    grading: float = 2.0
    preset: str = "screw"
    burgers: float = 1.0
    core_radius: float = 1.0
    center: tuple = (0.0, 0.0)
    shear_modulus: float = 1.0
    poisson_ratio: float = 0.3
    minres_tol: float = 1e-5
    pcg_tol: float = 1e-5
    newton_tol: float = 1e-6
    minres_maxiter: int = 200000
    pcg_maxiter: int = 50000
    newton_maxiter: int = 50
    minres_preconditioner: str = "none"
    vtk: bool = True
    vtk_samples: tuple = (25, 25, 13)
    profiles: bool = True
    profile_samples: int = 201

    def __post_init__(self):
        def check(cond, fld, msg):
            if not cond:
                raise ConfigError(fld, msg)

        check(len(self.extents) == 3 and all(v > 0 for v in self.extents),
              "domain.extents", "three positive extents required")
        check(len(self.grid) == 3 and all(int(v) >= 2 for v in self.grid),
              "grid.n", "three basis counts >= 2 required")
        check(len(self.degrees) == 3 and all(1 <= int(p) <= 5 for p in self.degrees),
              "grid.degrees", "degrees must lie in 1..5")
        for n, p in zip(self.grid, self.degrees):
            check(int(n) >= int(p) + 1, "grid.n", f"n={n} must be at least p+1={int(p) + 1}")
        check(self.grading >= 1.0, "grid.grading", "grading exponent must be >= 1")
        check(self.preset in ("screw", "edge"), "dislocation.preset",
              "preset must be 'screw' or 'edge'")
        check(self.core_radius > 0, "dislocation.core_radius", "core radius must be positive")
        check(len(self.center) == 2, "dislocation.center", "center needs two coordinates")
        check(self.shear_modulus > 0, "material.shear_modulus", "must be positive")
        check(-1.0 < self.poisson_ratio < 0.5, "material.poisson_ratio",
              "must lie in (-1, 1/2)")
        for fld in ("minres_tol", "pcg_tol", "newton_tol"):
            check(getattr(self, fld) > 0, f"solver.{fld}", "must be positive")
        check(self.minres_preconditioner in ("none", "blockdiag"),
              "solver.minres_preconditioner", "must be 'none' or 'blockdiag'")
        check(len(self.vtk_samples) == 3 and all(int(v) >= 2 for v in self.vtk_samples),
              "output.vtk_samples", "three sample counts >= 2 required")
        check(self.profile_samples >= 2, "output.profile_samples", "need at least 2 samples")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            minres_tol=self.minres_tol,
            pcg_tol=self.pcg_tol,
            newton_tol=self.newton_tol,
            minres_maxiter=self.minres_maxiter,
            pcg_maxiter=self.pcg_maxiter,
            newton_maxiter=self.newton_maxiter,
        )

    def material(self) -> Material:
        return Material(self.shear_modulus, self.poisson_ratio)

    def dislocation(self):
        maker = screw_dislocation if self.preset == "screw" else edge_dislocation
        return maker(b=self.burgers, core_radius=self.core_radius, center=self.center)

    def build_patch(self) -> Patch:
        basis = TensorBasis3D(
            tuple(
                make_graded_knot_vector(int(self.grid[d]), int(self.degrees[d]), self.grading)
                for d in range(3)
            )
        )
        return box_patch(basis, self.extents)

    def volterra_params(self) -> VolterraParams:
        return VolterraParams(mu=self.shear_modulus, nu=self.poisson_ratio,
                              b=self.burgers, core_radius=self.core_radius)

    def as_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        canon = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


_SCHEMA = {
    "domain": {"extents": ("extents", "floats3")},
    "grid": {
        "n": ("grid", "ints3"),
        "degrees": ("degrees", "ints3"),
        "grading": ("grading", "float"),
    },
    "dislocation": {
        "preset": ("preset", "str"),
        "burgers": ("burgers", "float"),
        "core_radius": ("core_radius", "float"),
        "center": ("center", "floats2"),
    },
    "material": {
        "shear_modulus": ("shear_modulus", "float"),
        "poisson_ratio": ("poisson_ratio", "float"),
    },
    "solver": {
        "minres_tol": ("minres_tol", "float"),
        "pcg_tol": ("pcg_tol", "float"),
        "newton_tol": ("newton_tol", "float"),
        "minres_maxiter": ("minres_maxiter", "int"),
        "pcg_maxiter": ("pcg_maxiter", "int"),
        "newton_maxiter": ("newton_maxiter", "int"),
        "minres_preconditioner": ("minres_preconditioner", "str"),
    },
    "output": {
        "vtk": ("vtk", "bool"),
        "vtk_samples": ("vtk_samples", "ints3"),
        "profiles": ("profiles", "bool"),
        "profile_samples": ("profile_samples", "int"),
    },
}


def _convert(raw: str, kind: str, fld: str):
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "str":
            return raw.strip()
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        parts = raw.replace(",", " ").split()
        if kind == "floats3":
            vals = tuple(float(v) for v in parts)
        elif kind == "floats2":
            vals = tuple(float(v) for v in parts)
        elif kind == "ints3":
            vals = tuple(int(v) for v in parts)
        else:
            raise ValueError(kind)
        want = 2 if kind == "floats2" else 3
        if len(vals) != want:
            raise ValueError(f"expected {want} values")
        return vals
    except ValueError as exc:
        raise ConfigError(fld, f"cannot parse {raw!r}: {exc}") from exc


def parse_config(path=None, overrides=()) -> RunConfig:
    """RunConfig from an INI file plus section.key=value overrides."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError("config", f"cannot read config file {path}")
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(section, "unknown config section")
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"{section}.{key}", "unknown config key")
                attr, kind = _SCHEMA[section][key]
                values[attr] = _convert(raw, kind, f"{section}.{key}")
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError("override", f"expected section.key=value, got {item!r}")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"{section}.{key}", "unknown config key")
        attr, kind = _SCHEMA[section][key]
        values[attr] = _convert(raw, kind, f"{section}.{key}")
    return RunConfig(**values)


def write_default_config(path):
    """Reference config file with all keys at their defaults."""
    cfg = RunConfig()
    text = f"""[domain]
extents = {cfg.extents[0]:g} {cfg.extents[1]:g} {cfg.extents[2]:g}

[grid]
n = {cfg.grid[0]} {cfg.grid[1]} {cfg.grid[2]}
degrees = {cfg.degrees[0]} {cfg.degrees[1]} {cfg.degrees[2]}
grading = {cfg.grading:g}

[dislocation]
preset = {cfg.preset}
burgers = {cfg.burgers:g}
core_radius = {cfg.core_radius:g}
center = {cfg.center[0]:g} {cfg.center[1]:g}

[material]
shear_modulus = {cfg.shear_modulus:g}
poisson_ratio = {cfg.poisson_ratio:g}

[solver]
minres_tol = {cfg.minres_tol:g}
pcg_tol = {cfg.pcg_tol:g}
newton_tol = {cfg.newton_tol:g}
minres_preconditioner = {cfg.minres_preconditioner}

[output]
vtk = {str(cfg.vtk).lower()}
vtk_samples = {cfg.vtk_samples[0]} {cfg.vtk_samples[1]} {cfg.vtk_samples[2]}
profiles = {str(cfg.profiles).lower()}
profile_samples = {cfg.profile_samples}
"""
    Path(path).write_text(text)


# ---------------------------------------------------------------------------
# exporters


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def export_vtk(path, patch: Patch, plastic: PlasticField,
               elastic: ElasticState | None, samples=(25, 25, 13)):
    """Legacy ASCII VTK structured grid with named point arrays.

    Arrays: Theta_11..Theta_33 (9), S_11, S_12, S_13, S_22, S_23, S_33
    (symmetric upper), detTheta. Output bytes are identical for identical
    inputs.
    """
    n1, n2, n3 = (int(s) for s in samples)
    L = np.asarray(patch.domain_box)
    xs = [np.linspace(-L[d] / 2, L[d] / 2, (n1, n2, n3)[d]) for d in range(3)]
    # VTK structured grids iterate x fastest, z slowest
    Z, Y, X = np.meshgrid(xs[2], xs[1], xs[0], indexing="ij")
    pts_phys = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    tpts = patch.param_from_physical(pts_phys)

    theta = plastic.evaluate_theta(tpts)
    det = np.linalg.det(np.eye(3)[None, :, :] + theta)
    if elastic is not None:
        S = stress_many(elastic, tpts)
    else:
        S = np.zeros_like(theta)

    npts = pts_phys.shape[0]
    lines = [
        "# vtk DataFile Version 3.0",
        "dislomech plastic/elastic fields",
        "ASCII",
        "DATASET STRUCTURED_GRID",
        f"DIMENSIONS {n1} {n2} {n3}",
        f"POINTS {npts} double",
    ]
    for p in pts_phys:
        lines.append(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}")
    lines.append(f"POINT_DATA {npts}")

    def scalar_array(name, values):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        for v in values:
            lines.append(_fmt(v))

    for i in range(3):
        for j in range(3):
            scalar_array(f"Theta_{i + 1}{j + 1}", theta[:, i, j])
    for (i, j) in ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)):
        scalar_array(f"S_{i + 1}{j + 1}", S[:, i, j])
    scalar_array("detTheta", det)

    Path(path).write_text("\n".join(lines) + "\n")


PROFILE_COMPONENTS = {
    "screw": {"stress": ((1, 2, "S_23"), (2, 0, "S_31")),
              "theta": ((2, 0, "Theta_31"), (2, 1, "Theta_32"))},
    "edge": {"stress": ((0, 0, "S_11"), (1, 1, "S_22"), (2, 2, "S_33"), (0, 1, "S_12")),
             "theta": ((0, 0, "Theta_11"), (0, 1, "Theta_12"))},
}


def export_profile(path, patch: Patch, plastic: PlasticField,
                   elastic: ElasticState | None, preset: str,
                   params: VolterraParams, kind: str = "stress",
                   axis: int = 0, fixed=(0.0, 0.0), samples: int = 201,
                   span=None):
    """Sampled line profile as CSV with matching oracle columns.

    The line runs along `axis` (0-based) with the other two physical
    coordinates held at `fixed`. Stress profiles carry the classical
    Volterra columns normalised by D_S; plastic profiles carry the
    homotopy-operator columns. Coordinates are in units of R.
    """
    L = np.asarray(patch.domain_box)
    if axis not in (0, 1, 2):
        raise InvalidArgumentError("axis must be 0, 1 or 2")
    if span is None:
        lo, hi = -L[axis] / 2, L[axis] / 2
    else:
        lo, hi = span
    others = [d for d in range(3) if d != axis]
    pts = np.zeros((int(samples), 3))
    pts[:, axis] = np.linspace(lo, hi, int(samples))
    for d, v in zip(others, fixed):
        pts[:, d] = v
    half = L / 2
    if np.any(np.abs(pts) > half[None, :] + 1e-12):
        raise InvalidArgumentError("profile line leaves the domain box")
    tpts = patch.param_from_physical(pts)

    comps = PROFILE_COMPONENTS[preset][kind]
    R = params.core_radius
    columns = [("x%d_over_R" % (axis + 1), pts[:, axis] / R)]

    if kind == "stress":
        if elastic is None:
            raise InvalidArgumentError("stress profiles need a converged elastic state")
        S = stress_many(elastic, tpts)
        ds = params.d_screw if preset == "screw" else params.d_edge
        if ds == 0.0:
            ds = np.inf  # zero Burgers vector: normalised columns are zero
        with np.errstate(all="ignore"):
            if preset == "screw":
                oracle = volterra_screw_stress(
                    np.where(np.hypot(pts[:, 0], pts[:, 1]) > 0, pts[:, 0], np.nan),
                    pts[:, 1], params)
                omap = {"S_23": oracle[0], "S_31": oracle[1]}
            else:
                oracle = volterra_edge_stress(
                    np.where(np.hypot(pts[:, 0], pts[:, 1]) > 0, pts[:, 0], np.nan),
                    pts[:, 1], params)
                omap = {"S_11": oracle[0], "S_22": oracle[1], "S_33": oracle[2],
                        "S_12": oracle[3]}
        for i, j, name in comps:
            columns.append((name, S[:, i, j]))
            columns.append((name + "_over_DS", S[:, i, j] / ds))
            columns.append((name + "_volterra_over_DS", omap[name] / ds))
    else:
        theta = plastic.evaluate_theta(tpts)
        torsion = TorsionField(
            (screw_dislocation if preset == "screw" else edge_dislocation)(
                b=params.b, core_radius=params.core_radius
            )
        )
        oracle = homotopy_theta(torsion, pts)
        for i, j, name in comps:
            columns.append((name, theta[:, i, j]))
            columns.append((name + "_homotopy", oracle[:, i, j]))

    header = ",".join(name for name, _ in columns)
    rows = []
    for k in range(int(samples)):
        rows.append(",".join(_fmt(col[k]) for _, col in columns))
    Path(path).write_text(header + "\n" + "\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# elastic state dump

_EMAGIC = b"DMELASTIC1\n"


def save_elastic_state(state: ElasticState, path, meta=None):
    header = {
        "shape": list(state.patch.basis.shape),
        "degrees": list(state.patch.basis.degrees),
        "knots": [kv.values.tolist() for kv in state.patch.basis.knots],
        "domain_box": list(state.patch.domain_box),
        "material": {"shear_modulus": state.material.shear_modulus,
                     "poisson_ratio": state.material.poisson_ratio},
        "meta": dict(meta or {}),
    }
    with open(path, "wb") as fh:
        fh.write(_EMAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(state.y.astype("<f8").tobytes())


def load_elastic_state(path, plastic: PlasticField) -> ElasticState:
    with open(path, "rb") as fh:
        magic = fh.read(len(_EMAGIC))
        if magic != _EMAGIC:
            raise InvalidArgumentError(f"{path} is not an elastic state dump")
        header = json.loads(fh.readline().decode())
        n = int(np.prod(header["shape"]))
        y = np.frombuffer(fh.read(n * 3 * 8), dtype="<f8").reshape(n, 3).copy()
    material = Material(**header["material"])
    return ElasticState(plastic.patch, plastic, material, y)


# ---------------------------------------------------------------------------
# pipeline


def _git_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True,
            cwd=Path(__file__).parent, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _stage(name):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, PipelineError):
                raise PipelineError(name, exc) from exc
            return False

    return _Ctx()


def run_pipeline(config: RunConfig, outdir, mode: str = "solve",
                 plastic_file=None) -> dict:
    """Execute the requested stages and write artifacts into `outdir`.

    mode: 'solve' (plastic then elastic), 'plastic-only', or 'elastic-only'
    (which loads `plastic_file`). Returns a summary dict; artifacts are
    deterministic for identical configs.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = {"mode": mode, "config_hash": config.config_hash()}

    with _stage("setup"):
        solver = config.solver_config()
        meta = {
            "version": __version__,
            "git_revision": _git_revision(),
            "config": config.as_dict(),
            "config_hash": config.config_hash(),
            "rigid_body_pinning": "corners (-,-,-):123 (+,-,-):23 (-,+,-):3",
            "knot_grading": config.grading,
            "mode": mode,
        }
        (outdir / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=1))

    if mode in ("solve", "plastic-only"):
        with _stage("setup"):
            patch = config.build_patch()
            torsion = TorsionField(config.dislocation())
        with _stage("plastic"):
            plastic, report = solve_plastic(
                patch, torsion, config=solver,
                preconditioner=config.minres_preconditioner,
            )
            plastic.meta.update({"config_hash": config.config_hash(),
                                 "preset": config.preset,
                                 "burgers": config.burgers,
                                 "core_radius": config.core_radius})
            save_plastic_field(plastic, outdir / "plastic_field.bin")
            (outdir / "plastic_report.json").write_text(
                json.dumps(report.as_dict(), sort_keys=True, indent=1)
            )
            for i, hist in report.histories.items():
                write_residual_history(outdir / f"minres_history_{i + 1}.csv", hist)
            summary["plastic"] = report.as_dict()
    else:
        with _stage("setup"):
            if plastic_file is None:
                raise InvalidArgumentError("elastic-only mode needs --plastic-file")
            plastic = load_plastic_field(plastic_file)
            patch = plastic.patch
            torsion = TorsionField(config.dislocation())

    elastic = None
    if mode in ("solve", "elastic-only"):
        with _stage("elastic"):
            elastic, history = newton_solve(
                patch, plastic, config.material(), BoundarySpec(), solver
            )
            save_elastic_state(elastic, outdir / "elastic_state.bin",
                               meta={"config_hash": config.config_hash()})
            write_newton_history(outdir / "newton_history.csv", history)
            summary["elastic"] = {
                "newton_iterations": len(history) - 1,
                "relative_residual": history[-1]["relative"],
                "energy": history[-1]["energy"],
            }

    with _stage("export"):
        if config.vtk:
            export_vtk(outdir / "fields.vtk", patch, plastic, elastic,
                       samples=config.vtk_samples)
        if config.profiles:
            params = config.volterra_params()
            export_profile(outdir / "profile_theta_x1.csv", patch, plastic, elastic,
                           config.preset, params, kind="theta", axis=0,
                           samples=config.profile_samples)
            export_profile(outdir / "profile_theta_x2.csv", patch, plastic, elastic,
                           config.preset, params, kind="theta", axis=1,
                           samples=config.profile_samples)
            if elastic is not None:
                export_profile(outdir / "profile_stress_x1.csv", patch, plastic,
                               elastic, config.preset, params, kind="stress",
                               axis=0, samples=config.profile_samples)
    return summary
