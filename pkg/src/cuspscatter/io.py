"""Run configuration, file formats and the cached pipeline behind the command line.

Every stage writes one artifact into the output directory.  Files carry the
hash of the configuration that produced them: CSV files in a leading
``# config_hash=...`` comment line, JSON files in a ``config_hash`` field.
Numbers are written with 17 significant digits and rows are sorted, so a
configuration determines its outputs byte for byte.

Intermediate results are cached in ``<out>/.cache`` under the hash of the
configuration fields the stage depends on.  A lockfile guards the output
directory; concurrent runs on one directory are refused.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import pickle
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import attach_coefficients, first_variation, horosphere_quadrature_phi
from .geodesics import enumerate_all, spectrum, t_sharp
from .hypcore import UhpPoint
from .parametrix import (DEFAULT_MARGIN, ParametrixModel, assemble_determinant_series,
                         build_series, calibrate_remainder, eval_varphi, model_to_dict)
from .surfaces import (ConformalBump, SurfaceSpec, builtin_surface, dump_json, spec_from_dict,
                       spec_to_dict, with_bumps)
from .tilewalk import DEFAULT_BUDGET
from .zeros import certify_zero_free, scan_zeros, series_function

THREADS_ENV = "CUSPSCATTER_THREADS"
CACHE_DIR = ".cache"
LOCK_NAME = ".lock"

STAGE_FIELDS = {
    "surface": ("surface", "surface_params", "surface_json", "bumps"),
    "enum": ("t_max", "budget"),
    "coeffs": ("order",),
    "series": ("calibration_re", "calibration_im", "safety"),
}
STAGE_ORDER = ("surface", "enum", "coeffs", "series")


class LockError(RuntimeError):
    """The output directory is in use by another run."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run depends on.

    ``surface`` names a built-in surface (with ``surface_params``) unless
    ``surface_json`` points to a saved surface.  ``bumps`` are
    ``(x, y, radius, amplitude)`` tuples in the base chart.  The evaluation
    grid has ``steps`` points along each axis of ``re_range x im_range``.
    ``rectangles`` are zero-scan boxes ``(re_lo, re_hi, im_lo, im_hi)``.
    Calibration points sit at ``abscissa + calibration_re`` offsets.
    """

    surface: str = "pentagon2"
    surface_params: dict = field(default_factory=dict)
    surface_json: Optional[str] = None
    bumps: tuple = ()
    t_max: float = 8.0
    budget: int = DEFAULT_BUDGET
    order: int = 0
    re_range: tuple = (2.0, 4.0)
    im_range: tuple = (10.0, 100.0)
    steps: int = 10
    rectangles: tuple = ()
    margin: float = DEFAULT_MARGIN
    newton_tol: float = 1e-10
    calibration_re: tuple = (1.0, 1.5, 2.0, 3.0)
    calibration_im: tuple = (5.0, 7.0, 15.0, 30.0, 70.0, 150.0)
    safety: float = 2.0
    variation_bump: Optional[tuple] = None
    variation_pair: tuple = (1, 1)
    variation_count: int = 3
    out_dir: str = "cuspscatter-out"

    def __post_init__(self):
        tup = lambda v: tuple(float(x) for x in v)
        object.__setattr__(self, "surface_params",
                           {k: float(v) for k, v in sorted(dict(self.surface_params).items())})
        object.__setattr__(self, "bumps", tuple(tup(b) for b in self.bumps))
        object.__setattr__(self, "re_range", tup(self.re_range))
        object.__setattr__(self, "im_range", tup(self.im_range))
        object.__setattr__(self, "rectangles", tuple(tup(r) for r in self.rectangles))
        object.__setattr__(self, "calibration_re", tup(self.calibration_re))
        object.__setattr__(self, "calibration_im", tup(self.calibration_im))
        object.__setattr__(self, "variation_pair", tuple(int(v) for v in self.variation_pair))
        if self.variation_bump is not None:
            object.__setattr__(self, "variation_bump", tup(self.variation_bump))

    def validate(self) -> None:
        """Checks that need no computation; raises ``ValueError``."""
        if int(self.steps) < 1:
            raise ValueError(f"grid steps must be at least 1, got {self.steps}")
        if not (math.isfinite(self.t_max) and self.t_max > 0):
            raise ValueError("t_max must be positive and finite")
        if self.order not in (0, 1):
            raise ValueError("series order must be 0 or 1")
        for name in ("re_range", "im_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} must be increasing")
        for b in self.bumps:
            if len(b) != 4:
                raise ValueError("a bump is (x, y, radius, amplitude)")
        for r in self.rectangles:
            if len(r) != 4 or not (r[0] < r[1] and r[2] < r[3]):
                raise ValueError(f"bad zero-scan rectangle {r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def _hash_of(self, keys) -> str:
        d = self.to_dict()
        payload = json.dumps({k: d[k] for k in sorted(keys)}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @property
    def config_hash(self) -> str:
        """Hash of every field except the output directory."""
        return self._hash_of(set(self.to_dict()) - {"out_dir"})

    def stage_hash(self, stage: str) -> str:
        keys = []
        for name in STAGE_ORDER[:STAGE_ORDER.index(stage) + 1]:
            keys.extend(STAGE_FIELDS[name])
        return self._hash_of(keys)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer") from None


# ---------------------------------------------------------------------------
# formats


def write_csv(path, header, rows, config_hash: str) -> None:
    lines = [f"# config_hash={config_hash}", ",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path):
    """``(config_hash, header, rows)`` with every cell as a string."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# config_hash="):
        raise ValueError(f"{path} has no config hash header")
    h = lines[0].split("=", 1)[1]
    return h, lines[1].split(","), [ln.split(",") for ln in lines[2:]]


def write_json(path, payload: dict, config_hash: str) -> None:
    Path(path).write_text(dump_json({"config_hash": config_hash, **payload}) + "\n")


SPECTRUM_HEADER = ("i", "j", "T", "multiplicity", "a0", "a1", "source", "homotopy_id")


def spectrum_rows(records_by_pair: dict):
    rows = []
    for pair in sorted(records_by_pair):
        recs = records_by_pair[pair]
        if not recs:
            continue
        spec_ = spectrum(recs, pair)
        mult = {}
        for level, m, group in zip(spec_.times, spec_.multiplicities, _levels(spec_)):
            for r in group:
                mult[r.homotopy_id] = m
        for r in sorted(recs, key=lambda r: (r.sojourn_time, r.homotopy_id)):
            a1 = "" if r.a1 is None else float(r.a1)
            rows.append((r.i, r.j, float(r.sojourn_time), mult[r.homotopy_id], float(r.a0), a1,
                         r.source, r.homotopy_id))
    return rows


def _levels(spec_):
    """Records of a spectrum grouped per level, in level order."""
    recs = list(spec_.records)
    out, k = [], 0
    for m in spec_.multiplicities:
        out.append(recs[k:k + m])
        k += m
    return out


# ---------------------------------------------------------------------------
# pipeline


def _holder_alive(lock: Path) -> bool:
    try:
        pid = int(lock.read_text().strip())
    except (OSError, ValueError):
        return True
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


@contextmanager
def output_lock(out_dir):
    """Exclusive use of ``out_dir`` for the duration of a run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    if lock.exists() and not _holder_alive(lock):
        lock.unlink(missing_ok=True)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{out} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


class Pipeline:
    """Stages of a run, each computed once and cached by its stage hash."""

    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        self.out = Path(config.out_dir)
        self.cache = self.out / CACHE_DIR
        self._memo = {}

    def _cached(self, stage: str, compute):
        if stage in self._memo:
            return self._memo[stage]
        path = self.cache / f"{stage}-{self.config.stage_hash(stage)}.pkl"
        if path.exists():
            with open(path, "rb") as fh:
                value = pickle.load(fh)
        else:
            value = compute()
            self.cache.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            with open(tmp, "wb") as fh:
                pickle.dump(value, fh)
            tmp.replace(path)
        self._memo[stage] = value
        return value

    # stages ---------------------------------------------------------------

    def surface(self) -> SurfaceSpec:
        cfg = self.config

        def compute():
            if cfg.surface_json:
                data = json.loads(Path(cfg.surface_json).read_text())
                # accept both a bare surface and the artifact of the surface stage
                base = spec_from_dict(data.get("surface", data))
            else:
                base = builtin_surface(cfg.surface, **cfg.surface_params)
            if cfg.bumps:
                base = with_bumps(base, [ConformalBump(UhpPoint(x, y), r, a)
                                         for x, y, r, a in cfg.bumps])
            return base

        return self._cached("surface", compute)

    def records(self) -> dict:
        return self._cached("enum", lambda: enumerate_all(self.surface(), self.config.t_max,
                                                          self.config.budget))

    def coefficients(self) -> dict:
        spec = self.surface()
        return self._cached("coeffs", lambda: {
            pair: attach_coefficients(spec, recs, self.config.order)
            for pair, recs in self.records().items()})

    def series(self):
        """``(ParametrixModel, determinant series)``, both calibrated."""
        return self._cached("series", self._build_series)

    def _build_series(self):
        cfg, spec = self.config, self.surface()
        coeffs = self.coefficients()
        minima = {pair: recs[0].sojourn_time for pair, recs in coeffs.items() if recs}
        if len(minima) != len(coeffs):
            raise ValueError("some cusp pair has no scattered classes below t_max; raise t_max")
        entries = {}
        for (i, j), recs in sorted(coeffs.items()):
            cap = -math.log(spec.cusp(i).b * spec.cusp(j).b)
            model = build_series(recs, cfg.order, cfg.t_max, min(cap, minima[(i, j)]),
                                 label=f"{i}-{j}")
            oracle = _entry_oracle(spec, recs)
            model, _ = calibrate_remainder(model, oracle, self._calibration_grid(model),
                                           cfg.safety)
            entries[(i, j)] = model
        parametrix = ParametrixModel(spec.kappa, entries, spec.dimension)
        ts, _ = t_sharp(spec, minima)
        det = assemble_determinant_series(parametrix, ts)
        oracles = {pair: _entry_oracle(spec, recs) for pair, recs in coeffs.items()}

        def det_oracle(s):
            k = spec.kappa
            mat = np.empty((k, k), dtype=complex)
            for i in range(1, k + 1):
                for j in range(1, k + 1):
                    mat[i - 1, j - 1] = oracles[(min(i, j), max(i, j))](s)
            return complex(np.linalg.det(mat))

        det, _ = calibrate_remainder(det, det_oracle, self._calibration_grid(det), cfg.safety)
        return parametrix, det

    def _calibration_grid(self, model):
        cfg = self.config
        base = max(model.abscissa, 0.0) + cfg.margin
        return [complex(base + x, y) for x in cfg.calibration_re for y in cfg.calibration_im]

    def certificate(self):
        return certify_zero_free(self.series()[1])

    def grid(self):
        """Rows ``(Re s, Im s, Re phi, Im phi, bound)`` of the determinant on the grid."""
        cfg = self.config
        parametrix, _ = self.series()
        worst = max(m.abscissa for m in parametrix.entries.values())
        if not cfg.re_range[0] > worst + cfg.margin:
            raise ValueError(f"grid Re range must start right of abscissa + margin "
                             f"({worst + cfg.margin:.6g})")
        res = np.linspace(*cfg.re_range, cfg.steps)
        ims = np.linspace(*cfg.im_range, cfg.steps)
        rows = []
        for x in res:
            for y in ims:
                v, b = eval_varphi(parametrix, complex(x, y), cfg.margin)
                rows.append((float(x), float(y), float(v.real), float(v.imag), float(b)))
        return rows

    def zeros(self):
        cfg = self.config
        if not cfg.rectangles:
            raise ValueError("no zero-scan rectangles configured")
        f, df = series_function(self.series()[1])
        scan = lambda r: scan_zeros(f, df, r, newton_tol=cfg.newton_tol)
        with ThreadPoolExecutor(thread_count()) as pool:
            found = [z for part in pool.map(scan, cfg.rectangles) for z in part]
        found.sort(key=lambda z: (z.s.imag, z.s.real))
        return found

    def variation(self):
        cfg = self.config
        if cfg.variation_bump is None:
            raise ValueError("no variation bump configured")
        spec = self.surface()
        x, y, r, a = cfg.variation_bump
        bump = ConformalBump(UhpPoint(x, y), r, a)
        pair = tuple(cfg.variation_pair)
        recs = self.records().get(pair)
        if recs is None:
            raise ValueError(f"cusp pair {pair} is not enumerated (use i <= j)")
        rows = []
        for rec in recs[:cfg.variation_count]:
            dT, dlog = first_variation(spec, rec, bump)
            rows.append((rec.i, rec.j, rec.homotopy_id, float(rec.sojourn_time),
                         float(dT), float(dlog)))
        return rows

    # artifact writers -----------------------------------------------------

    def write(self, stage: str) -> Path:
        """Run ``stage`` and write its artifact; returns the path written."""
        h = self.config.config_hash
        out = self.out
        if stage == "surface":
            path = out / "surface.json"
            write_json(path, {"surface": spec_to_dict(self.surface())}, h)
        elif stage == "enum":
            path = out / "spectrum.csv"
            write_csv(path, SPECTRUM_HEADER, spectrum_rows(self.records()), h)
        elif stage == "coeffs":
            path = out / "coefficients.csv"
            write_csv(path, SPECTRUM_HEADER, spectrum_rows(self.coefficients()), h)
        elif stage == "series":
            parametrix, det = self.series()
            path = out / "model.json"
            write_json(path, {
                "kappa": parametrix.kappa, "dimension": parametrix.d,
                "entries": {f"{i}-{j}": model_to_dict(m)
                            for (i, j), m in sorted(parametrix.entries.items())},
                "determinant": model_to_dict(det)}, h)
        elif stage == "eval":
            path = out / "grid.csv"
            write_csv(path, ("re_s", "im_s", "re_phi", "im_phi", "bound"), self.grid(), h)
        elif stage == "zeros":
            path = out / "zeros.csv"
            rows = [(float(z.s.real), float(z.s.imag), float(z.newton_residual), z.method,
                     str(z.confirmed).lower()) for z in self.zeros()]
            write_csv(path, ("re_s", "im_s", "residual", "method", "confirmed"), rows, h)
        elif stage == "certify":
            c = self.certificate()
            path = out / "certificate.json"
            write_json(path, {"delta_prime": c.delta_prime, "C": c.C, "half_plane": c.half_plane,
                              "exceptional_radius": c.exceptional_radius, "order": c.order,
                              "ledger": dict(sorted(c.ledger.items()))}, h)
        elif stage == "variation":
            path = out / "variation.csv"
            write_csv(path, ("i", "j", "homotopy_id", "T", "dT", "dlog_a0"), self.variation(), h)
        else:
            raise ValueError(f"unknown stage {stage!r}")
        return path


STAGES = ("surface", "enum", "coeffs", "series", "eval", "zeros", "certify", "variation")


def _entry_oracle(spec: SurfaceSpec, recs):
    return lambda s: horosphere_quadrature_phi(spec, recs, s)
