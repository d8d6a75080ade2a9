"""Run configuration: a flat INI file parsed into typed blocks.

Example::

    [domain]
    extents = pi pi pi
    resolution = 16 16 16

    [materials]
    mu_inv = 1.0
    V = 0.5

    [nonlinearity]
    kind = kerr
    chi3 = 1.0

    [solver]
    starts = 8
    rng_seed = 0

    [output]
    directory = out

Numbers accept ``pi`` and products such as ``2*pi`` or ``pi/2``.  Tensors
are one value (scalar), three values (diagonal) or nine values (row-major).
Sections ``[region NAME]`` override ``mu_inv``/``V`` in the cells whose
centres lie in ``box = x0 x1 y0 y1 z0 z1``.  Every error names the line.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NLMaxwellError
from .material import MaterialTensors, NonlinearityModel
from .mesh import BoxGrid

__all__ = [
    "DomainBlock",
    "MaterialsBlock",
    "RegionBlock",
    "SolverBlock",
    "ReducedBlock",
    "OracleBlock",
    "SweepBlock",
    "OutputBlock",
    "RunConfig",
    "load_config",
    "parse_config",
]

_SECTIONS = {"domain", "materials", "nonlinearity", "solver", "reduced", "oracle", "sweep", "output"}
_NUM = re.compile(r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\s*\*?\s*(pi)?\s*(?:/\s*(\d+\.?\d*))?\s*$")


class _Lines:
    """Maps ``(section, key)`` to the line where it was defined."""

    def __init__(self, text: str):
        self.where: dict[tuple[str, str], int] = {}
        self.sections: dict[str, int] = {}
        sec = None
        for no, line in enumerate(text.splitlines(), 1):
            s = line.strip()
            if not s or s[0] in "#;":
                continue
            if s.startswith("[") and s.endswith("]"):
                sec = s[1:-1].strip()
                self.sections.setdefault(sec, no)
            elif sec is not None and ("=" in s or ":" in s):
                key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
                self.where[(sec, key)] = no

    def at(self, sec: str, key: str | None = None) -> str:
        no = self.where.get((sec, key)) if key else self.sections.get(sec)
        return f"line {no}" if no else f"section [{sec}]"


def _number(tok: str) -> float:
    m = _NUM.match(tok)
    if not m or (m.group(1) is None and m.group(2) is None):
        raise ValueError(f"not a number: {tok!r}")
    v = float(m.group(1)) if m.group(1) is not None else 1.0
    if m.group(2):
        v *= math.pi
    if m.group(3):
        v /= float(m.group(3))
    return v


@dataclass(frozen=True)
class DomainBlock:
    extents: tuple[float, float, float]
    resolution: tuple[int, int, int]
    mask: str = "none"
    mask_radius: float | None = None

    def grid(self) -> BoxGrid:
        mask = None
        if self.mask != "none":
            c = np.asarray(self.extents) / 2
            cells = BoxGrid(self.extents, self.resolution).cell_centers() - c
            R = self.mask_radius if self.mask_radius is not None else 0.5 * min(self.extents[:2])
            if self.mask == "ball":
                d = np.linalg.norm(cells, axis=1)
            else:
                d = np.linalg.norm(cells[:, :2], axis=1)
            mask = (d < R).reshape(self.resolution)
        return BoxGrid(self.extents, self.resolution, mask)


@dataclass(frozen=True)
class RegionBlock:
    name: str
    box: tuple[float, ...]
    mu_inv: np.ndarray | None = None
    V: np.ndarray | None = None


@dataclass(frozen=True)
class MaterialsBlock:
    mu_inv: np.ndarray
    V: np.ndarray | None = None
    omega: float | None = None
    eps: np.ndarray | None = None
    regions: tuple[RegionBlock, ...] = ()

    def tensors(self, grid: BoxGrid, V_override=None) -> MaterialTensors:
        res = grid.resolution
        if V_override is not None:
            V = _tensor(np.atleast_1d(V_override))
        elif self.V is not None:
            V = self.V
        else:
            V = self.omega**2 * self.eps
        mu = np.broadcast_to(self.mu_inv, res + (3, 3)).copy()
        Vf = np.broadcast_to(V, res + (3, 3)).copy()
        if self.regions:
            cc = grid.cell_centers().reshape(res + (3,))
            for reg in self.regions:
                b = reg.box
                sel = np.ones(res, dtype=bool)
                for a in range(3):
                    sel &= (cc[..., a] >= b[2 * a]) & (cc[..., a] <= b[2 * a + 1])
                if reg.mu_inv is not None:
                    mu[sel] = reg.mu_inv
                if reg.V is not None and V_override is None:
                    Vf[sel] = reg.V
        return MaterialTensors.from_fields(res, mu, Vf)


@dataclass(frozen=True)
class SolverBlock:
    tol: float = 1e-7
    fiber_tol: float = 1e-10
    maxiter: int = 200
    starts: int = 8
    rng_seed: int = 0
    symmetry: str = "none"
    n_eigs: int = 6
    threshold: float = 1.0
    kernel: str = "projection"
    eig_tol: float = 1e-9
    witness: bool = True


@dataclass(frozen=True)
class ReducedBlock:
    R: float = 1.0
    L: float = math.pi
    nr: int = 24
    nz: int = 32
    lam: float = 0.0
    mu_inv: float = 1.0


@dataclass(frozen=True)
class OracleBlock:
    V: float = 1.0
    Gamma: float = 1.0
    p: float = 4.0
    resolutions: tuple[int, ...] = (8, 16, 32)
    exclude_radius: float | None = None


@dataclass(frozen=True)
class SweepBlock:
    parameter: str
    values: tuple[float, ...]
    command: str = "solve"


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "out"
    binary: bool = False
    csv: bool = True


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration with its content digest."""

    text: str
    domain: DomainBlock | None
    materials: MaterialsBlock | None
    nonlinearity: NonlinearityModel | None
    solver: SolverBlock
    reduced: ReducedBlock | None
    oracle: OracleBlock | None
    sweep: SweepBlock | None
    output: OutputBlock
    source: str = "<string>"
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def require(self, *blocks: str) -> None:
        for b in blocks:
            if getattr(self, b) is None:
                raise ConfigError(f"{self.source}: missing section [{b}]")


def _tensor(vals: np.ndarray) -> np.ndarray:
    if vals.size == 1:
        return float(vals[0]) * np.eye(3)
    if vals.size == 3:
        return np.diag(vals)
    if vals.size == 9:
        return vals.reshape(3, 3)
    raise ValueError(f"tensor needs 1, 3 or 9 values, got {vals.size}")


class _Reader:
    def __init__(self, cp: configparser.ConfigParser, lines: _Lines, source: str):
        self.cp, self.lines, self.source = cp, lines, source
        self.used: set[tuple[str, str]] = set()

    def fail(self, sec: str, key: str | None, msg: str):
        raise ConfigError(f"{self.source}:{self.lines.at(sec, key)}: [{sec}] {key or ''}: {msg}")

    def has(self, sec: str, key: str) -> bool:
        return self.cp.has_option(sec, key)

    def get(self, sec: str, key: str, conv, default=None, required: bool = False):
        if not self.cp.has_option(sec, key):
            if required:
                self.fail(sec, None, f"missing required key '{key}'")
            return default
        self.used.add((sec, key))
        raw = self.cp.get(sec, key)
        try:
            return conv(raw)
        except (ValueError, TypeError, NLMaxwellError) as exc:
            self.fail(sec, key, f"{exc} (value {raw!r})")

    def unknown(self, sec: str):
        for key in self.cp.options(sec):
            if (sec, key) not in self.used:
                self.fail(sec, key, "unknown key")


def _floats(s: str) -> np.ndarray:
    toks = s.replace(",", " ").split()
    if not toks:
        raise ValueError("empty value")
    return np.array([_number(t) for t in toks])


def _float(s: str) -> float:
    v = _floats(s)
    if v.size != 1:
        raise ValueError("expected one number")
    if not math.isfinite(v[0]):
        raise ValueError("not finite")
    return float(v[0])


def _int(s: str) -> int:
    return int(s.strip())


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _choice(*opts):
    def conv(s):
        t = s.strip()
        low = {o.lower(): o for o in opts}
        if t.lower() not in low:
            raise ValueError(f"expected one of {', '.join(opts)}")
        return low[t.lower()]

    return conv


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse configuration text.

    Raises:
        ConfigError: with the offending line for syntax errors, unknown
            sections or keys, and invalid values.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str.lower
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        ln = getattr(exc, "lineno", None)
        msg = str(exc).splitlines()[0]
        raise ConfigError(f"{source}:line {ln}: {msg}" if ln else f"{source}: {msg}") from exc
    lines = _Lines(text)
    rd = _Reader(cp, lines, source)
    regions = []
    for sec in cp.sections():
        if sec.lower().startswith("region"):
            continue
        if sec not in _SECTIONS:
            raise ConfigError(f"{source}:{lines.at(sec)}: unknown section [{sec}]")

    domain = None
    if cp.has_section("domain"):
        ext = rd.get("domain", "extents", _floats, required=True)
        res = rd.get("domain", "resolution", lambda s: tuple(int(t) for t in s.split()), required=True)
        if ext.size != 3 or np.any(ext <= 0):
            rd.fail("domain", "extents", "need three positive lengths")
        if len(res) != 3 or min(res) < 2:
            rd.fail("domain", "resolution", "need three cell counts >= 2")
        mask = rd.get("domain", "mask", _choice("none", "ball", "cylinder"), "none")
        mrad = rd.get("domain", "mask_radius", _float)
        domain = DomainBlock(tuple(float(v) for v in ext), res, mask, mrad)
        rd.unknown("domain")

    materials = None
    if cp.has_section("materials"):
        conv = lambda s: _tensor(_floats(s))  # noqa: E731
        mu = rd.get("materials", "mu_inv", conv, np.eye(3))
        V = rd.get("materials", "v", conv)
        omega = rd.get("materials", "omega", _float)
        eps = rd.get("materials", "eps", conv)
        if V is None and (omega is None or eps is None):
            rd.fail("materials", None, "give V, or both omega and eps")
        if V is not None and omega is not None:
            rd.fail("materials", "omega", "V and omega/eps are mutually exclusive")
        for sec in cp.sections():
            if not sec.lower().startswith("region"):
                continue
            name = sec[6:].strip() or "region"
            box = rd.get(sec, "box", _floats, required=True)
            if box.size != 6:
                rd.fail(sec, "box", "need x0 x1 y0 y1 z0 z1")
            regions.append(RegionBlock(name, tuple(box), rd.get(sec, "mu_inv", conv), rd.get(sec, "v", conv)))
            rd.unknown(sec)
        materials = MaterialsBlock(mu, V, omega, eps, tuple(regions))
        rd.unknown("materials")

    model = None
    if cp.has_section("nonlinearity"):
        s = "nonlinearity"
        kw = {"kind": rd.get(s, "kind", str.strip, required=True)}
        for key in ("chi3", "chi5", "gamma", "p", "q"):
            v = rd.get(s, key, _float)
            if v is not None:
                kw[key] = v
        Mv = rd.get(s, "m", _floats)
        if Mv is not None:
            if Mv.size != 9:
                rd.fail(s, "m", "need nine values (row-major)")
            kw["M"] = Mv.reshape(3, 3)
        try:
            model = NonlinearityModel(**kw)
        except NLMaxwellError as exc:
            rd.fail(s, "kind", str(exc))
        rd.unknown(s)

    solver = SolverBlock()
    if cp.has_section("solver"):
        s = "solver"
        d = SolverBlock()
        solver = SolverBlock(
            tol=rd.get(s, "tol", _float, d.tol),
            fiber_tol=rd.get(s, "fiber_tol", _float, d.fiber_tol),
            maxiter=rd.get(s, "maxiter", _int, d.maxiter),
            starts=rd.get(s, "starts", _int, d.starts),
            rng_seed=rd.get(s, "rng_seed", _int, d.rng_seed),
            symmetry=rd.get(s, "symmetry", _choice("none", "S1", "S2"), d.symmetry),
            n_eigs=rd.get(s, "n_eigs", _int, d.n_eigs),
            threshold=rd.get(s, "threshold", _float, d.threshold),
            kernel=rd.get(s, "kernel", _choice("projection", "regularization"), d.kernel),
            eig_tol=rd.get(s, "eig_tol", _float, d.eig_tol),
            witness=rd.get(s, "witness", _bool, d.witness),
        )
        if solver.starts < 1:
            rd.fail(s, "starts", "must be positive")
        if solver.tol <= 0 or solver.fiber_tol <= 0:
            rd.fail(s, "tol", "tolerances must be positive")
        rd.unknown(s)

    reduced = None
    if cp.has_section("reduced"):
        s = "reduced"
        d = ReducedBlock()
        reduced = ReducedBlock(
            R=rd.get(s, "r", _float, d.R),
            L=rd.get(s, "l", _float, d.L),
            nr=rd.get(s, "nr", _int, d.nr),
            nz=rd.get(s, "nz", _int, d.nz),
            lam=rd.get(s, "lambda", _float, d.lam),
            mu_inv=rd.get(s, "mu_inv", _float, d.mu_inv),
        )
        rd.unknown(s)

    oracle = None
    if cp.has_section("oracle"):
        s = "oracle"
        d = OracleBlock()
        oracle = OracleBlock(
            V=rd.get(s, "v", _float, d.V),
            Gamma=rd.get(s, "gamma", _float, d.Gamma),
            p=rd.get(s, "p", _float, d.p),
            resolutions=rd.get(s, "resolutions", lambda t: tuple(int(x) for x in t.split()), d.resolutions),
            exclude_radius=rd.get(s, "exclude_radius", _float, d.exclude_radius),
        )
        rd.unknown(s)

    sweep = None
    if cp.has_section("sweep"):
        s = "sweep"
        sweep = SweepBlock(
            parameter=rd.get(s, "parameter", _choice("lambda", "V", "p"), required=True),
            values=tuple(float(v) for v in rd.get(s, "values", _floats, required=True)),
            command=rd.get(s, "command", _choice("solve", "reduce-solve", "eigs"), "solve"),
        )
        rd.unknown(s)

    output = OutputBlock()
    if cp.has_section("output"):
        s = "output"
        output = OutputBlock(
            directory=rd.get(s, "directory", str.strip, "out"),
            binary=rd.get(s, "binary", _bool, False),
            csv=rd.get(s, "csv", _bool, True),
        )
        rd.unknown(s)

    return RunConfig(text, domain, materials, model, solver, reduced, oracle, sweep, output, source,
                     {sec: dict(cp.items(sec)) for sec in cp.sections()})


def load_config(path) -> RunConfig:
    """Read and parse a configuration file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    return parse_config(text, str(path))
