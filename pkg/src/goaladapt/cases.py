"""Benchmark problem definitions and case configuration files."""
import ast
import configparser
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import fem, geometry
from .mesh import DIRICHLET, MeshError, TriMesh
from .mesh_io import load_mesh
from .quadrature import triangle_rule

UNITS = "mm"


class CaseError(ValueError):
    """Invalid problem definition or configuration file."""


@dataclass(frozen=True)
class ProblemCase:
    """Geometry, materials, loads and activation of one boundary value problem.

    Dirichlet data is always ``u = 0`` on the edges tagged ``D``. ``body_force``
    maps points ``(n, 2)`` to forces ``(n, 2)``; ``traction`` maps points and
    outward normals to surface loads. ``None`` means a zero load.
    """

    name: str
    mesh: TriMesh
    material: fem.MaterialField
    activation: fem.ActivationSpec = fem.NO_ACTIVATION
    body_force: Optional[Callable] = None
    traction: Optional[Callable] = None
    exact_solution: Optional[Callable] = None
    exact_qoi: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        m = self.mesh
        if not np.any(m.boundary_tags == DIRICHLET):
            raise CaseError(f"{self.name}: the Dirichlet boundary is empty")
        try:
            self.material.cell_parameters(m)
        except ValueError as exc:
            raise CaseError(f"{self.name}: {exc}") from None
        if m.in_active.any() and self.activation.strength > 0:
            d = self.activation.cell_directions(m)[m.in_active]
            if not np.allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12):
                raise CaseError(f"{self.name}: fiber directions are not unit vectors")
        if not m.in_interest.any():
            raise CaseError(f"{self.name}: the QoI region is empty")

    def with_mesh(self, mesh):
        """Same problem data on another (e.g. refined) mesh."""
        return _replace(self, mesh=mesh)

    def with_activation(self, activation):
        return _replace(self, activation=activation)

    def tolerance(self, variant):
        return self.tolerances.get(variant)

    def qoi_exact(self, q, mesh=None):
        """Closed-form QoI, or the exact solution integrated over ``mesh``'s region.

        Returns ``None`` when the case has no exact solution.
        """
        if mesh is None and q.variant in self.exact_qoi:
            return q.scale * self.exact_qoi[q.variant]
        if self.exact_solution is None:
            return None
        return q.scale * integrate_exact_qoi(self.exact_solution, mesh or self.mesh, q.variant)


def _replace(case, **changes):
    import dataclasses

    return dataclasses.replace(case, **changes)


def integrate_exact_qoi(exact, mesh, variant, degree=20, h=1e-5):
    """High-order quadrature of ``J`` applied to a callable displacement."""
    pts, w = triangle_rule(degree)
    cells = np.nonzero(mesh.in_interest)[0]
    p = mesh.vertices[mesh.cells[cells]]
    B = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    det = np.abs(B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0])
    x = (p[:, 0][:, None, :] + np.einsum("cij,qj->cqi", B, pts)).reshape(-1, 2)
    if variant == "J1":
        u = exact(x)
        vals = u[:, 0] + u[:, 1]
    else:
        # fourth-order central differences for div u
        ex, ey = np.array([h, 0.0]), np.array([0.0, h])
        dx = (-exact(x + 2 * ex)[:, 0] + 8 * exact(x + ex)[:, 0] - 8 * exact(x - ex)[:, 0] + exact(x - 2 * ex)[:, 0]) / (12 * h)
        dy = (-exact(x + 2 * ey)[:, 1] + 8 * exact(x + ey)[:, 1] - 8 * exact(x - ey)[:, 1] + exact(x - 2 * ey)[:, 1]) / (12 * h)
        vals = dx + dy
    return float(np.einsum("q,c,cq->", w, det, vals.reshape(len(cells), -1)))


def _flag_box(mesh, x0, x1, y0, y1, attr):
    c = mesh.centroids
    sel = (c[:, 0] > x0) & (c[:, 0] < x1) & (c[:, 1] > y0) & (c[:, 1] < y1)
    return mesh.replace(**{attr: sel})


# -- built-in cases ----------------------------------------------------------

MANUFACTURED_E, MANUFACTURED_NU = 1.0, 0.3


def manufactured_solution(x):
    x = np.atleast_2d(x)
    X, Y = x[:, 0], x[:, 1]
    return np.column_stack([np.sin(np.pi * X) * np.sin(np.pi * Y), X * (1 - X) * Y * (1 - Y)])


def manufactured_body_force(E=MANUFACTURED_E, nu=MANUFACTURED_NU):
    """``f = -div sigma(u)`` for the manufactured displacement."""
    lam, mu = fem.lame(E, nu)
    pi = np.pi

    def f(x):
        x = np.atleast_2d(x)
        X, Y = x[:, 0], x[:, 1]
        s = np.sin(pi * X) * np.sin(pi * Y)
        c = np.cos(pi * X) * np.cos(pi * Y)
        ddx_div = -pi ** 2 * s + (1 - 2 * X) * (1 - 2 * Y)
        ddy_div = pi ** 2 * c - 2 * X * (1 - X)
        lap1 = -2 * pi ** 2 * s
        lap2 = -2 * Y * (1 - Y) - 2 * X * (1 - X)
        return -np.column_stack([(lam + mu) * ddx_div + mu * lap1, (lam + mu) * ddy_div + mu * lap2])

    return f


# J1 over [1/4, 3/4]^2: 2/pi^2 from the sine component plus the square of int x(1-x)
_J1_SECOND = (0.75 ** 2 / 2 - 0.75 ** 3 / 3 - 0.25 ** 2 / 2 + 0.25 ** 3 / 3) ** 2
MANUFACTURED_J1 = 2.0 / np.pi ** 2 + _J1_SECOND
MANUFACTURED_J2 = 0.0


def case_manufactured_square(n=4):
    """Unit square, clamped boundary, smooth exact solution, omega = [1/4, 3/4]^2."""
    mesh = _flag_box(geometry.unit_square(n), 0.25, 0.75, 0.25, 0.75, "in_interest")
    # closed forms hold only when the grid resolves omega
    exact_qoi = {"J1": MANUFACTURED_J1, "J2": MANUFACTURED_J2} if n % 4 == 0 else {}
    return ProblemCase(
        name="manufactured",
        mesh=mesh,
        material=fem.MaterialField.uniform(MANUFACTURED_E, MANUFACTURED_NU),
        body_force=manufactured_body_force(),
        exact_solution=manufactured_solution,
        exact_qoi=exact_qoi,
        tolerances={"J1": 1e-6, "J2": 1e-6},
        description="manufactured sine solution on the unit square",
    )


def patch_solution(a=1e-2, b=-5e-3):
    def u(x):
        x = np.atleast_2d(x)
        return np.column_stack([a * x[:, 0], b * x[:, 0]])
    return u


def case_patch(n=2, a=1e-2, b=-5e-3, E=1.0, nu=0.3):
    """Linear displacement ``x * (a, b)``, clamped on ``x = 0``, exact tractions elsewhere."""
    mesh = geometry.rectangle(n).with_boundary_tags(lambda mid: mid[:, 0] < 1e-12)
    mesh = _flag_box(mesh, 0.5, 1.0, -1.0, 2.0, "in_interest")
    lam, mu = fem.lame(E, nu)
    sig = np.array([[(lam + 2 * mu) * a, mu * b], [mu * b, lam * a]])

    def traction(x, n):
        return np.asarray(n) @ sig.T

    u = patch_solution(a, b)
    area = 0.5
    return ProblemCase(
        name="patch",
        mesh=mesh,
        material=fem.MaterialField.uniform(E, nu),
        traction=traction,
        exact_solution=u,
        exact_qoi={"J1": (a + b) * 0.375, "J2": a * area},
        tolerances={"J1": 1e-12, "J2": 1e-12},
        description="linear patch test",
    )


TONGUE_APEX = (50.0, 6.0)


def case_tongue_like():
    """Sagittal tongue lookalike with a genioglossus-like fan of active fibers."""
    return ProblemCase(
        name="tongue",
        mesh=geometry.tongue(),
        material=fem.MaterialField.uniform(0.6, 0.4),
        activation=fem.ActivationSpec(T=2e-5, beta=1.0, fibers=fem.FiberField("radial_fan", point=TONGUE_APEX)),
        tolerances={"J1": 2e-4, "J2": 1e-6},
        description="tongue-like geometry, 73.8 x 53.7 mm, posterior fan activation",
    )


def case_artery_like():
    """Artery cross-section lookalike: soft necrotic core, circumferential media fibers."""
    return ProblemCase(
        name="artery",
        mesh=geometry.artery(),
        material=fem.MaterialField({0: (0.6, 0.4), 1: (0.011, 0.4)}),
        activation=fem.ActivationSpec(T=0.01, beta=1.0, fibers=fem.FiberField("circumferential", point=(0.0, 0.0))),
        tolerances={"J1": 5e-6, "J2": 5e-6},
        description="artery-like cross-section, outer diameter 5 mm",
    )


BUILTIN_CASES = {
    "manufactured": case_manufactured_square,
    "patch": case_patch,
    "tongue": case_tongue_like,
    "artery": case_artery_like,
}

SHIPPED_CASES = ("manufactured", "tongue", "artery")


def builtin_case(name):
    try:
        return BUILTIN_CASES[name]()
    except KeyError:
        raise CaseError(f"unknown case {name!r}; known: {', '.join(sorted(BUILTIN_CASES))}") from None


# -- post-solve sanity metrics -----------------------------------------------

def small_strain_metrics(case, u_h):
    """Max displacement over the domain diameter and max equivalent strain.

    The equivalent strain is ``sqrt(2/3 e_dev : e_dev)`` of the plane-strain
    tensor (zero out-of-plane component), sampled at the element nodes.
    """
    space = u_h.space
    mesh = space.mesh
    from scipy.spatial.distance import pdist

    hull = mesh.vertices[np.unique(mesh.boundary_edges)]
    diam = float(pdist(hull).max()) if len(hull) > 1 else 1.0
    disp = float(np.linalg.norm(u_h.nodal_values, axis=1).max()) / diam
    du = u_h.gradients_at(space.element.nodes)
    eps = 0.5 * (du + np.swapaxes(du, -1, -2))
    tr = (eps[..., 0, 0] + eps[..., 1, 1]) / 3.0
    dev2 = (eps[..., 0, 0] - tr) ** 2 + (eps[..., 1, 1] - tr) ** 2 + tr ** 2 + 2 * eps[..., 0, 1] ** 2
    strain = float(np.sqrt(2.0 / 3.0 * dev2).max())
    return {"max_relative_displacement": disp, "max_strain_intensity": strain}


# -- configuration files -----------------------------------------------------

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log, "sqrt": np.sqrt,
    "abs": np.abs, "arctan2": np.arctan2, "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh,
    "minimum": np.minimum, "maximum": np.maximum, "where": np.where,
}
_CONSTS = {"pi": np.pi, "e": np.e}
_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Compare, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.Mod, ast.USub, ast.UAdd, ast.Invert,
    ast.BitAnd, ast.BitOr, ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Eq, ast.NotEq, ast.Tuple,
)


def compile_expression(text, variables):
    """Vectorised callable for an arithmetic expression in ``variables``.

    Only arithmetic, comparisons, ``&``/``|``, numeric constants, ``pi``, ``e``
    and a fixed set of numpy functions are accepted.
    """
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise CaseError(f"cannot parse expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise CaseError(f"disallowed construct {type(node).__name__} in {text!r}")
        if isinstance(node, ast.Name) and node.id not in variables and node.id not in _FUNCS and node.id not in _CONSTS:
            raise CaseError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise CaseError(f"disallowed call in {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise CaseError(f"non-numeric constant in {text!r}")
    code = compile(tree, "<case expression>", "eval")

    def fn(**values):
        env = dict(_FUNCS)
        env.update(_CONSTS)
        env.update(values)
        return eval(code, {"__builtins__": {}}, env)

    return fn


def _vector_expression(text, variables, what):
    parts = _split_list(text)
    if len(parts) != 2:
        raise CaseError(f"{what} needs two comma-separated components, got {text!r}")
    fx, fy = (compile_expression(p, variables) for p in parts)
    return fx, fy


def _split_list(text):
    out, depth, cur = [], 0, ""
    for ch in text:
        if ch == "," and depth == 0:
            out.append(cur)
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    out.append(cur)
    return [p.strip() for p in out if p.strip()]


def _floats(text, n, what):
    try:
        vals = [float(v) for v in _split_list(text)]
    except ValueError:
        raise CaseError(f"{what}: expected {n} numbers, got {text!r}") from None
    if len(vals) != n:
        raise CaseError(f"{what}: expected {n} numbers, got {text!r}")
    return vals


def _number(sec, key, what, default=None):
    if key not in sec:
        if default is None:
            raise CaseError(f"missing required key {key!r} in [{what}]")
        return default
    try:
        return float(sec[key])
    except ValueError:
        raise CaseError(f"[{what}] {key}: not a number: {sec[key]!r}") from None


def _load_body_force(text):
    fx, fy = _vector_expression(text, {"x", "y"}, "body_force")

    def f(xy):
        xy = np.atleast_2d(xy)
        v = {"x": xy[:, 0], "y": xy[:, 1]}
        return np.column_stack([np.broadcast_to(fx(**v), len(xy)), np.broadcast_to(fy(**v), len(xy))]).astype(float)

    return f


def _load_traction(text):
    fx, fy = _vector_expression(text, {"x", "y", "nx", "ny"}, "traction")

    def F(xy, n):
        xy, n = np.atleast_2d(xy), np.atleast_2d(n)
        v = {"x": xy[:, 0], "y": xy[:, 1], "nx": n[:, 0], "ny": n[:, 1]}
        return np.column_stack([np.broadcast_to(fx(**v), len(xy)), np.broadcast_to(fy(**v), len(xy))]).astype(float)

    return F


def _region_mask(mesh, spec, current, what):
    spec = spec.strip()
    if spec == "mesh":
        return current
    if spec == "all":
        return np.ones(mesh.n_cells, bool)
    if spec == "none":
        return np.zeros(mesh.n_cells, bool)
    words = spec.split(None, 1)
    if words[0] == "box" and len(words) == 2:
        x0, x1, y0, y1 = _floats(words[1], 4, what)
        c = mesh.centroids
        return (c[:, 0] > x0) & (c[:, 0] < x1) & (c[:, 1] > y0) & (c[:, 1] < y1)
    if words[0] == "expr" and len(words) == 2:
        fn = compile_expression(words[1], {"x", "y"})
        c = mesh.centroids
        return np.broadcast_to(np.asarray(fn(x=c[:, 0], y=c[:, 1]), bool), (mesh.n_cells,)).copy()
    raise CaseError(f"{what}: expected mesh, all, none, 'box x0, x1, y0, y1' or 'expr <condition>', got {spec!r}")


def _fiber_direction(text):
    d = np.array(_floats(text, 2, "[activation] direction"))
    dev = abs(np.linalg.norm(d) - 1.0)
    if dev > 1e-6:
        raise CaseError(f"fiber direction {tuple(d)} is not a unit vector (|d| - 1 = {dev:.2e})")
    if dev > 0:
        warnings.warn(f"fiber direction normalised (|d| - 1 = {dev:.2e})", stacklevel=3)
        d = d / np.linalg.norm(d)
    return tuple(float(v) for v in d)


def parse_case_config(text, base_dir="."):
    """Build a :class:`ProblemCase` from configuration text (see README)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise CaseError(f"malformed case file: {exc}") from None

    allowed = {"case", "mesh", "activation", "loads", "bc", "qoi"}
    for sec in cp.sections():
        if sec not in allowed and not sec.startswith("material."):
            raise CaseError(f"unknown section [{sec}]")
    if "mesh" not in cp:
        raise CaseError("missing required section [mesh]")
    ms = cp["mesh"]
    units = ms.get("units")
    if units is None:
        raise CaseError("missing required key 'units' in [mesh]")
    if units.strip() != UNITS:
        raise CaseError(f"units must be {UNITS!r} (mm / MPa / N), got {units!r}")

    if "builtin" in ms and "path" in ms:
        raise CaseError("[mesh] takes either builtin or path, not both")
    try:
        if "builtin" in ms:
            params = {}
            for k, v in ms.items():
                if k in ("builtin", "units"):
                    continue
                try:
                    params[k] = int(v)
                except ValueError:
                    try:
                        params[k] = float(v)
                    except ValueError:
                        raise CaseError(f"[mesh] {k}: not a number: {v!r}") from None
            mesh = geometry.builtin(ms["builtin"].strip(), **params)
        elif "path" in ms:
            p = Path(ms["path"].strip())
            mesh = load_mesh(p if p.is_absolute() else Path(base_dir) / p)
        else:
            raise CaseError("missing required key 'builtin' or 'path' in [mesh]")
    except (MeshError, OSError) as exc:
        raise CaseError(f"cannot load mesh: {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CaseError):
            raise
        raise CaseError(f"cannot build mesh: {exc}") from None

    regions = {}
    for sec in cp.sections():
        if not sec.startswith("material."):
            continue
        rid = sec.split(".", 1)[1]
        try:
            rid = int(rid)
        except ValueError:
            raise CaseError(f"material region id must be an integer, got [{sec}]") from None
        E = _number(cp[sec], "E_mpa", sec)
        nu = _number(cp[sec], "nu", sec)
        if not 0.0 <= nu < 0.5:
            raise CaseError(f"[{sec}] nu = {nu} outside [0, 0.5)")
        if not E > 0:
            raise CaseError(f"[{sec}] E_mpa must be positive")
        regions[rid] = (E, nu)
    if not regions:
        raise CaseError("at least one [material.<id>] section is required")
    material = fem.MaterialField(regions)

    activation = fem.NO_ACTIVATION
    if "activation" in cp:
        a = cp["activation"]
        T = _number(a, "T_mpa", "activation", 0.0)
        beta = _number(a, "beta", "activation", 0.0)
        mode = a.get("fiber_mode", "constant").strip()
        if mode == "constant":
            fibers = fem.FiberField("constant", direction=_fiber_direction(a.get("direction", "1, 0")))
        elif mode in ("radial_fan", "circumferential"):
            key = "apex" if mode == "radial_fan" else "center"
            if key not in a:
                raise CaseError(f"missing required key {key!r} in [activation] for fiber_mode = {mode}")
            fibers = fem.FiberField(mode, point=tuple(_floats(a[key], 2, f"[activation] {key}")))
        else:
            raise CaseError(f"unknown fiber_mode {mode!r}")
        try:
            activation = fem.ActivationSpec(T=T, beta=beta, fibers=fibers)
        except ValueError as exc:
            raise CaseError(str(exc)) from None
        if "region" in a:
            mesh = mesh.replace(in_active=_region_mask(mesh, a["region"], mesh.in_active, "[activation] region"))

    body_force = traction = None
    if "loads" in cp:
        ld = cp["loads"]
        if "body_force" in ld:
            body_force = _load_body_force(ld["body_force"])
        if "traction" in ld:
            traction = _load_traction(ld["traction"])

    if "bc" in cp and "dirichlet" in cp["bc"]:
        spec = cp["bc"]["dirichlet"].strip()
        if spec == "all":
            mesh = mesh.replace(boundary_tags=np.full(len(mesh.boundary_edges), DIRICHLET))
        elif spec != "mesh":
            fn = compile_expression(spec, {"x", "y"})
            mesh = mesh.with_boundary_tags(lambda mid: np.broadcast_to(
                np.asarray(fn(x=mid[:, 0], y=mid[:, 1]), bool), (len(mid),)))
    if not np.any(mesh.boundary_tags == DIRICHLET):
        raise CaseError("the Dirichlet boundary is empty")

    tolerances = {}
    if "qoi" in cp:
        q = cp["qoi"]
        if "region" in q:
            mesh = mesh.replace(in_interest=_region_mask(mesh, q["region"], mesh.in_interest, "[qoi] region"))
        for v in ("J1", "J2"):
            key = f"tol_{v.lower()}"
            if key in q:
                tolerances[v] = _number(q, key, "qoi")
        if "qoi" in q and q["qoi"].strip() not in ("J1", "J2"):
            raise CaseError(f"[qoi] qoi must be J1 or J2, got {q['qoi']!r}")

    name = cp.get("case", "name", fallback="config").strip()
    try:
        return ProblemCase(name=name, mesh=mesh, material=material, activation=activation,
                           body_force=body_force, traction=traction, tolerances=tolerances)
    except ValueError as exc:
        if isinstance(exc, CaseError):
            raise
        raise CaseError(str(exc)) from None


def config_qoi(path_or_text):
    """QoI variant named in a case file's ``[qoi]`` section (default ``J1``)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    p = Path(path_or_text)
    cp.read_string(p.read_text(encoding="utf-8") if p.exists() else str(path_or_text))
    return cp.get("qoi", "qoi", fallback="J1").strip()


def load_case_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CaseError(f"cannot read case file {path}: {exc}") from None
    return parse_case_config(text, base_dir=path.parent)

