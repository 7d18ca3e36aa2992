"""Synthetic datasets with exact or numerical oracles.

* potential energy surfaces with analytic forces (``gen_pes``),
* 1D advection point sets with the exact travelling-wave solution,
* 1D compressible-flow point sets (initial/boundary data only),
* 2D FitzHugh-Nagumo diffusion-reaction point sets backed by an explicit
  finite-difference reference solver.

Everything is a deterministic function of its parameters and seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np


class DatasetError(ValueError):
    pass


# -- label rescaling ------------------------------------------------------------

@dataclass(frozen=True)
class RescaleInfo:
    C: float
    max_abs_label: float

    def to_dict(self) -> dict:
        return {"C": self.C, "max_abs_label": self.max_abs_label}


def rescale_constant(labels: Sequence[float] | np.ndarray) -> RescaleInfo:
    """Smallest power of ten bounding every ``|label|`` (1 for all-zero labels)."""
    arr = np.asarray(labels, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise DatasetError("rescale_constant needs at least one label")
    if not np.isfinite(arr).all():
        raise DatasetError("labels must be finite")
    m = float(np.max(np.abs(arr)))
    if m == 0.0:
        return RescaleInfo(1.0, 0.0)
    k = math.ceil(math.log10(m))
    # guard log10 rounding at exact powers of ten
    while 10.0 ** (k - 1) >= m:
        k -= 1
    while 10.0 ** k < m:
        k += 1
    return RescaleInfo(float(10.0 ** k), m)


# -- potential energy surfaces --------------------------------------------------

PES_KINDS = ("quadratic", "double_well", "gaussian_mix")


@dataclass
class PESDataset:
    X: np.ndarray  # (n, d)
    E: np.ndarray  # (n,)
    F: np.ndarray  # (n, d)
    descriptor: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.E)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: np.ndarray) -> "PESDataset":
        return PESDataset(self.X[idx], self.E[idx], self.F[idx], self.descriptor)

    def rescale_info(self) -> RescaleInfo:
        return rescale_constant(np.concatenate([self.E, self.F.reshape(-1)]))


def _pes_functions(kind: str, d: int, params: Mapping[str, Any]) -> tuple[Callable, Callable]:
    """Return (U, gradU) acting on (n, d) arrays."""
    offset = float(params.get("offset", 0.0))
    if kind == "quadratic":
        A = np.asarray(params.get("A", np.eye(d)), dtype=np.float64)
        if A.shape != (d, d) or not np.allclose(A, A.T):
            raise DatasetError("quadratic: A must be a symmetric d x d matrix")
        if np.linalg.eigvalsh(A).min() <= 0:
            raise DatasetError("quadratic: A must be positive definite")
        return (lambda X: 0.5 * np.einsum("ni,ij,nj->n", X, A, X) + offset,
                lambda X: X @ A)
    if kind == "double_well":
        a, b, c = (float(params.get(k, v)) for k, v in (("a", 1.0), ("b", 1.0), ("c", 1.0)))
        if a <= 0 or b <= 0 or c <= 0:
            raise DatasetError("double_well: a, b, c must be positive")

        def U(X):
            return a * (X[:, 0] ** 2 - b) ** 2 + c * np.sum(X[:, 1:] ** 2, axis=1) + offset

        def dU(X):
            G = 2.0 * c * X
            G[:, 0] = 4.0 * a * X[:, 0] * (X[:, 0] ** 2 - b)
            return G
        return U, dU
    if kind == "gaussian_mix":
        w = np.asarray(params.get("weights", [1.0]), dtype=np.float64)
        mu = np.asarray(params.get("centers", [[0.0] * d]), dtype=np.float64)
        s = np.asarray(params.get("widths", [1.0] * len(w)), dtype=np.float64)
        if mu.shape != (len(w), d) or s.shape != w.shape:
            raise DatasetError("gaussian_mix: weights/centers/widths sizes disagree")
        if np.any(s <= 0):
            raise DatasetError("gaussian_mix: widths must be positive")

        def terms(X):
            diff = X[:, None, :] - mu[None, :, :]
            return diff, w * np.exp(-np.sum(diff ** 2, axis=2) / (2.0 * s ** 2))

        def U(X):
            return -np.sum(terms(X)[1], axis=1) + offset

        def dU(X):
            diff, e = terms(X)
            return np.einsum("nk,nkd->nd", e / s ** 2, diff)
        return U, dU
    raise DatasetError(f"unknown PES kind {kind!r}; choose from {PES_KINDS}")


def check_forces(U: Callable, F: np.ndarray, X: np.ndarray, rtol: float = 1e-6) -> float:
    """Max relative deviation of ``F`` from ``-central_diff(U)`` per sample.

    The denominator is ``max(|F|_inf, 1e-3)`` so samples at a minimum do
    not divide by zero.
    """
    worst = 0.0
    fd = np.empty_like(X)
    for j in range(X.shape[1]):
        h = 1e-5 * np.maximum(1.0, np.abs(X[:, j]))
        Xp, Xm = X.copy(), X.copy()
        Xp[:, j] += h
        Xm[:, j] -= h
        fd[:, j] = -(U(Xp) - U(Xm)) / (2.0 * h)
    denom = np.maximum(np.max(np.abs(F), axis=1), 1e-3)
    err = np.max(np.abs(F - fd), axis=1) / denom
    worst = float(err.max(initial=0.0))
    if worst > rtol:
        raise DatasetError(f"force check failed: relative error {worst:.3e} > {rtol:g}")
    return worst


def gen_pes(kind: str, n: int, domain: Sequence[Sequence[float]], params: Mapping[str, Any] | None = None,
            seed: int = 0) -> PESDataset:
    """Sample ``n`` points uniformly in the ``domain`` box and label them.

    ``E = U(x)`` and ``F = -grad U(x)`` analytically; every sample is checked
    against central differences of ``U`` before the dataset is returned.
    """
    if n <= 0:
        raise DatasetError("n must be positive")
    params = dict(params or {})
    box = np.asarray(domain, dtype=np.float64)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise DatasetError("domain must be a list of [lo, hi] pairs with lo < hi")
    d = box.shape[0]
    U, dU = _pes_functions(kind, d, params)
    rng = np.random.default_rng(seed)
    X = box[:, 0] + rng.random((n, d)) * (box[:, 1] - box[:, 0])
    E = U(X)
    F = -dU(X)
    check_forces(U, F, X)
    desc = {"kind": kind, "n": n, "domain": box.tolist(), "params": _jsonable(params), "seed": seed}
    return PESDataset(X, E, F, desc)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# -- PINN point sets ----------------------------------------------------------------

@dataclass
class PointSet:
    coords: dict[str, np.ndarray]
    targets: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(next(iter(self.coords.values())))


@dataclass
class PINNPointSets:
    """Named point sets, e.g. ``f`` (collocation), ``ic``, ``bc``, ``test``."""

    task: str
    sets: dict[str, PointSet]
    domain: dict[str, list[float]]
    descriptor: dict = field(default_factory=dict)

    def __getitem__(self, key: str) -> PointSet:
        return self.sets[key]


@dataclass(frozen=True)
class AdvectionSolution:
    """Exact solution ``u0(x - beta t)`` with ``u0`` a sum of two sines."""

    wavenumbers: tuple[float, float]
    phases: tuple[float, float]
    beta: float

    def u0(self, x: np.ndarray) -> np.ndarray:
        (k1, k2), (p1, p2) = self.wavenumbers, self.phases
        return np.sin(k1 * x + p1) + np.sin(k2 * x + p2)

    def __call__(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        return self.u0(np.asarray(x) - self.beta * np.asarray(t))

    def dx(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        (k1, k2), (p1, p2) = self.wavenumbers, self.phases
        xi = np.asarray(x) - self.beta * np.asarray(t)
        return k1 * np.cos(k1 * xi + p1) + k2 * np.cos(k2 * xi + p2)

    def dt(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        return -self.beta * self.dx(x, t)


@dataclass(frozen=True)
class AdvectionConstants:
    beta: float = 0.1
    length: float = 1.0
    horizon: float = 2.0


def gen_advection(consts: AdvectionConstants, n_f: int, n_ic: int, n_bc: int, seed: int = 0,
                  n_test: tuple[int, int] = (64, 32)) -> tuple[PINNPointSets, AdvectionSolution]:
    """Collocation, initial and periodic boundary sets for 1D advection.

    ``n_bc`` counts boundary points and must be even: each sampled time
    yields a pair at ``x = 0`` and ``x = L`` sharing the same target.
    """
    if min(n_f, n_ic, n_bc) <= 0:
        raise DatasetError("point counts must be positive")
    if n_bc % 2:
        raise DatasetError("n_bc must be even (periodic pairs)")
    L, T = consts.length, consts.horizon
    rng = np.random.default_rng(seed)
    modes = rng.integers(1, 5, size=2)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=2)
    sol = AdvectionSolution(tuple(float(m * 2.0 * np.pi / L) for m in modes),
                            tuple(float(p) for p in phases), consts.beta)

    xf, tf = rng.uniform(0, L, n_f), rng.uniform(0, T, n_f)
    xic = rng.uniform(0, L, n_ic)
    tb = rng.uniform(0, T, n_bc // 2)
    xbc = np.concatenate([np.zeros_like(tb), np.full_like(tb, L)])
    tbc = np.concatenate([tb, tb])
    xs, ts = np.meshgrid(np.linspace(0, L, n_test[0]), np.linspace(0, T, n_test[1]), indexing="ij")
    xs, ts = xs.reshape(-1), ts.reshape(-1)

    sets = {
        "f": PointSet({"x": xf, "t": tf}),
        "ic": PointSet({"x": xic, "t": np.zeros(n_ic)}, {"psi": sol.u0(xic)}),
        "bc": PointSet({"x": xbc, "t": tbc}, {"psi": sol(xbc, tbc)}),
        "test": PointSet({"x": xs, "t": ts}, {"psi": sol(xs, ts)}),
    }
    desc = {"kind": "advection", "beta": consts.beta, "length": L, "horizon": T, "seed": seed,
            "n_f": n_f, "n_ic": n_ic, "n_bc": n_bc,
            "wavenumbers": list(sol.wavenumbers), "phases": list(sol.phases)}
    return PINNPointSets("advection", sets, {"x": [0.0, L], "t": [0.0, T]}, desc), sol


@dataclass(frozen=True)
class CFDConstants:
    gamma: float = 5.0 / 3.0
    eta: float = 1e-8   # stored only; the residuals below are inviscid
    zeta: float = 1e-8
    length: float = 1.0
    horizon: float = 1.0


def gen_cfd(consts: CFDConstants, n_f: int, n_ic: int, n_bc: int, seed: int = 0) -> PINNPointSets:
    """Point sets for 1D compressible flow.

    Each of density, velocity and pressure starts as a background value plus
    a superposition of four random periodic sine waves. There is no
    reference solution, so the boundary targets hold the (periodic)
    initial boundary values for all times and no ``test`` set is produced.
    """
    if min(n_f, n_ic, n_bc) <= 0:
        raise DatasetError("point counts must be positive")
    if n_bc % 2:
        raise DatasetError("n_bc must be even (periodic pairs)")
    L, T = consts.length, consts.horizon
    rng = np.random.default_rng(seed)
    fields = {}
    for name, base, amp in (("rho", 1.0, 0.1), ("v", 0.0, 0.1), ("p", 1.0, 0.1)):
        modes = rng.integers(1, 5, size=4)
        phases = rng.uniform(0, 2 * np.pi, size=4)
        amps = amp * rng.uniform(0.0, 1.0, size=4) / 4.0
        fields[name] = (base, modes.tolist(), phases.tolist(), amps.tolist())

    def initial(name: str, x: np.ndarray) -> np.ndarray:
        base, modes, phases, amps = fields[name]
        out = np.full_like(x, base)
        for m, ph, a in zip(modes, phases, amps):
            out = out + a * np.sin(2 * np.pi * m * x / L + ph)
        return out

    xf, tf = rng.uniform(0, L, n_f), rng.uniform(0, T, n_f)
    xic = rng.uniform(0, L, n_ic)
    tb = rng.uniform(0, T, n_bc // 2)
    xbc = np.concatenate([np.zeros_like(tb), np.full_like(tb, L)])
    tbc = np.concatenate([tb, tb])
    sets = {
        "f": PointSet({"x": xf, "t": tf}),
        "ic": PointSet({"x": xic, "t": np.zeros(n_ic)}, {k: initial(k, xic) for k in fields}),
        "bc": PointSet({"x": xbc, "t": tbc}, {k: initial(k, xbc) for k in fields}),
    }
    desc = {"kind": "cfd", "gamma": consts.gamma, "eta": consts.eta, "zeta": consts.zeta,
            "length": L, "horizon": T, "seed": seed, "n_f": n_f, "n_ic": n_ic, "n_bc": n_bc,
            "initial_fields": fields}
    return PINNPointSets("cfd", sets, {"x": [0.0, L], "t": [0.0, T]}, desc)


# -- diffusion-reaction ---------------------------------------------------------

@dataclass(frozen=True)
class DiffReactConstants:
    k: float = 0.005
    Du: float = 1e-3
    Dv: float = 5e-3
    lo: float = -1.0
    hi: float = 1.0


def _laplacian(u: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """5-point Laplacian on cell centres with zero-flux (mirror) boundaries."""
    p = np.pad(u, 1, mode="edge")
    return ((p[2:, 1:-1] - 2 * u + p[:-2, 1:-1]) / dx ** 2
            + (p[1:-1, 2:] - 2 * u + p[1:-1, :-2]) / dy ** 2)


def fhn_step(u: np.ndarray, v: np.ndarray, dt: float, dx: float, dy: float,
             consts: DiffReactConstants, reaction: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """One forward-Euler step of ``u_t = Du lap u + u - u^3 - k - v``, ``v_t = Dv lap v + u - v``."""
    du = consts.Du * _laplacian(u, dx, dy)
    dv = consts.Dv * _laplacian(v, dx, dy)
    if reaction:
        du = du + u - u ** 3 - consts.k - v
        dv = dv + u - v
    return u + dt * du, v + dt * dv


def max_stable_dt(consts: DiffReactConstants, dx: float, dy: float) -> float:
    D = max(consts.Du, consts.Dv)
    return math.inf if D == 0 else min(dx, dy) ** 2 / (4.0 * D)


def solve_fhn(u0: np.ndarray, v0: np.ndarray, consts: DiffReactConstants, dt: float, n_steps: int,
              reaction: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Explicit solver; returns trajectories of shape (n_steps + 1, nx, ny)."""
    nx, ny = u0.shape
    dx = (consts.hi - consts.lo) / nx
    dy = (consts.hi - consts.lo) / ny
    if dt > max_stable_dt(consts, dx, dy):
        raise DatasetError(f"dt={dt} violates explicit stability bound {max_stable_dt(consts, dx, dy):.4g}")
    U = np.empty((n_steps + 1, nx, ny))
    V = np.empty_like(U)
    U[0], V[0] = u0, v0
    for n in range(n_steps):
        U[n + 1], V[n + 1] = fhn_step(U[n], V[n], dt, dx, dy, consts, reaction)
    return U, V


@dataclass
class ReferenceField:
    x: np.ndarray  # (nx,) cell centres
    y: np.ndarray  # (ny,)
    t: np.ndarray  # (nt,)
    u: np.ndarray  # (nt, nx, ny)
    v: np.ndarray


def gen_diffreact(consts: DiffReactConstants, grid: tuple[int, int] = (32, 32), dt: float = 0.005,
                  T: float = 1.0, n_f: int = 2000, n_ic: int = 200, n_bc: int = 200, seed: int = 0,
                  n_test: int = 2000) -> tuple[PINNPointSets, ReferenceField]:
    """Point sets sampled from an explicit finite-difference reference run.

    Initial fields are i.i.d. N(0, 1) per cell, smoothed by one diffusion
    step at the largest stable explicit step size. Boundary points sit on the
    domain faces and take the value of the adjacent cell.
    """
    if min(n_f, n_ic, n_bc, n_test) <= 0:
        raise DatasetError("point counts must be positive")
    nx, ny = grid
    dx, dy = (consts.hi - consts.lo) / nx, (consts.hi - consts.lo) / ny
    if dt > max_stable_dt(consts, dx, dy):
        raise DatasetError(f"dt={dt} violates explicit stability bound {max_stable_dt(consts, dx, dy):.4g}")
    rng = np.random.default_rng(seed)
    u0, v0 = rng.standard_normal((nx, ny)), rng.standard_normal((nx, ny))
    smooth = 0.25 * min(dx, dy) ** 2
    u0 = u0 + smooth * _laplacian(u0, dx, dy)
    v0 = v0 + smooth * _laplacian(v0, dx, dy)
    n_steps = int(round(T / dt))
    U, V = solve_fhn(u0, v0, consts, dt, n_steps)
    xs = consts.lo + (np.arange(nx) + 0.5) * dx
    ys = consts.lo + (np.arange(ny) + 0.5) * dy
    ts = np.arange(n_steps + 1) * dt
    ref = ReferenceField(xs, ys, ts, U, V)

    def sample(n: int, t_index: np.ndarray | None = None) -> tuple[np.ndarray, ...]:
        i, j = rng.integers(0, nx, n), rng.integers(0, ny, n)
        k = rng.integers(0, n_steps + 1, n) if t_index is None else t_index
        return i, j, k

    i, j, k = sample(n_f)
    f = PointSet({"x": xs[i], "y": ys[j], "t": ts[k]})
    i, j, k = sample(n_ic, np.zeros(n_ic, dtype=int))
    ic = PointSet({"x": xs[i], "y": ys[j], "t": ts[k]}, {"u": U[0, i, j], "v": V[0, i, j]})

    # boundary: pick a face, a position along it, and a time
    face = rng.integers(0, 4, n_bc)
    pos = rng.integers(0, max(nx, ny), n_bc)
    k = rng.integers(0, n_steps + 1, n_bc)
    bi = np.where(face == 0, 0, np.where(face == 1, nx - 1, pos % nx))
    bj = np.where(face == 2, 0, np.where(face == 3, ny - 1, pos % ny))
    bx = np.where(face == 0, consts.lo, np.where(face == 1, consts.hi, xs[bi]))
    by = np.where(face == 2, consts.lo, np.where(face == 3, consts.hi, ys[bj]))
    bc = PointSet({"x": bx, "y": by, "t": ts[k]}, {"u": U[k, bi, bj], "v": V[k, bi, bj]})

    i, j, k = sample(n_test)
    test = PointSet({"x": xs[i], "y": ys[j], "t": ts[k]}, {"u": U[k, i, j], "v": V[k, i, j]})
    desc = {"kind": "diffreact", "k": consts.k, "Du": consts.Du, "Dv": consts.Dv, "grid": list(grid),
            "dt": dt, "T": T, "seed": seed, "n_f": n_f, "n_ic": n_ic, "n_bc": n_bc, "n_test": n_test}
    dom = {"x": [consts.lo, consts.hi], "y": [consts.lo, consts.hi], "t": [0.0, T]}
    return PINNPointSets("diffreact", {"f": f, "ic": ic, "bc": bc, "test": test}, dom, desc), ref


# -- IO -----------------------------------------------------------------------

def _dump_line(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def save_pes_jsonl(path: str | Path, ds: PESDataset) -> None:
    lines = [_dump_line({"x": x.tolist(), "E": float(e), "F": f.tolist()}) for x, e, f in zip(ds.X, ds.E, ds.F)]
    Path(path).write_text("".join(line + "\n" for line in lines))


def load_pes_jsonl(path: str | Path, descriptor: dict | None = None) -> PESDataset:
    X, E, F = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DatasetError(f"{path}:{lineno}: record must be an object")
            for key in ("x", "E", "F"):
                if key not in rec:
                    raise DatasetError(f"{path}:{lineno}: record missing {key!r}")
            x, f = np.asarray(rec["x"], dtype=np.float64), np.asarray(rec["F"], dtype=np.float64)
            if x.ndim != 1 or f.shape != x.shape or (X and x.shape != X[0].shape):
                raise DatasetError(f"{path}:{lineno}: inconsistent x/F dimensions")
            X.append(x)
            E.append(float(rec["E"]))
            F.append(f)
    if not X:
        raise DatasetError(f"{path}: empty dataset")
    return PESDataset(np.array(X), np.array(E), np.array(F), dict(descriptor or {}))


def pointsets_to_dict(ps: PINNPointSets) -> dict:
    return {
        "task": ps.task,
        "descriptor": _jsonable(ps.descriptor),
        "domain": ps.domain,
        "sets": {name: {"coords": {k: v.tolist() for k, v in s.coords.items()},
                        "targets": {k: v.tolist() for k, v in s.targets.items()}}
                 for name, s in ps.sets.items()},
    }


def pointsets_from_dict(data: Mapping) -> PINNPointSets:
    try:
        sets = {name: PointSet({k: np.asarray(v, dtype=np.float64) for k, v in s["coords"].items()},
                               {k: np.asarray(v, dtype=np.float64) for k, v in s.get("targets", {}).items()})
                for name, s in data["sets"].items()}
        return PINNPointSets(data["task"], sets, dict(data["domain"]), dict(data.get("descriptor", {})))
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"malformed point-set document: {exc}") from None


def save_pointsets(path: str | Path, ps: PINNPointSets) -> None:
    Path(path).write_text(json.dumps(pointsets_to_dict(ps), sort_keys=True) + "\n")


def load_pointsets(path: str | Path) -> PINNPointSets:
    text = Path(path).read_text()
    if not text.strip():
        raise DatasetError(f"{path}: empty dataset")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}:{exc.lineno}: malformed JSON ({exc.msg})") from None
    return pointsets_from_dict(data)
