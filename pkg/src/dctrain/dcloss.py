"""Loss graphs for derivative-constrained training.

Every builder returns a :class:`LossTerms`: one graph whose outputs are the
named scalar terms plus ``"total"``. Derivatives of the network w.r.t. its
inputs are built with :func:`~dctrain.autodiff.gradients`, so the terms can
themselves be differentiated w.r.t. the parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import nn
from .autodiff import Graph, Ref, gradients
from .pde import AdvectionConstants, CFDConstants, DiffReactConstants, PESDataset, PINNPointSets


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class DCWeights:
    alpha: float = 1.0
    beta: float = 1.0
    rescale_C: float = 1.0

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise LossError("alpha and beta must be non-negative")
        if self.alpha == 0 and self.beta == 0:
            raise LossError("alpha and beta cannot both be zero")
        if not self.rescale_C > 0:
            raise LossError("rescale constant C must be positive")


@dataclass
class LossTerms:
    """A loss graph with named scalar term outputs and a ``total`` output.

    ``bind(data)`` turns a data batch into variable bindings for the
    graph's data variables; model parameters are bound separately with
    :meth:`param_bindings`.
    """

    graph: Graph
    terms: tuple[str, ...]
    heads: dict[str, nn.MLP]
    bind: Callable[..., dict[str, np.ndarray]]
    weights: dict[str, float] = field(default_factory=dict)
    train: bool = False
    total: str = "total"

    def param_names(self) -> list[str]:
        return [f"{h}.{k}" for h, m in self.heads.items() for k in m.params if f"{h}.{k}" in self.graph.variables]

    def param_bindings(self, heads: Mapping[str, nn.MLP] | None = None) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for h, m in (heads or self.heads).items():
            out.update(nn.bindings(m, f"{h}.", train=self.train))
        return out

    def stat_outputs(self) -> list[str]:
        return [name for name in self.graph.outputs if name.endswith((".batch_mean", ".batch_var"))]


def _finish(g: Graph, terms: dict[str, Ref], weights: Mapping[str, float]) -> None:
    total = None
    for name, ref in terms.items():
        g.output(name, ref)
        w = weights.get(name, 1.0)
        if w == 0.0:
            continue
        contrib = ref if w == 1.0 else g.mul(w, ref)
        total = contrib if total is None else total + contrib
    g.output("total", total)


def _column(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).reshape(-1, 1)


def stack_columns(g: Graph, cols: Sequence[Ref]) -> Ref:
    """Assemble (n, 1) columns into an (n, k) matrix using one-hot MatMuls."""
    k = len(cols)
    out = None
    for j, c in enumerate(cols):
        sel = np.zeros((1, k))
        sel[0, j] = 1.0
        term = g.matmul(c, g.const(sel))
        out = term if out is None else out + term
    return out


# -- energy / force ---------------------------------------------------------------

def energy_force_loss(model: nn.MLP, batch: PESDataset | Mapping[str, np.ndarray] | int,
                      w: DCWeights, *, dim: int | None = None, train: bool = False) -> LossTerms:
    """Energy/force loss with label rescaling.

    ``pred = sum_i (f(x_i) - E_i / C)**2`` and ``force = sum_i ||-grad_x
    f(x_i) - F_i / C||**2``; ``total = alpha * pred + beta * force``. The
    predicted force is the negated input gradient of the predicted energy,
    output as ``"force_pred"``.

    ``batch`` may be a concrete batch or just a batch size (with ``dim``);
    the graph only depends on shapes.
    """
    if isinstance(batch, int):
        n, d = batch, dim if dim is not None else model.config.input_dim
    else:
        X = batch.X if isinstance(batch, PESDataset) else np.asarray(batch["X"])
        n, d = X.shape
    if d != model.config.input_dim or model.config.output_dim != 1:
        raise LossError(f"model expects {model.config.input_dim} inputs and one output; batch has {d}")
    g = Graph()
    X_ = g.var("X", (n, d))
    E_ = g.var("E", (n, 1))
    F_ = g.var("F", (n, d))
    energy = nn.forward(model, g, X_, train=train, prefix="energy.")
    (dX,) = gradients(g, g.sum(energy), [X_])
    force = -dX
    g.output("energy_pred", energy)
    g.output("force_pred", force)
    terms = {"pred": g.sum(g.square(energy - E_)), "force": g.sum(g.square(force - F_))}
    weights = {"pred": w.alpha, "force": w.beta}
    _finish(g, terms, weights)
    C = w.rescale_C

    def bind(data: PESDataset | Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        if isinstance(data, PESDataset):
            data = {"X": data.X, "E": data.E, "F": data.F}
        Xb, Eb, Fb = (np.asarray(data[k], dtype=np.float64) for k in ("X", "E", "F"))
        if Xb.shape != (n, d) or Fb.shape != (n, d) or Eb.reshape(-1).shape != (n,):
            raise LossError(f"batch shapes {Xb.shape}/{Eb.shape}/{Fb.shape} do not match graph ({n}, {d})")
        return {"X": Xb, "E": _column(Eb) / C, "F": Fb / C}

    return LossTerms(g, ("pred", "force"), {"energy": model}, bind, weights, train)


# -- PINN helpers -----------------------------------------------------------------

def _set_inputs(g: Graph, set_name: str, coords: Sequence[str], n: int) -> dict[str, Ref]:
    if n <= 0:
        raise LossError(f"point set {set_name!r} is empty")
    return {c: g.var(f"{set_name}.{c}", (n, 1)) for c in coords}


def _heads_on(g: Graph, heads: Mapping[str, nn.MLP], inputs: Mapping[str, Ref], coords: Sequence[str],
              train: bool, record_stats: bool) -> dict[str, Ref]:
    X = stack_columns(g, [inputs[c] for c in coords])
    return {h: nn.forward(m, g, X, train=train, prefix=f"{h}.", record_stats=record_stats)
            for h, m in heads.items()}


def _mse(g: Graph, pred: Ref, target: Ref) -> Ref:
    return g.mean(g.square(pred - target))


def _point_binder(ps_shape: Mapping[str, int], coords: Sequence[str],
                  targets: Mapping[str, Sequence[str]]) -> Callable[[PINNPointSets], dict[str, np.ndarray]]:
    def bind(ps: PINNPointSets) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for set_name, n in ps_shape.items():
            s = ps[set_name]
            if len(s) != n:
                raise LossError(f"point set {set_name!r} has {len(s)} points, graph expects {n}")
            for c in coords:
                out[f"{set_name}.{c}"] = _column(s.coords[c])
            for t in targets.get(set_name, ()):
                out[f"{set_name}.{t}"] = _column(s.targets[t])
        return out
    return bind


def _d(g: Graph, y: Ref, wrt: Sequence[Ref]) -> list[Ref]:
    return gradients(g, g.sum(y), list(wrt))


# -- advection ----------------------------------------------------------------------

def advection_loss(psi: nn.MLP, points: PINNPointSets, consts: AdvectionConstants = AdvectionConstants(),
                   *, train: bool = False) -> LossTerms:
    """``f = mean (psi_t + beta psi_x)**2`` plus IC and BC mean squared errors."""
    coords = ("x", "t")
    sizes = {s: len(points[s]) for s in ("f", "ic", "bc")}
    g = Graph()
    heads = {"psi": psi}
    fin = _set_inputs(g, "f", coords, sizes["f"])
    out_f = _heads_on(g, heads, fin, coords, train, True)["psi"]
    psi_x, psi_t = _d(g, out_f, [fin["x"], fin["t"]])
    terms = {"f": g.mean(g.square(psi_t + g.mul(consts.beta, psi_x)))}
    for set_name, term in (("ic", "IC"), ("bc", "BC")):
        inp = _set_inputs(g, set_name, coords, sizes[set_name])
        pred = _heads_on(g, heads, inp, coords, train, False)["psi"]
        terms[term] = _mse(g, pred, g.var(f"{set_name}.psi", (sizes[set_name], 1)))
    _finish(g, terms, {})
    bind = _point_binder(sizes, coords, {"ic": ["psi"], "bc": ["psi"]})
    return LossTerms(g, tuple(terms), heads, bind, {}, train)


# -- compressible flow ----------------------------------------------------------------

@dataclass(frozen=True)
class CFDFlags:
    per_residual_norm: bool = False
    corrected_momentum_sign: bool = False


def cfd_residuals(g: Graph, rho: Ref, v: Ref, p: Ref, x: Ref, t: Ref, consts: CFDConstants,
                  corrected_momentum_sign: bool = False) -> tuple[Ref, Ref, Ref]:
    """Mass, momentum and energy residuals (f1, f2, f3) as graph nodes.

    ``f2 = rho (v_t + v v_x) - p_x`` by default; ``corrected_momentum_sign``
    switches to ``+ p_x``. The energy density is ``p / (gamma - 1) + rho v^2 / 2``.
    """
    rho_t, = _d(g, rho, [t])
    mom_x, = _d(g, rho * v, [x])
    v_x, v_t = _d(g, v, [x, t])
    p_x, = _d(g, p, [x])
    f1 = rho_t + mom_x
    accel = rho * (v_t + v * v_x)
    f2 = accel + p_x if corrected_momentum_sign else accel - p_x
    energy = g.mul(1.0 / (consts.gamma - 1.0), p) + g.mul(0.5, rho * g.square(v))
    energy_t, = _d(g, energy, [t])
    flux_x, = _d(g, v * (energy + p), [x])
    f3 = energy_t + flux_x
    return f1, f2, f3


def cfd_loss(heads: Mapping[str, nn.MLP], points: PINNPointSets, consts: CFDConstants = CFDConstants(),
             flags: CFDFlags = CFDFlags(), *, train: bool = False) -> LossTerms:
    """Residual term ``f`` plus IC/BC errors for density (d), velocity (v), pressure (p)."""
    if set(heads) != {"rho", "v", "p"}:
        raise LossError("cfd_loss needs heads 'rho', 'v' and 'p'")
    coords = ("x", "t")
    sizes = {s: len(points[s]) for s in ("f", "ic", "bc")}
    heads = dict(heads)
    g = Graph()
    fin = _set_inputs(g, "f", coords, sizes["f"])
    out = _heads_on(g, heads, fin, coords, train, True)
    f1, f2, f3 = cfd_residuals(g, out["rho"], out["v"], out["p"], fin["x"], fin["t"], consts,
                               flags.corrected_momentum_sign)
    if flags.per_residual_norm:
        terms = {"f": g.mean(g.square(f1) + g.square(f2) + g.square(f3))}
    else:
        terms = {"f": g.mean(g.square(f1 + f2 + f3))}
    letter = {"p": "p", "rho": "d", "v": "v"}
    for set_name, prefix in (("ic", "IC"), ("bc", "BC")):
        inp = _set_inputs(g, set_name, coords, sizes[set_name])
        preds = _heads_on(g, heads, inp, coords, train, False)
        for h in ("p", "rho", "v"):
            terms[f"{prefix}_{letter[h]}"] = _mse(g, preds[h], g.var(f"{set_name}.{h}", (sizes[set_name], 1)))
    _finish(g, terms, {})
    bind = _point_binder(sizes, coords, {"ic": ["rho", "v", "p"], "bc": ["rho", "v", "p"]})
    return LossTerms(g, tuple(terms), heads, bind, {}, train)


# -- diffusion-reaction ------------------------------------------------------------------

@dataclass(frozen=True)
class DiffReactFlags:
    corrected_bc: bool = False


def diffreact_residuals(g: Graph, u: Ref, v: Ref, x: Ref, y: Ref, t: Ref,
                        consts: DiffReactConstants) -> tuple[Ref, Ref]:
    u_x, u_y, u_t = _d(g, u, [x, y, t])
    v_x, v_y, v_t = _d(g, v, [x, y, t])
    u_xx, = _d(g, u_x, [x])
    u_yy, = _d(g, u_y, [y])
    v_xx, = _d(g, v_x, [x])
    v_yy, = _d(g, v_y, [y])
    f1 = u_t - g.mul(consts.Du, u_xx + u_yy) - u + u * g.square(u) + consts.k + v
    f2 = v_t - g.mul(consts.Dv, v_xx + v_yy) - u + v
    return f1, f2


def diffreact_loss(heads: Mapping[str, nn.MLP], points: PINNPointSets,
                   consts: DiffReactConstants = DiffReactConstants(), flags: DiffReactFlags = DiffReactFlags(),
                   *, train: bool = False) -> LossTerms:
    """FitzHugh-Nagumo residual ``f = mean (f1 + f2)**2`` with IC, derivative BC and value BC terms.

    The derivative boundary residual is ``u_x + v_x + u_y + u_y``; with
    ``corrected_bc`` the duplicated ``u_y`` becomes ``v_y``.
    """
    if set(heads) != {"u", "v"}:
        raise LossError("diffreact_loss needs heads 'u' and 'v'")
    coords = ("x", "y", "t")
    sizes = {s: len(points[s]) for s in ("f", "ic", "bc")}
    heads = dict(heads)
    g = Graph()
    fin = _set_inputs(g, "f", coords, sizes["f"])
    out = _heads_on(g, heads, fin, coords, train, True)
    f1, f2 = diffreact_residuals(g, out["u"], out["v"], fin["x"], fin["y"], fin["t"], consts)
    terms = {"f": g.mean(g.square(f1 + f2))}
    inp = _set_inputs(g, "ic", coords, sizes["ic"])
    preds = _heads_on(g, heads, inp, coords, train, False)
    terms["IC_u"] = _mse(g, preds["u"], g.var("ic.u", (sizes["ic"], 1)))
    terms["IC_v"] = _mse(g, preds["v"], g.var("ic.v", (sizes["ic"], 1)))
    inp = _set_inputs(g, "bc", coords, sizes["bc"])
    preds = _heads_on(g, heads, inp, coords, train, False)
    u_x, u_y = _d(g, preds["u"], [inp["x"], inp["y"]])
    v_x, v_y = _d(g, preds["v"], [inp["x"], inp["y"]])
    last = v_y if flags.corrected_bc else u_y
    terms["BC"] = g.mean(g.square(u_x + v_x + u_y + last))
    terms["BC_u"] = _mse(g, preds["u"], g.var("bc.u", (sizes["bc"], 1)))
    terms["BC_v"] = _mse(g, preds["v"], g.var("bc.v", (sizes["bc"], 1)))
    _finish(g, terms, {})
    bind = _point_binder(sizes, coords, {"ic": ["u", "v"], "bc": ["u", "v"]})
    return LossTerms(g, tuple(terms), heads, bind, {}, train)
