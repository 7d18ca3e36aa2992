"""Adam training over loss graphs, beta sweeps and ablations."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import dcloss, nn
from .autodiff import Graph, NonFiniteError, evaluate, grad, gradients
from .pde import (AdvectionConstants, CFDConstants, DiffReactConstants, PESDataset, PINNPointSets,
                  PointSet)

DEFAULT_BETAS = (0.01, 0.1, 1.0, 10.0, 30.0, 50.0, 100.0, 200.0)


# -- Adam -----------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")


@dataclass
class AdamState:
    t: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def adam_init(params: Mapping[str, np.ndarray]) -> AdamState:
    return AdamState(0, {k: np.zeros_like(p) for k, p in params.items()},
                     {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              config: AdamConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k!r} has shape {g.shape}, parameter has {p.shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        new_p[k] = p - config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(t, new_m, new_v)


# -- records --------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)
    eval_every: int = 1

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size <= 0 or self.eval_every <= 0:
            raise ValueError("epochs must be >= 0; batch_size and eval_every > 0")


@dataclass
class MetricsRecord:
    epoch: int
    train: dict[str, float]
    eval: dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0

    def deterministic(self) -> tuple:
        """Everything except wall-clock time."""
        return (self.epoch, tuple(self.train.items()), tuple(self.eval.items()))


class DivergenceError(RuntimeError):
    """A loss term or gradient became non-finite."""

    def __init__(self, epoch: int, term: str, history: list[MetricsRecord], heads: dict[str, nn.MLP]):
        super().__init__(f"non-finite value in term {term!r} at epoch {epoch}")
        self.epoch = epoch
        self.term = term
        self.history = history
        self.heads = heads


# -- tasks ----------------------------------------------------------------------------

class PESTask:
    """Energy/force training with mini-batches."""

    kind = "pes"
    terms = ("pred", "force")

    def __init__(self, weights: dcloss.DCWeights, batch_size: int):
        self.weights = weights
        self.batch_size = batch_size

    def build(self, heads: Mapping[str, nn.MLP], n: int, train: bool) -> dcloss.LossTerms:
        return dcloss.energy_force_loss(heads["energy"], n, self.weights, train=train)

    def batches(self, data: PESDataset, rng: np.random.Generator) -> Iterator[PESDataset]:
        perm = rng.permutation(len(data))
        for start in range(0, len(data), self.batch_size):
            yield data.subset(perm[start:start + self.batch_size])

    @staticmethod
    def batch_len(batch: PESDataset) -> int:
        return len(batch)

    def reduce(self, sums: Mapping[str, float], count: int) -> dict[str, float]:
        # terms are sums over the batch; report per-sample means
        return {k: v / count for k, v in sums.items()}

    def evaluate(self, heads: Mapping[str, nn.MLP], data: PESDataset) -> dict[str, float]:
        model = heads["energy"]
        C = self.weights.rescale_C
        g = Graph()
        X = g.var("X", data.X.shape)
        e = nn.forward(model, g, X, prefix="energy.")
        (dX,) = gradients(g, g.sum(e), [X])
        g.output("E", e)
        g.output("F", -dX)
        out = evaluate(g, {"X": data.X, **nn.bindings(model, "energy.")}, check_finite=False)
        E = out["E"].reshape(-1) * C
        F = out["F"] * C
        de, df = E - data.E, F - data.F
        return {"energy_mae": float(np.mean(np.abs(de))), "energy_mse": float(np.mean(de ** 2)),
                "force_mae": float(np.mean(np.abs(df))), "force_mse": float(np.mean(df ** 2))}


class PINNTask:
    """Full-batch physics-informed training on fixed point sets."""

    def __init__(self, kind: str, consts: Any = None, flags: Any = None):
        self.kind = kind
        if kind == "advection":
            self.consts = consts or AdvectionConstants()
            self.terms = ("f", "IC", "BC")
            self.fields = ("psi",)
            self.coords = ("x", "t")
        elif kind == "cfd":
            self.consts = consts or CFDConstants()
            self.flags = flags or dcloss.CFDFlags()
            self.terms = ("f", "IC_p", "IC_d", "IC_v", "BC_p", "BC_d", "BC_v")
            self.fields = ("rho", "v", "p")
            self.coords = ("x", "t")
        elif kind == "diffreact":
            self.consts = consts or DiffReactConstants()
            self.flags = flags or dcloss.DiffReactFlags()
            self.terms = ("f", "IC_u", "IC_v", "BC", "BC_u", "BC_v")
            self.fields = ("u", "v")
            self.coords = ("x", "y", "t")
        else:
            raise ValueError(f"unknown PINN task {kind!r}")

    def build(self, heads: Mapping[str, nn.MLP], points: PINNPointSets, train: bool) -> dcloss.LossTerms:
        if self.kind == "advection":
            return dcloss.advection_loss(heads["psi"], points, self.consts, train=train)
        if self.kind == "cfd":
            return dcloss.cfd_loss(heads, points, self.consts, self.flags, train=train)
        return dcloss.diffreact_loss(heads, points, self.consts, self.flags, train=train)

    def batches(self, data: PINNPointSets, rng: np.random.Generator) -> Iterator[PINNPointSets]:
        yield data

    @staticmethod
    def batch_len(batch: PINNPointSets) -> int:
        return 1

    def reduce(self, sums: Mapping[str, float], count: int) -> dict[str, float]:
        return {k: v / count for k, v in sums.items()}

    def evaluate(self, heads: Mapping[str, nn.MLP], data: PINNPointSets) -> dict[str, float]:
        test = data.sets.get("test")
        if test is None:
            return {}
        X = np.stack([test.coords[c] for c in self.coords], axis=1)
        errs = [np.mean((nn.predict(heads[f], X).reshape(-1) - test.targets[f]) ** 2) for f in self.fields]
        return {"MSE": float(np.mean(errs))}


def _identify_term(lt: dcloss.LossTerms, bindings: Mapping[str, np.ndarray]) -> str:
    vals = evaluate(lt.graph, bindings, list(lt.terms) + ["total"], check_finite=False)
    for name in lt.terms:
        if not np.isfinite(vals[name]).all():
            return name
    return "total" if not np.isfinite(vals["total"]).all() else "gradient"


def train(heads: Mapping[str, nn.MLP], data: PESDataset | PINNPointSets, task: PESTask | PINNTask,
          config: TrainConfig, eval_data: PESDataset | PINNPointSets | None = None,
          on_epoch: Callable[[MetricsRecord], None] | None = None
          ) -> tuple[dict[str, nn.MLP], list[MetricsRecord]]:
    """Train copies of ``heads``; return them with one record per epoch.

    Shuffling uses a fresh generator per epoch seeded by ``(seed, epoch)``
    and evaluation never touches training state, so the eval cadence does
    not change the trained parameters. Raises :class:`DivergenceError` on
    the first non-finite term or gradient.
    """
    heads = {k: m.copy() for k, m in heads.items()}
    eval_data = data if eval_data is None else eval_data
    params = {f"{h}.{k}": v for h, m in heads.items() for k, v in m.params.items()}
    state = adam_init(params)
    compiled: dict[Any, tuple[dcloss.LossTerms, Graph, tuple[str, ...]]] = {}
    history: list[MetricsRecord] = []

    def compile_for(batch) -> tuple[dcloss.LossTerms, Graph, tuple[str, ...]]:
        key = len(batch) if isinstance(batch, PESDataset) else "full"
        if key not in compiled:
            lt = task.build(heads, len(batch) if isinstance(batch, PESDataset) else batch, train=True)
            names = lt.param_names()
            gg = grad(lt.graph, "total", names)
            outs = ("total", *lt.terms, *lt.stat_outputs(), *(f"dtotal/d{n}" for n in names))
            compiled[key] = (lt, gg, outs)
        return compiled[key]

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        rng = np.random.default_rng([config.seed, epoch])
        sums = dict.fromkeys(task.terms, 0.0)
        count = 0
        for batch in task.batches(data, rng):
            lt, gg, outs = compile_for(batch)
            b = {**lt.bind(batch), **lt.param_bindings(heads)}
            try:
                vals = evaluate(gg, b, outs)
            except NonFiniteError:
                raise DivergenceError(epoch, _identify_term(lt, b), history, heads) from None
            names = lt.param_names()
            grads = {n: vals[f"dtotal/d{n}"] for n in names}
            new_params, state = adam_step({n: params[n] for n in names}, grads, state, config.adam)
            params.update(new_params)
            for n, v in new_params.items():
                h, local = n.split(".", 1)
                heads[h].params[local] = v
            if lt.train:
                for h, m in heads.items():
                    n_stat = len(batch) if isinstance(batch, PESDataset) else len(batch["f"])
                    nn.update_running_stats(m, vals, f"{h}.", n_stat)
            for k in task.terms:
                sums[k] += float(vals[k])
            count += task.batch_len(batch)
        record = MetricsRecord(epoch, task.reduce(sums, count))
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            record.eval = task.evaluate(heads, eval_data)
        record.seconds = time.perf_counter() - t0
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return heads, history


# -- experiment runs -------------------------------------------------------------------

@dataclass(frozen=True)
class LossSpec:
    alpha: float = 1.0
    beta: float = 1.0
    rescale: bool = False
    per_residual_norm: bool = False
    corrected_momentum_sign: bool = False
    corrected_bc: bool = False


@dataclass
class RunSpec:
    """Everything needed to reproduce one training run."""

    task: str
    data: PESDataset | PINNPointSets
    model: nn.MLPConfig
    train: TrainConfig
    loss: LossSpec = field(default_factory=LossSpec)
    eval_data: PESDataset | PINNPointSets | None = None
    name: str = "run"


@dataclass
class RunResult:
    spec_name: str
    seed: int
    status: str  # "ok" or "diverged"
    history: list[MetricsRecord]
    heads: dict[str, nn.MLP]
    rescale_C: float = 1.0
    diverged_epoch: int | None = None
    diverged_term: str | None = None
    terms: tuple[str, ...] = ()

    def final(self) -> dict[str, float]:
        """Last training terms and the most recent eval metrics (NaN when diverged)."""
        if self.status != "ok" or not self.history:
            keys = set(self.terms)
            for r in self.history:
                keys.update(r.train, r.eval)
            return {k: math.nan for k in sorted(keys)}
        out = dict(self.history[-1].train)
        for rec in reversed(self.history):
            if rec.eval:
                out.update(rec.eval)
                break
        return out


HEADS = {"pes": ("energy",), "advection": ("psi",), "cfd": ("rho", "v", "p"), "diffreact": ("u", "v")}
INPUT_DIM = {"advection": 2, "cfd": 2, "diffreact": 3}


def make_task(spec: RunSpec) -> tuple[PESTask | PINNTask, float]:
    if spec.task == "pes":
        C = spec.data.rescale_info().C if spec.loss.rescale else 1.0
        w = dcloss.DCWeights(spec.loss.alpha, spec.loss.beta, C)
        return PESTask(w, spec.train.batch_size), C
    desc = spec.data.descriptor
    if spec.task == "advection":
        consts = AdvectionConstants(desc.get("beta", 0.1), desc.get("length", 1.0), desc.get("horizon", 2.0))
        return PINNTask("advection", consts), 1.0
    if spec.task == "cfd":
        consts = CFDConstants(desc.get("gamma", 5 / 3), desc.get("eta", 1e-8), desc.get("zeta", 1e-8))
        flags = dcloss.CFDFlags(spec.loss.per_residual_norm, spec.loss.corrected_momentum_sign)
        return PINNTask("cfd", consts, flags), 1.0
    if spec.task == "diffreact":
        consts = DiffReactConstants(desc.get("k", 0.005), desc.get("Du", 1e-3), desc.get("Dv", 5e-3))
        return PINNTask("diffreact", consts, dcloss.DiffReactFlags(spec.loss.corrected_bc)), 1.0
    raise ValueError(f"unknown task {spec.task!r}")


def make_heads(spec: RunSpec) -> dict[str, nn.MLP]:
    names = HEADS[spec.task]
    input_dim = spec.data.dim if spec.task == "pes" else INPUT_DIM[spec.task]
    return {h: nn.build_mlp(replace(spec.model, input_dim=input_dim, output_dim=1, seed=spec.model.seed + i))
            for i, h in enumerate(names)}


def run(spec: RunSpec, on_epoch: Callable[[MetricsRecord], None] | None = None) -> RunResult:
    """Train one RunSpec; divergence is recorded rather than raised."""
    task, C = make_task(spec)
    heads = make_heads(spec)
    try:
        trained, history = train(heads, spec.data, task, spec.train, spec.eval_data, on_epoch)
    except DivergenceError as exc:
        return RunResult(spec.name, spec.train.seed, "diverged", exc.history, exc.heads, C, exc.epoch, exc.term,
                         tuple(task.terms))
    return RunResult(spec.name, spec.train.seed, "ok", history, trained, C, terms=tuple(task.terms))


def run_many(specs: Sequence[RunSpec], jobs: int = 1) -> list[RunResult]:
    """Run independent specs, optionally in worker processes; order is preserved."""
    if jobs <= 1 or len(specs) <= 1:
        return [run(s) for s in specs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, specs))


# -- protocols ----------------------------------------------------------------------------

def beta_sweep(base: RunSpec, betas: Iterable[float] = DEFAULT_BETAS, jobs: int = 1) -> list[dict[str, Any]]:
    """Train once per beta with alpha fixed at 1; one table row per beta.

    Besides final losses each row carries relative errors (MSE over label
    variance) for energy and force and their ratio ``force_rel / energy_rel``,
    the energy-versus-force difficulty gap.
    """
    if base.task != "pes":
        raise ValueError("beta_sweep runs on PES tasks")
    betas = list(betas)
    specs = [replace(base, loss=replace(base.loss, alpha=1.0, beta=float(b)), name=f"beta={b:g}") for b in betas]
    return sweep_rows(base, betas, run_many(specs, jobs))


def sweep_rows(base: RunSpec, betas: Sequence[float], results: Sequence[RunResult]) -> list[dict[str, Any]]:
    """Table rows for already-finished beta sweep runs (same order as ``betas``)."""
    eval_data = base.eval_data if base.eval_data is not None else base.data
    var_e, var_f = float(np.var(eval_data.E)), float(np.var(eval_data.F))
    rows = []
    for b, res in zip(betas, results):
        fin = res.final()
        row: dict[str, Any] = {"beta": float(b), "alpha": 1.0, "status": res.status}
        for key in ("energy_mae", "energy_mse", "force_mae", "force_mse", "pred", "force"):
            row[key] = fin.get(key, math.nan)
        row["energy_rel"] = row["energy_mse"] / var_e if var_e > 0 else math.nan
        row["force_rel"] = row["force_mse"] / var_f if var_f > 0 else math.nan
        row["gap"] = row["force_rel"] / row["energy_rel"] if row["energy_rel"] else math.nan
        rows.append(row)
    return rows


@dataclass(frozen=True)
class Variant:
    name: str
    activation: str
    batchnorm: bool
    rescale: bool


PINN_VARIANTS = (
    Variant("Tanh + BN", "Tanh", True, False),
    Variant("IReLU + BN", "IRelu", True, False),
    Variant("Tanh", "Tanh", False, False),
    Variant("IReLU", "IRelu", False, False),
)


def pes_variants(original: str = "ShiftedSoftplus") -> tuple[Variant, ...]:
    return (
        Variant(f"orig ({original})", original, True, False),
        Variant("+IReLU", "IRelu", True, False),
        Variant("+denorm+rescale", original, False, True),
        Variant("+both", "IRelu", False, True),
    )


def variant_spec(base: RunSpec, variant: Variant, seed: int) -> RunSpec:
    model = replace(base.model, activation=nn.Activation.parse(variant.activation),
                    use_batchnorm=variant.batchnorm, seed=seed)
    return replace(base, model=model, train=replace(base.train, seed=seed),
                   loss=replace(base.loss, rescale=variant.rescale), name=variant.name)


def summarize(results: Sequence[RunResult], name: str) -> dict[str, Any]:
    """Median and spread per metric over finished runs; diverged runs are counted."""
    ok = [r for r in results if r.status == "ok"]
    row: dict[str, Any] = {"variant": name, "n_runs": len(results), "n_diverged": len(results) - len(ok)}
    keys: list[str] = []
    for r in results:
        for k in r.final():
            if k not in keys:
                keys.append(k)
    for k in keys:
        vals = [r.final()[k] for r in ok if k in r.final()]
        if vals:
            row[k] = float(np.median(vals))
            row[f"{k}_min"], row[f"{k}_max"] = float(np.min(vals)), float(np.max(vals))
        else:
            row[k] = row[f"{k}_min"] = row[f"{k}_max"] = math.nan
    return row


def ablate(base: RunSpec, variants: Sequence[Variant], seeds: Sequence[int], jobs: int = 1
           ) -> tuple[list[dict[str, Any]], list[RunResult]]:
    """Train every (variant, seed) pair and summarize per variant."""
    if not variants or not seeds:
        raise ValueError("ablate needs at least one variant and one seed")
    specs = [variant_spec(base, v, s) for v in variants for s in seeds]
    results = run_many(specs, jobs)
    table = []
    for i, v in enumerate(variants):
        table.append(summarize(results[i * len(seeds):(i + 1) * len(seeds)], v.name))
    return table, results
