"""Command-line entry point: ``dctrain {gen,train,sweep,ablate,report}``.

Exit codes: 0 success, 2 configuration error, 3 IO error, 4 divergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import nn, pde
from . import trainer as tr

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4
TASKS = ("pes", "advection", "cfd", "diffreact")


class ConfigError(ValueError):
    pass


class OutputExistsError(OSError):
    pass


# -- config schema ----------------------------------------------------------------------

DATA_DEFAULTS: dict[str, dict[str, Any]] = {
    "pes": {"kind": "quadratic", "n": 1000, "n_test": 500, "domain": [[-1.0, 1.0], [-1.0, 1.0]],
            "params": {}, "seed": 0},
    "advection": {"n_f": 2000, "n_ic": 200, "n_bc": 200, "beta": 0.1, "length": 1.0, "horizon": 2.0,
                  "n_test": [64, 32], "seed": 0},
    "cfd": {"n_f": 2000, "n_ic": 200, "n_bc": 200, "gamma": 5.0 / 3.0, "eta": 1e-8, "zeta": 1e-8,
            "length": 1.0, "horizon": 1.0, "seed": 0},
    "diffreact": {"grid": [32, 32], "dt": 0.005, "T": 1.0, "n_f": 2000, "n_ic": 200, "n_bc": 200,
                  "n_test": 2000, "k": 0.005, "Du": 1e-3, "Dv": 5e-3, "seed": 0},
}


def _strict(section: str, given: Mapping[str, Any], allowed: Iterable[str]) -> None:
    if not isinstance(given, Mapping):
        raise ConfigError(f"{section}: expected an object")
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")


@dataclass
class ModelSection:
    hidden: list[int] = field(default_factory=lambda: [40] * 6)
    activation: str = "Tanh"
    use_batchnorm: bool = False
    seed: int = 0
    activation_overrides: list[str | None] | None = None


@dataclass
class TrainSection:
    epochs: int = 100
    batch_size: int = 100
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 1


@dataclass
class LossSection:
    alpha: float = 1.0
    beta: float = 1.0
    rescale: bool = False
    per_residual_norm: bool = False
    corrected_momentum_sign: bool = False
    corrected_bc: bool = False


@dataclass
class SweepSection:
    betas: list[float] = field(default_factory=lambda: list(tr.DEFAULT_BETAS))


@dataclass
class VariantSection:
    name: str
    activation: str
    batchnorm: bool
    rescale: bool = False


@dataclass
class AblateSection:
    variants: list[VariantSection] | None = None  # None -> task default set
    seeds: list[int] = field(default_factory=lambda: [0])


@dataclass
class ExperimentConfig:
    task: str
    data: dict[str, Any] = field(default_factory=dict)
    dataset: str | None = None
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    loss: LossSection = field(default_factory=LossSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    ablate: AblateSection = field(default_factory=AblateSection)
    out: str | None = None

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ExperimentConfig":
        _strict("config", raw, [f.name for f in fields(cls)])
        task = raw.get("task")
        if task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {task!r}")
        data = dict(DATA_DEFAULTS[task])
        _strict("data", raw.get("data", {}), data)
        data.update(raw.get("data", {}))

        def section(kind, name):
            given = raw.get(name, {})
            _strict(name, given, [f.name for f in fields(kind)])
            try:
                return kind(**given)
            except TypeError as exc:
                raise ConfigError(f"{name}: {exc}") from None

        abl_raw = dict(raw.get("ablate", {}))
        _strict("ablate", abl_raw, ["variants", "seeds"])
        variants = abl_raw.pop("variants", None)
        if variants is not None:
            if not isinstance(variants, list):
                raise ConfigError("ablate.variants must be a list")
            parsed = []
            for i, v in enumerate(variants):
                _strict(f"ablate.variants[{i}]", v, [f.name for f in fields(VariantSection)])
                try:
                    parsed.append(VariantSection(**v))
                except TypeError as exc:
                    raise ConfigError(f"ablate.variants[{i}]: {exc}") from None
            variants = parsed
        cfg = cls(task=task, data=data, dataset=raw.get("dataset"), model=section(ModelSection, "model"),
                  train=section(TrainSection, "train"), loss=section(LossSection, "loss"),
                  sweep=section(SweepSection, "sweep"), ablate=AblateSection(variants, **abl_raw),
                  out=raw.get("out"))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def validate(self) -> None:
        try:
            nn.Activation.parse(self.model.activation)
            self.train_config()
            if self.task == "pes":
                tr.dcloss.DCWeights(self.loss.alpha, self.loss.beta, 1.0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.ablate.variants is not None:
            for v in self.ablate.variants:
                try:
                    nn.Activation.parse(v.activation)
                except ValueError as exc:
                    raise ConfigError(f"ablate: {exc}") from None

    def train_config(self) -> tr.TrainConfig:
        t = self.train
        return tr.TrainConfig(t.epochs, t.batch_size, t.seed, tr.AdamConfig(t.lr, t.beta1, t.beta2, t.eps),
                              t.eval_every)

    def model_config(self) -> nn.MLPConfig:
        m = self.model
        return nn.MLPConfig(1, m.hidden, 1, m.activation, m.use_batchnorm, m.seed, m.activation_overrides)

    def loss_spec(self) -> tr.LossSpec:
        return tr.LossSpec(**asdict(self.loss))

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None:
            return self
        cfg = ExperimentConfig.from_dict(self.to_dict())
        cfg.train.seed = cfg.model.seed = seed
        cfg.data["seed"] = seed
        return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return ExperimentConfig.from_dict(raw)


# -- datasets -------------------------------------------------------------------------------

def generate(cfg: ExperimentConfig) -> dict[str, Any]:
    """Generate the task's dataset in memory: {"train", "test", "info"}."""
    d = cfg.data
    try:
        if cfg.task == "pes":
            train = pde.gen_pes(d["kind"], d["n"], d["domain"], d["params"], d["seed"])
            # independent stream for the held-out set
            test = pde.gen_pes(d["kind"], d["n_test"], d["domain"], d["params"], d["seed"] + 1_000_003)
            return {"train": train, "test": test}
        if cfg.task == "advection":
            consts = pde.AdvectionConstants(d["beta"], d["length"], d["horizon"])
            pts, _ = pde.gen_advection(consts, d["n_f"], d["n_ic"], d["n_bc"], d["seed"], tuple(d["n_test"]))
            return {"train": pts, "test": pts}
        if cfg.task == "cfd":
            consts = pde.CFDConstants(d["gamma"], d["eta"], d["zeta"], d["length"], d["horizon"])
            pts = pde.gen_cfd(consts, d["n_f"], d["n_ic"], d["n_bc"], d["seed"])
            return {"train": pts, "test": pts}
        consts = pde.DiffReactConstants(d["k"], d["Du"], d["Dv"])
        pts, _ = pde.gen_diffreact(consts, tuple(d["grid"]), d["dt"], d["T"], d["n_f"], d["n_ic"], d["n_bc"],
                                   d["seed"], d["n_test"])
        return {"train": pts, "test": pts}
    except (pde.DatasetError, TypeError, KeyError) as exc:
        raise ConfigError(f"data: {exc}") from None


def _label_stats(values: np.ndarray) -> dict[str, float]:
    return {"mean": float(np.mean(values)), "var": float(np.var(values)),
            "min": float(np.min(values)), "max": float(np.max(values))}


def dataset_info(task: str, ds: Mapping[str, Any]) -> dict[str, Any]:
    train = ds["train"]
    if task == "pes":
        info = train.rescale_info()
        return {"task": task, "descriptor": train.descriptor, "test_descriptor": ds["test"].descriptor,
                "rescale": info.to_dict(), "energy": _label_stats(train.E), "force": _label_stats(train.F)}
    labels = np.concatenate([v for s in train.sets.values() for v in s.targets.values()])
    return {"task": task, "descriptor": train.descriptor, "rescale": pde.rescale_constant(labels).to_dict(),
            "targets": _label_stats(labels)}


def write_dataset(out: Path, task: str, ds: Mapping[str, Any]) -> dict[str, Any]:
    out.mkdir(parents=True, exist_ok=True)
    info = dataset_info(task, ds)
    if task == "pes":
        pde.save_pes_jsonl(out / "train.jsonl", ds["train"])
        pde.save_pes_jsonl(out / "test.jsonl", ds["test"])
    else:
        pde.save_pointsets(out / "points.json", ds["train"])
    _write_json(out / "info.json", info)
    return info


def read_dataset(path: Path, task: str) -> dict[str, Any]:
    if not path.is_dir():
        raise ConfigError(f"dataset directory not found: {path}")
    try:
        info = json.loads((path / "info.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"dataset {path}: unreadable info.json ({exc})") from None
    if info.get("task") != task:
        raise ConfigError(f"dataset {path} is for task {info.get('task')!r}, config says {task!r}")
    try:
        if task == "pes":
            return {"train": pde.load_pes_jsonl(path / "train.jsonl", info["descriptor"]),
                    "test": pde.load_pes_jsonl(path / "test.jsonl", info.get("test_descriptor"))}
        pts = pde.load_pointsets(path / "points.json")
    except (OSError, pde.DatasetError) as exc:
        raise ConfigError(f"dataset {path}: {exc}") from None
    return {"train": pts, "test": pts}


def obtain_dataset(cfg: ExperimentConfig) -> dict[str, Any]:
    if cfg.dataset is not None:
        return read_dataset(Path(cfg.dataset), cfg.task)
    return generate(cfg)


def run_label(cfg: ExperimentConfig) -> str:
    """Variant label for a single train run, used to group runs in reports."""
    parts = [nn.Activation.parse(cfg.model.activation).value]
    if cfg.model.use_batchnorm:
        parts.append("BN")
    if cfg.task == "pes" and cfg.loss.rescale:
        parts.append("rescale")
    return " + ".join(parts)


def base_spec(cfg: ExperimentConfig, ds: Mapping[str, Any], name: str = "run") -> tr.RunSpec:
    return tr.RunSpec(cfg.task, ds["train"], cfg.model_config(), cfg.train_config(), cfg.loss_spec(),
                      ds["test"], name)


# -- output helpers ---------------------------------------------------------------------------

def _clean(obj: Any) -> Any:
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "NaN" if math.isnan(v) else repr(v)
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row.get(h)) for h in header])
    path.write_text(buf.getvalue())


def _markdown(header: Sequence[str], rows: Sequence[Mapping[str, Any]], bold: Mapping[str, int] | None = None) -> str:
    def cell(v: Any) -> str:
        if isinstance(v, float):
            return "NaN" if math.isnan(v) else f"{v:.4g}"
        return "" if v is None else str(v)

    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for i, row in enumerate(rows):
        cells = []
        for h in header:
            c = cell(row.get(h))
            if bold and bold.get(h) == i:
                c = f"**{c}**"
            cells.append(c)
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _prepare_out(out: Path, force: bool, products: Sequence[str]) -> None:
    existing = [p for p in products if (out / p).exists()]
    if existing and not force:
        raise OutputExistsError(f"{out}: {', '.join(existing)} already exist (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)


def write_history(out: Path, result: tr.RunResult, timing: bool = False) -> None:
    terms: list[str] = []
    evals: list[str] = []
    for rec in result.history:
        terms += [k for k in rec.train if k not in terms]
        evals += [k for k in rec.eval if k not in evals]
    rows = [{"epoch": r.epoch, **r.train, **r.eval} for r in result.history]
    _write_csv(out / "history.csv", ["epoch", *terms, *evals], rows)
    if timing:
        # wall-clock is opt-in and kept apart so default outputs stay bit-reproducible
        _write_csv(out / "timing.csv", ["epoch", "seconds"],
                   [{"epoch": r.epoch, "seconds": r.seconds} for r in result.history])


def summary_of(cfg: ExperimentConfig, result: tr.RunResult) -> dict[str, Any]:
    summary: dict[str, Any] = {
        "task": cfg.task, "variant": result.spec_name, "seed": result.seed, "status": result.status,
        "epochs_completed": len(result.history), "diverged_epoch": result.diverged_epoch,
        "diverged_term": result.diverged_term, "rescale_C": result.rescale_C,
    }
    final = result.final()
    if cfg.task != "pes" and "MSE" not in final:
        final["MSE"] = math.nan  # no reference solution for this task
    summary.update(final)
    return summary


def write_run(out: Path, cfg: ExperimentConfig, result: tr.RunResult, timing: bool = False) -> dict[str, Any]:
    out.mkdir(parents=True, exist_ok=True)
    write_history(out, result, timing)
    nn.save_checkpoint(out / "checkpoint.json", result.heads)
    summary = summary_of(cfg, result)
    _write_json(out / "summary.json", summary)
    return summary


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9.=_-]+", "_", name).strip("_") or "run"


# -- commands ------------------------------------------------------------------------------

def cmd_gen(cfg: ExperimentConfig, out: Path, force: bool) -> int:
    products = ["train.jsonl", "test.jsonl", "info.json"] if cfg.task == "pes" else ["points.json", "info.json"]
    ds = generate(cfg)
    _prepare_out(out, force, products)
    info = write_dataset(out, cfg.task, ds)
    print(f"wrote {cfg.task} dataset to {out}")
    print(f"rescale constant C = {info['rescale']['C']:g} (max |label| = {info['rescale']['max_abs_label']:.6g})")
    for key in ("energy", "force", "targets"):
        if key in info:
            s = info[key]
            print(f"{key}: mean {s['mean']:.6g}  var {s['var']:.6g}  range [{s['min']:.6g}, {s['max']:.6g}]")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, out: Path, force: bool, timing: bool = False) -> int:
    ds = obtain_dataset(cfg)
    _prepare_out(out, force, ["history.csv", "summary.json", "checkpoint.json"])
    result = tr.run(base_spec(cfg, ds, run_label(cfg)))
    summary = write_run(out, cfg, result, timing)
    _write_json(out / "config.json", cfg.to_dict())
    if result.status != "ok":
        print(f"diverged at epoch {result.diverged_epoch} (term {result.diverged_term})", file=sys.stderr)
        return EXIT_DIVERGED
    shown = {k: v for k, v in summary.items() if isinstance(v, float) and k != "rescale_C"}
    print(" ".join(f"{k}={v:.4g}" for k, v in shown.items()))
    return EXIT_OK


SWEEP_COLUMNS = ["beta", "alpha", "status", "energy_mae", "force_mae", "energy_mse", "force_mse",
                 "energy_rel", "force_rel", "gap", "pred", "force"]


def cmd_sweep(cfg: ExperimentConfig, out: Path, force: bool, jobs: int, timing: bool = False) -> int:
    if cfg.task != "pes":
        raise ConfigError("sweep is defined for the pes task")
    if not cfg.sweep.betas:
        raise ConfigError("sweep.betas is empty")
    ds = obtain_dataset(cfg)
    _prepare_out(out, force, ["sweep.csv", "sweep.md"])
    base = base_spec(cfg, ds)
    betas = [float(b) for b in cfg.sweep.betas]
    specs = [tr.replace(base, loss=tr.replace(base.loss, alpha=1.0, beta=b), name=f"beta={b:g}") for b in betas]
    results = tr.run_many(specs, jobs)
    for res in results:
        write_run(out / _slug(res.spec_name), cfg, res, timing)
    rows = tr.sweep_rows(base, betas, results)
    _write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    (out / "sweep.md").write_text(_markdown(SWEEP_COLUMNS, rows))
    print(_markdown(SWEEP_COLUMNS, rows), end="")
    return EXIT_DIVERGED if any(r.status != "ok" for r in results) else EXIT_OK


def default_variants(task: str) -> list[tr.Variant]:
    return list(tr.pes_variants() if task == "pes" else tr.PINN_VARIANTS)


def cmd_ablate(cfg: ExperimentConfig, out: Path, force: bool, jobs: int, timing: bool = False) -> int:
    if cfg.ablate.variants is not None and not cfg.ablate.variants:
        raise ConfigError("ablate.variants is empty")
    if not cfg.ablate.seeds:
        raise ConfigError("ablate.seeds is empty")
    variants = default_variants(cfg.task) if cfg.ablate.variants is None else \
        [tr.Variant(v.name, v.activation, v.batchnorm, v.rescale) for v in cfg.ablate.variants]
    ds = obtain_dataset(cfg)
    _prepare_out(out, force, ["ablation.csv", "ablation.md"])
    table, results = tr.ablate(base_spec(cfg, ds), variants, cfg.ablate.seeds, jobs)
    for res in results:
        write_run(out / _slug(res.spec_name) / f"seed{res.seed}", cfg, res, timing)
    header = _table_header(table)
    _write_csv(out / "ablation.csv", header, table)
    md = _markdown(header, _nan_cells(table))
    (out / "ablation.md").write_text(md)
    print(md, end="")
    return EXIT_OK


def _table_header(table: Sequence[Mapping[str, Any]]) -> list[str]:
    header: list[str] = []
    for row in table:
        header += [k for k in row if k not in header]
    return header


def _nan_cells(table: Sequence[Mapping[str, Any]]) -> list[dict[str, Any]]:
    return [{k: ("NaN" if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()} for row in table]


META_KEYS = {"task", "variant", "seed", "status", "epochs_completed", "diverged_epoch", "diverged_term", "rescale_C"}


def build_report(summaries: Sequence[Mapping[str, Any]]) -> tuple[list[str], list[dict[str, Any]], dict[str, int]]:
    """Median per (task, variant) across seeds, diverged runs counted but excluded."""
    groups: dict[tuple[str, str], list[Mapping[str, Any]]] = {}
    for s in summaries:
        groups.setdefault((s.get("task", ""), s.get("variant", "")), []).append(s)
    metrics: list[str] = []
    for s in summaries:
        metrics += [k for k in s if k not in META_KEYS and k not in metrics]
    rows = []
    for (task, variant), runs in groups.items():
        ok = [r for r in runs if r.get("status") == "ok"]
        row: dict[str, Any] = {"task": task, "variant": variant, "n_runs": len(runs), "n_diverged": len(runs) - len(ok)}
        for m in metrics:
            vals = [float(r[m]) for r in ok if isinstance(r.get(m), (int, float))]
            row[f"{m}_median"] = float(np.median(vals)) if vals else math.nan
        rows.append(row)
    header = ["task", "variant", "n_runs", "n_diverged", *(f"{m}_median" for m in metrics)]
    best: dict[str, int] = {}
    for m in metrics:
        col = f"{m}_median"
        vals = [(r[col], i) for i, r in enumerate(rows) if not math.isnan(r[col])]
        if len(rows) > 1 and vals:
            best[col] = min(vals)[1]
    return header, rows, best


def cmd_report(run_dirs: Sequence[str], out: Path, force: bool) -> int:
    summaries = []
    for d in run_dirs:
        p = Path(d)
        paths = [p] if p.is_file() else sorted(p.rglob("summary.json"))
        for sp in paths:
            try:
                s = json.loads(sp.read_text())
            except (OSError, json.JSONDecodeError):
                continue
            if isinstance(s, dict) and "status" in s:
                summaries.append(s)
    if not summaries:
        raise ConfigError("no valid summary.json found in the given run directories")
    header, rows, best = build_report(summaries)
    _prepare_out(out, force, ["report.csv", "report.md"])
    best_row = {"task": "", "variant": "best", **{col: rows[i]["variant"] for col, i in best.items()}}
    _write_csv(out / "report.csv", header, [*rows, best_row] if best else rows)
    md = _markdown(header, _nan_cells(rows), best)
    (out / "report.md").write_text(md)
    print(md, end="")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dctrain", description="Derivative-constrained training experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("gen", "generate a dataset"), ("train", "train one model"),
                           ("sweep", "beta sweep with alpha = 1"), ("ablate", "activation/normalization ablation")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("--seed", type=int, help="override data/model/train seeds")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        if name in ("sweep", "ablate"):
            p.add_argument("--jobs", type=int, default=1, help="parallel training jobs")
        if name != "gen":
            p.add_argument("--timing", action="store_true", help="also write per-epoch wall-clock to timing.csv")
    p = sub.add_parser("report", help="aggregate run summaries")
    p.add_argument("runs", nargs="+", help="run directories (searched for summary.json)")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    return parser


def _limit_threads() -> Any:
    n = os.environ.get("DCTRAIN_THREADS")
    if not n:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(int(n))


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    limiter = _limit_threads()
    try:
        if args.command == "report":
            return cmd_report(args.runs, Path(args.out), args.force)
        cfg = load_config(args.config).with_seed(args.seed)
        out_dir = args.out or cfg.out
        if out_dir is None:
            raise ConfigError("no output directory: pass --out or set 'out' in the config")
        out = Path(out_dir)
        if args.command == "gen":
            return cmd_gen(cfg, out, args.force)
        if args.command == "train":
            return cmd_train(cfg, out, args.force, args.timing)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.force, args.jobs, args.timing)
        return cmd_ablate(cfg, out, args.force, args.jobs, args.timing)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    raise SystemExit(main())
