import math

import numpy as np
import pytest

from dctrain import dcloss, nn, pde
from dctrain import trainer as tr
from dctrain.autodiff import evaluate, grad

QUAD = {"A": [[1.0, 0.0], [0.0, 3.0]]}
BOX = [[-1, 1], [-1, 1]]


def quad_data(n=200, seed=0):
    return pde.gen_pes("quadratic", n, BOX, QUAD, seed=seed)


def pes_spec(data=None, hidden=(16, 16), act="IRelu", bn=False, epochs=5, batch=50, seed=0, beta=1.0,
             rescale=True, eval_every=1, eval_data=None):
    data = quad_data() if data is None else data
    return tr.RunSpec("pes", data, nn.MLPConfig(2, list(hidden), 1, act, bn, seed),
                      tr.TrainConfig(epochs, batch, seed, eval_every=eval_every),
                      tr.LossSpec(1.0, beta, rescale), eval_data=eval_data)


def same_params(a, b):
    return all(a[h].params[k].tobytes() == b[h].params[k].tobytes() for h in a for k in a[h].params)


# -- adam ---------------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = {"w": np.array([1.0, -2.0])}
    new, state = tr.adam_step(p, {"w": np.zeros(2)}, tr.adam_init(p), tr.AdamConfig())
    np.testing.assert_array_equal(new["w"], p["w"])
    assert state.t == 1


def test_adam_first_step_is_lr():
    cfg = tr.AdamConfig(lr=0.01)
    p = {"w": np.array(0.0)}
    new, _ = tr.adam_step(p, {"w": np.array(1.0)}, tr.adam_init(p), cfg)
    assert new["w"] == pytest.approx(-cfg.lr / (1.0 + cfg.eps), rel=1e-15)


def test_adam_quadratic_bowl():
    cfg = tr.AdamConfig(lr=0.1)
    p = {"w": np.array(1.0)}
    state = tr.adam_init(p)
    # hand-rolled scalar Adam as the oracle
    th, m, v = 1.0, 0.0, 0.0
    for t in range(1, 101):
        p, state = tr.adam_step(p, {"w": 2.0 * p["w"]}, state, cfg)
        g = 2.0 * th
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        th -= 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert abs(float(p["w"])) < 0.1
    assert float(p["w"]) == pytest.approx(th, rel=1e-12, abs=1e-15)


def test_adam_does_not_mutate_inputs():
    p = {"w": np.ones(3)}
    g = {"w": np.full(3, 0.5)}
    state = tr.adam_init(p)
    tr.adam_step(p, g, state, tr.AdamConfig())
    np.testing.assert_array_equal(p["w"], np.ones(3))
    np.testing.assert_array_equal(state.m["w"], np.zeros(3))
    assert state.t == 0


def test_adam_errors():
    p = {"w": np.ones(3)}
    with pytest.raises(ValueError, match="shape"):
        tr.adam_step(p, {"w": np.ones(2)}, tr.adam_init(p), tr.AdamConfig())
    with pytest.raises(ValueError):
        tr.AdamConfig(lr=0.0)
    with pytest.raises(ValueError):
        tr.AdamConfig(beta1=1.0)
    with pytest.raises(ValueError):
        tr.TrainConfig(epochs=-1)


# -- train ---------------------------------------------------------------------------------

def test_zero_epochs_is_identity():
    spec = pes_spec(epochs=0)
    task, _ = tr.make_task(spec)
    heads = tr.make_heads(spec)
    out, history = tr.train(heads, spec.data, task, spec.train)
    assert history == []
    assert same_params(out, heads)


def test_training_is_deterministic():
    a, b = tr.run(pes_spec(epochs=4)), tr.run(pes_spec(epochs=4))
    assert [r.deterministic() for r in a.history] == [r.deterministic() for r in b.history]
    assert same_params(a.heads, b.heads)


def test_train_does_not_mutate_heads():
    spec = pes_spec(epochs=2)
    task, _ = tr.make_task(spec)
    heads = tr.make_heads(spec)
    before = {k: v.copy() for k, v in heads["energy"].params.items()}
    tr.train(heads, spec.data, task, spec.train)
    for k, v in before.items():
        np.testing.assert_array_equal(heads["energy"].params[k], v)


@pytest.mark.parametrize("bn", [False, True])
def test_one_step_equals_adam_on_graph_gradient(bn):
    data = quad_data(n=40)
    spec = pes_spec(data, hidden=(8,), bn=bn, epochs=1, batch=40, seed=3)
    task, C = tr.make_task(spec)
    heads = tr.make_heads(spec)
    trained, _ = tr.train(heads, data, task, spec.train)

    perm = np.random.default_rng([spec.train.seed, 1]).permutation(len(data))
    batch = data.subset(perm)
    lt = dcloss.energy_force_loss(heads["energy"], len(batch), dcloss.DCWeights(1.0, 1.0, C), train=True)
    names = lt.param_names()
    gg = grad(lt.graph, "total", names)
    vals = evaluate(gg, {**lt.bind(batch), **lt.param_bindings(heads)}, [f"dtotal/d{n}" for n in names])
    params = lt.param_bindings(heads)
    params = {n: params[n] for n in names}
    expect, _ = tr.adam_step(params, {n: vals[f"dtotal/d{n}"] for n in names}, tr.adam_init(params),
                             spec.train.adam)
    for n in names:
        h, local = n.split(".", 1)
        assert trained[h].params[local].tobytes() == expect[n].tobytes(), n


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_total_loss_decreases(seed):
    res = tr.run(pes_spec(epochs=50, seed=seed, eval_every=50))
    first, last = res.history[0].train, res.history[-1].train
    assert last["pred"] + last["force"] < first["pred"] + first["force"]


def test_eval_cadence_does_not_change_training():
    a = tr.run(pes_spec(epochs=6, eval_every=1))
    b = tr.run(pes_spec(epochs=6, eval_every=4))
    assert same_params(a.heads, b.heads)
    assert [r.train for r in a.history] == [r.train for r in b.history]
    assert [bool(r.eval) for r in b.history] == [False, False, False, True, False, True]


def test_overflow_aborts_with_epoch_and_term():
    base = quad_data(n=50)
    scaled = pde.PESDataset(base.X * 1e6, base.E * 1e12, base.F * 1e6)
    spec = pes_spec(scaled, hidden=(8,) * 6, epochs=3, rescale=False)
    task, _ = tr.make_task(spec)
    with pytest.raises(tr.DivergenceError) as info:
        tr.train(tr.make_heads(spec), scaled, task, spec.train)
    assert info.value.epoch == 1
    assert info.value.term in ("pred", "force", "total", "gradient")
    assert info.value.history == []


def test_run_records_divergence():
    base = quad_data(n=50)
    scaled = pde.PESDataset(base.X * 1e6, base.E * 1e12, base.F * 1e6)
    res = tr.run(pes_spec(scaled, hidden=(8,) * 6, epochs=3, rescale=False))
    assert res.status == "diverged"
    assert res.diverged_epoch == 1
    assert set(res.final()) == {"pred", "force"}
    assert all(math.isnan(v) for v in res.final().values())


def test_beta_zero_ignores_forces():
    data = quad_data(n=100)
    scrambled = pde.PESDataset(data.X, data.E, np.random.default_rng(5).normal(size=data.F.shape) * 10)
    a = tr.run(pes_spec(data, epochs=3, beta=0.0, rescale=False))
    b = tr.run(pes_spec(scrambled, epochs=3, beta=0.0, rescale=False))
    assert same_params(a.heads, b.heads)
    assert [r.train["pred"] for r in a.history] == [r.train["pred"] for r in b.history]


def test_beta_zero_energy_against_force_supervision():
    # Comparative oracle (5 seeds, 16x16 IReLU, 40 epochs): force supervision
    # helps the energy fit on this surface, so beta=0 ends with the largest
    # median energy loss. Medians frozen from the oracle run.
    data = quad_data()
    med = {}
    for beta in (0.0, 0.01, 1.0, 200.0):
        finals = [tr.run(pes_spec(data, epochs=40, seed=s, beta=beta, eval_every=40)).final()["pred"]
                  for s in range(5)]
        med[beta] = float(np.median(finals))
    assert med[0.0] == pytest.approx(5.342933026978103e-4, rel=1e-6)
    assert med[1.0] == pytest.approx(2.6075640548005823e-4, rel=1e-6)
    assert all(med[0.0] > med[b] for b in (0.01, 1.0, 200.0))


# -- PINN runs --------------------------------------------------------------------------------

def small_pinn(task):
    if task == "advection":
        ps, _ = pde.gen_advection(pde.AdvectionConstants(), 64, 16, 16, seed=0, n_test=(8, 4))
    elif task == "cfd":
        ps = pde.gen_cfd(pde.CFDConstants(), 64, 16, 16, seed=0)
    else:
        ps, _ = pde.gen_diffreact(pde.DiffReactConstants(), grid=(8, 8), dt=0.01, T=0.1, n_f=64, n_ic=16,
                                  n_bc=16, seed=0, n_test=32)
    return tr.RunSpec(task, ps, nn.MLPConfig(2, [8, 8], 1, "Tanh", False, 0), tr.TrainConfig(3, 1, 0))


@pytest.mark.parametrize("task", ["advection", "cfd", "diffreact"])
def test_pinn_runs_record_every_term(task):
    res = tr.run(small_pinn(task))
    assert res.status == "ok"
    assert len(res.history) == 3
    assert set(res.history[0].train) == set(tr.PINNTask(task).terms)
    if task != "cfd":
        assert "MSE" in res.final()


def test_pinn_full_batch_ignores_batch_size():
    spec = small_pinn("advection")
    other = tr.replace(spec, train=tr.replace(spec.train, batch_size=7))
    assert same_params(tr.run(spec).heads, tr.run(other).heads)


# -- protocols ---------------------------------------------------------------------------------

def test_beta_sweep_single_row():
    rows = tr.beta_sweep(pes_spec(epochs=2), [10.0])
    assert len(rows) == 1
    assert rows[0]["beta"] == 10.0
    assert {"energy_mse", "force_mse", "pred", "force", "gap"} <= set(rows[0])


def test_beta_sweep_fixes_alpha():
    spec = pes_spec(epochs=1)
    spec = tr.replace(spec, loss=tr.replace(spec.loss, alpha=3.0))
    rows = tr.beta_sweep(spec, [0.1, 1.0, 100.0])
    assert [r["alpha"] for r in rows] == [1.0, 1.0, 1.0]
    assert [r["beta"] for r in rows] == [0.1, 1.0, 100.0]


def test_beta_sweep_default_grid():
    assert tr.DEFAULT_BETAS == (0.01, 0.1, 1.0, 10.0, 30.0, 50.0, 100.0, 200.0)


def test_beta_sweep_rejects_pinn():
    with pytest.raises(ValueError):
        tr.beta_sweep(small_pinn("advection"), [1.0])


def test_ablate_one_variant_one_seed_matches_run():
    base = pes_spec(epochs=3)
    v = tr.Variant("IReLU", "IRelu", False, True)
    table, results = tr.ablate(base, [v], [0])
    single = tr.run(tr.variant_spec(base, v, 0))
    assert len(table) == 1
    assert table[0]["n_runs"] == 1 and table[0]["n_diverged"] == 0
    for k, val in single.final().items():
        assert table[0][k] == val
    assert same_params(results[0].heads, single.heads)


def test_ablate_marks_diverged_variant_nan():
    base = quad_data(n=50)
    scaled = pde.PESDataset(base.X * 1e6, base.E * 1e12, base.F * 1e6)
    spec = pes_spec(scaled, hidden=(8,) * 6, epochs=2, rescale=False)
    table, results = tr.ablate(spec, [tr.Variant("IReLU raw", "IRelu", False, False),
                                      tr.Variant("IReLU rescaled", "IRelu", False, True)], [0, 1])
    assert table[0]["n_diverged"] == 2
    assert results[0].status == "diverged"
    nan_keys = [k for k in table[0] if k not in ("variant", "n_runs", "n_diverged")]
    assert nan_keys and all(math.isnan(table[0][k]) for k in nan_keys)


def test_ablate_pinn_rows():
    table, _ = tr.ablate(small_pinn("advection"), tr.PINN_VARIANTS, [0])
    assert [r["variant"] for r in table] == ["Tanh + BN", "IReLU + BN", "Tanh", "IReLU"]


def test_ablate_needs_variants_and_seeds():
    with pytest.raises(ValueError):
        tr.ablate(pes_spec(), [], [0])
    with pytest.raises(ValueError):
        tr.ablate(pes_spec(), tr.PINN_VARIANTS, [])


def test_parallel_jobs_match_serial():
    specs = [pes_spec(epochs=2, seed=s) for s in range(3)]
    serial = tr.run_many(specs, jobs=1)
    parallel = tr.run_many(specs, jobs=2)
    for a, b in zip(serial, parallel):
        assert same_params(a.heads, b.heads)
        assert [r.deterministic() for r in a.history] == [r.deterministic() for r in b.history]
