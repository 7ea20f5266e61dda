"""Acceptance criteria 1-10.

Each test prints one ``[ACCEPT n] PASS|FAIL`` line before asserting.  The
convergence criterion runs to t = 15 (just past the first wall bounce at
t ~ 13.84) unless ``MMVI_FULL_ACCEPTANCE=1`` selects the t = 50 horizon.
"""
import os

import numpy as np
import pytest

from conftest import nondegenerate_state, random_state
from mmvi import constraints as cons
from mmvi.constraints import ConstraintSet
from mmvi.harness import ExperimentConfig, convergence_study, energy_study, fitted_slope, initial_state
from mmvi.init import CT, LM, initial_phase, position_residuals, velocity_system
from mmvi.integrator_ct import ct_integrate, ct_step, prk_frozen_mesh_step
from mmvi.integrator_lm import lm_integrate
from mmvi.semidiscrete import (
    DofState,
    assemble_mass_matrix,
    discrete_energy,
    force_f,
    grad_RN,
    mass_determinant_formula,
    potential_RN,
    semidiscrete_lagrangian,
)
from mmvi.tableaus import TABLEAU_NAMES, get_tableau, order_condition_defects, symplecticity_defect

FULL = os.environ.get("MMVI_FULL_ACCEPTANCE") == "1"
T_CONVERGENCE = 50.0 if FULL else 15.0
WORKERS = os.cpu_count() or 1

E_TWO_SOLITON = 36.71
ENERGY_RUNS = [("LM", "Lobatto2"), ("LM", "Lobatto3"), ("CT", "Gauss2"), ("CT", "Lobatto3"), ("CT", "Radau3")]
UNIFORM_NS = [15, 31, 63, 127, 255]
ADAPTIVE_NS = [15, 31, 63]


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[ACCEPT {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def two_soliton_cfg(**kw):
    base = dict(problem="TwoSoliton", N=25, alpha=1.5, dt=0.05, t_max=100.0, v=0.9)
    base.update(kw)
    return ExperimentConfig(**base)


def diagnostics(out_dir):
    return np.genfromtxt(os.path.join(out_dir, "diagnostics.csv"), delimiter=",", names=True)


@pytest.fixture(scope="module")
def energy_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("energy")
    out = {}
    for strategy, scheme in ENERGY_RUNS:
        d = str(root / f"{strategy}_{scheme}")
        _, summary = energy_study(two_soliton_cfg(strategy=strategy, scheme=scheme, output_dir=d))
        out[(strategy, scheme)] = (summary, diagnostics(d))
    return out


@pytest.fixture(scope="module")
def convergence_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("converge")
    out = {}
    for strategy, scheme, Ns in (("UniformMesh", "Gauss2", UNIFORM_NS), ("CT", "Gauss2", ADAPTIVE_NS),
                                 ("LM", "Lobatto3", ADAPTIVE_NS)):
        d = root / strategy
        base = ExperimentConfig(problem="SingleSolitonBounce", strategy=strategy, scheme=scheme, dt=0.01,
                                t_max=T_CONVERGENCE, alpha=2.5, output_dir=str(d))
        rows = convergence_study(base, Ns, workers=WORKERS)
        out[strategy] = (rows, {r["N"]: diagnostics(d / f"N{r['N']}") for r in rows})
    return out


def test_criterion_01_energy_magnitude(capsys):
    state, c = initial_state(two_soliton_cfg(strategy="LM", scheme="Lobatto3", t_max=0.05))
    E0 = discrete_energy(state.q, state.u)
    rel = abs(E0 - E_TWO_SOLITON) / E_TWO_SOLITON
    report(capsys, 1, rel <= 0.02, f"E_N(0) = {E0:.4f}, relative deviation from 36.71 = {rel:.4f} (limit 0.02)")


def test_criterion_02_energy_behaviour(capsys, energy_runs):
    s = {k: v[0] for k, v in energy_runs.items()}
    lm2, lm3 = s[("LM", "Lobatto2")], s[("LM", "Lobatto3")]
    radau = s[("CT", "Radau3")]
    checks = {
        "all runs completed": all(v.termination == "completed" for v in s.values()),
        "LM bounded with drift < 1e-4": all(
            np.isfinite(v.max_deviation) and abs(v.drift_slope) < 1e-4 for v in (lm2, lm3)
        ),
        "LM s=3 amplitude < s=2 amplitude": lm3.amplitude < lm2.amplitude,
    }
    for scheme in ("Gauss2", "Lobatto3"):
        ct = s[("CT", scheme)]
        checks[f"CT {scheme} deviation > LM Lobatto3"] = ct.max_deviation > lm3.max_deviation
        ratio = ct.max_deviation / radau.max_deviation
        checks[f"CT {scheme} / Radau3 within 3x"] = 1 / 3 <= ratio <= 3
    detail = "; ".join(
        f"{k[0]}-{k[1]} max|dE|={v.max_deviation:.3e} slope={v.drift_slope:.2e} amp={v.amplitude:.3e}"
        for k, v in s.items()
    )
    failed = [k for k, ok in checks.items() if not ok]
    report(capsys, 2, not failed, detail + (f" | failed: {failed}" if failed else ""))


def test_criterion_03_convergence(capsys, convergence_runs):
    uni, _ = convergence_runs["UniformMesh"]
    ct, _ = convergence_runs["CT"]
    lm, _ = convergence_runs["LM"]
    uni_slope, ct_slope = fitted_slope(uni), fitted_slope(ct)
    uni_err = {r["N"]: r["linf_error"] for r in uni}
    lm_err = {r["N"]: r["linf_error"] for r in lm}
    checks = {
        "all runs completed": all(r["termination"] == "completed" for r in uni + ct + lm),
        "uniform slope in [1.7, 2.3]": 1.7 <= uni_slope <= 2.3,
        "CT slope in [1.6, 2.3]": 1.6 <= ct_slope <= 2.3,
        "LM error < uniform error": all(lm_err[n] < uni_err[n] for n in ADAPTIVE_NS),
    }
    table = " ".join(f"{name}:" + ",".join(f"{r['N']}={r['linf_error']:.3e}" for r in rows)
                     for name, rows in (("U", uni), ("CT", ct), ("LM", lm)))
    failed = [k for k, ok in checks.items() if not ok]
    detail = (f"t_max={T_CONVERGENCE:g} uniform slope={uni_slope:.3f} CT slope={ct_slope:.3f} {table}"
              + (f" | failed: {failed}" if failed else ""))
    report(capsys, 3, not failed, detail)


def test_criterion_04_dae_ode_equivalence(capsys):
    cfg = ExperimentConfig(problem="SingleSolitonBounce", strategy="CT", scheme="Gauss2", dt=0.01, alpha=2.5)
    state, c = initial_state(cfg)
    tab = get_tableau("Gauss2")
    worst = 0.0
    for _ in range(20):
        nxt = ct_step(state, cfg.dt, tab, c)
        y1, p1, _ = prk_frozen_mesh_step(state, cfg.dt, tab, nxt.stages.Q, nxt.stages.Qdot)
        worst = max(worst, np.abs(y1 - nxt.q.y[1:-1]).max(), np.abs(p1 - nxt.p).max())
        state = nxt
    report(capsys, 4, worst <= 1e-12, f"max |(y, p) DAE - frozen-mesh PRK| over 20 steps = {worst:.2e}")


def test_criterion_05_mass_determinant(capsys):
    rng = np.random.default_rng(5)
    worst = 0.0
    for N in (1, 2, 4, 8):
        for _ in range(100):
            q = nondegenerate_state(rng, N, Xmax=N + 1.0)
            ref = mass_determinant_formula(q)
            worst = max(worst, abs(assemble_mass_matrix(q).det() - ref) / abs(ref))
    collinear = [
        DofState([0.0, 1.0, 2.0], [0.0, 1.0, 2.0]),
        DofState([0.0, 1.0, 2.0, 1.0, 0.5], np.linspace(0, 4, 5)),
        DofState([0.0, 0.5, 1.0, 1.5, 0.0, 0.0], [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]),
    ]
    zeros = [mass_determinant_formula(q) for q in collinear]
    ok = worst <= 1e-10 and all(z == 0.0 for z in zeros)
    report(capsys, 5, ok, f"max relative error over 400 states = {worst:.2e}; collinear determinants = {zeros}")


def test_criterion_06_constraint_and_slack(capsys, energy_runs, convergence_runs):
    g_max = r_max = mu_max = 0.0
    nruns = 0
    for (strategy, _), (_, diag) in energy_runs.items():
        nruns += 1
        g_max = max(g_max, np.nanmax(diag["g_norm"]))
        if strategy == "LM":
            r_max = max(r_max, np.nanmax(diag["r_norm"]))
            mu_max = max(mu_max, np.nanmax(diag["mu_norm"]))
    for strategy, (_, diags) in convergence_runs.items():
        for diag in diags.values():
            nruns += 1
            g_max = max(g_max, np.nanmax(diag["g_norm"]))
            if strategy == "LM":
                r_max = max(r_max, np.nanmax(diag["r_norm"]))
                mu_max = max(mu_max, np.nanmax(diag["mu_norm"]))
    ok = g_max <= 1e-8 and r_max <= 1e-8 and mu_max <= 1e-6
    report(capsys, 6, ok, f"{nruns} runs: max|g|={g_max:.2e} max|r|={r_max:.2e} max|mu|={mu_max:.2e}")


def _fd(fun, x, h=1e-6):
    cols = [(fun(x + h * e) - fun(x - h * e)) / (2 * h) for e in np.eye(x.size)]
    return np.array(cols).T


def test_criterion_07_derivatives(capsys):
    rng = np.random.default_rng(7)
    worst = dict(grad_RN=0.0, Dg=0.0, h=0.0, force_f=0.0)
    c = ConstraintSet.arclength(5, 2.5)
    for _ in range(50):
        q = random_state(rng, 5, y_scale=2.0)
        u = rng.standard_normal(10)
        z = q.interior()
        fd = _fd(lambda zz: np.atleast_1d(potential_RN(q.with_interior(zz))), z)[0]
        worst["grad_RN"] = max(worst["grad_RN"], np.abs(grad_RN(q) - fd).max())
        fd = _fd(lambda zz: cons.g(q.with_interior(zz), c), z)
        worst["Dg"] = max(worst["Dg"], np.abs(cons.jacobian_Dg(q, c).toarray() - fd).max())
        t = 1e-3
        second = (cons.g(q.with_interior(z + t * u), c) - 2 * cons.g(q, c) + cons.g(q.with_interior(z - t * u), c)) / t**2
        worst["h"] = max(worst["h"], np.abs(cons.hessian_contraction_h(q, u, c) + second).max())
        # f = L_q - d/dt (M(q) u) along the flow direction u
        Lq = _fd(lambda zz: np.atleast_1d(semidiscrete_lagrangian(q.with_interior(zz), u)), z)[0]
        Mu = lambda zz: assemble_mass_matrix(q.with_interior(zz)) @ u  # noqa: E731
        dMu = (Mu(z + 1e-6 * u) - Mu(z - 1e-6 * u)) / 2e-6
        worst["force_f"] = max(worst["force_f"], np.abs(force_f(q, u) - (Lq - dMu)).max())
    ok = all(v <= 1e-5 for v in worst.values())
    report(capsys, 7, ok, " ".join(f"{k}={v:.2e}" for k, v in worst.items()) + " (limit 1e-5)")


def test_criterion_08_tableaus(capsys):
    orders = {"Gauss1": 2, "Gauss2": 4, "Lobatto2": 2, "Lobatto3": 4, "Radau3": 5}
    order_defect = max(max(order_condition_defects(get_tableau(n), orders[n]).values()) for n in TABLEAU_NAMES)
    sym = {n: symplecticity_defect(get_tableau(n)) for n in TABLEAU_NAMES}
    ok = order_defect <= 1e-14 and all(sym[n] <= 1e-14 for n in sym if n != "Radau3") and sym["Radau3"] > 1e-3
    report(capsys, 8, ok, f"max order defect={order_defect:.1e}; symplecticity defects={ {k: float(f'{v:.1e}') for k, v in sym.items()} }")


def _self_convergence_order(run):
    finals = []
    for dt in (0.02, 0.01, 0.005):
        traj = run(dt, int(round(1.0 / dt)))
        finals.append(np.concatenate([traj.y[-1], traj.X[-1]]))
    return float(np.log2(np.abs(finals[0] - finals[1]).max() / np.abs(finals[1] - finals[2]).max()))


def test_criterion_09_self_convergence(capsys, kink_setup):
    _, c, _, q, vel = kink_setup
    ct0, lm0 = initial_phase(q, vel, CT, c), initial_phase(q, vel, LM, c)
    orders = {}
    for name in ("Gauss1", "Gauss2"):
        orders[name] = _self_convergence_order(lambda dt, n: ct_integrate(ct0, dt, n, get_tableau(name), c))
    for name in ("Trapezoidal", "Lobatto2", "Lobatto3"):
        orders[name] = _self_convergence_order(lambda dt, n: lm_integrate(lm0, dt, n, name, c))
    need = {"Gauss1": 1.9, "Lobatto2": 1.9, "Trapezoidal": 1.9, "Gauss2": 3.7, "Lobatto3": 3.7}
    ok = all(orders[k] >= need[k] for k in need)
    report(capsys, 9, ok, " ".join(f"{k}={v:.3f}(>={need[k]})" for k, v in orders.items()))


def test_criterion_10_initial_conditions(capsys, kink_setup):
    _, c, prof, q, vel = kink_setup
    ry, rg = position_residuals(q, prof, c)
    A, rhs = velocity_system(q, prof, c)
    rv = np.abs(A @ vel.interior() - rhs).max()
    ok = np.abs(ry).max() <= 1e-10 and np.abs(rg).max() <= 1e-10 and rv <= 1e-11
    report(capsys, 10, ok, f"|y - a(X)|={np.abs(ry).max():.2e} |g|={np.abs(rg).max():.2e} velocity={rv:.2e}")
