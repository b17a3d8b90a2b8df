"""Experiment drivers behind the command line.

Each ``run_*`` takes a resolved :class:`ExperimentConfig` and an output
directory, writes CSV tables, PNG figures, ``manifest.txt`` and ``checks.csv``,
and returns a :class:`Report`.  Binding checks decide the exit status;
non-binding ones are statistical or asymptotic statements that are reported but
may legitimately fail at desk-scale parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy import stats

from . import __version__
from . import plotting
from .config import ConfigError, ExperimentConfig, resolve_time
from .dynamics import FieldParams
from .kinetic import (
    AngularField,
    SolverError,
    boltzmann_eps_kernel,
    dsmc_sample,
    exact_homogeneous,
    hard_disk_gbe_kernel,
    landau_kernel,
    markov_hard_disk_kernel,
    solve,
    uncut_kernel,
)
from .medium import ScalingRegime
from .microsim import (
    FLAG_NAMES,
    CosineDensity,
    circ_limit_probability,
    estimate_f_eps,
    pathology_scan,
    phase_grid,
    seed_for,
)
from .potentials import SmoothCompact
from .scattering import (
    angle_by_ode,
    build_table,
    cross_section,
    hard_disk_angle,
    micro_field,
    orbit,
    wrap_angle,
    xi_explicit,
    xi_grazing_limit,
)
from .tables import write_csv


@dataclass
class Check:
    name: str
    ok: bool
    detail: str
    binding: bool = True


@dataclass
class Report:
    experiment: str
    out: Path
    files: List[str] = field(default_factory=list)
    checks: List[Check] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def check(self, name: str, ok: bool, detail: str = "", binding: bool = True) -> bool:
        self.checks.append(Check(name, bool(ok), detail, binding))
        return bool(ok)

    def csv(self, name: str, columns, rows, header: Optional[dict] = None) -> Path:
        p = self.out / name
        write_csv(p, columns, rows, header)
        self.files.append(name)
        return p

    def figure(self, name: str, fn, *args, **kw) -> Path:
        p = self.out / name
        fn(p, *args, **kw)
        self.files.append(name)
        return p

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks if c.binding)

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1


def _begin(cfg: ExperimentConfig, name: str, out) -> Report:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rep = Report(name, out)
    with open(out / "manifest.txt", "w") as fh:
        fh.write(f"# maglorentz {__version__} experiment={name}\n")
        fh.write(cfg.manifest())
    rep.files.append("manifest.txt")
    return rep


def _finish(rep: Report) -> Report:
    rows = [(c.name, "PASS" if c.ok else "FAIL", "binding" if c.binding else "reported", c.detail) for c in rep.checks]
    rep.csv("checks.csv", ("check", "status", "kind", "detail"), rows)
    return rep


# ---------------------------------------------------------------------------
# config helpers


def field_from(cfg: ExperimentConfig) -> FieldParams:
    return FieldParams(cfg["regime.B"])


def regime_from(cfg: ExperimentConfig, eps: Optional[float] = None) -> ScalingRegime:
    r = cfg.section("regime")
    reg = ScalingRegime(r["kind"], r["mu"], r["eps"] if eps is None else eps, r["alpha"], r["gamma"], r["s"])
    try:
        return reg.validate()
    except ValueError as exc:
        raise ConfigError("regime.kind", str(exc)) from exc


def _time(cfg: ExperimentConfig, key: str, fp: FieldParams) -> float:
    try:
        t = resolve_time(cfg[key], fp.T_L)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from exc
    if not (t >= 0 and math.isfinite(t)):
        raise ConfigError(key, "time must be finite and non-negative (T_L needs B > 0)")
    return t


def _eps_list(cfg: ExperimentConfig, min_decades: float = 2.0) -> list:
    el = [float(e) for e in cfg["regime.eps_list"]]
    if len(el) < 3 or any(b >= a for a, b in zip(el, el[1:])):
        raise ConfigError("regime.eps_list", "need at least 3 strictly decreasing values")
    if el[0] / el[-1] < 10.0**min_decades * (1 - 1e-9):
        raise ConfigError("regime.eps_list", f"values must span at least {min_decades:g} decades")
    return el


def landau_xi(cfg_xi, regime: ScalingRegime) -> float:
    if cfg_xi == "grazing":
        return xi_grazing_limit(regime.profile, regime.mu, regime.alpha)
    if cfg_xi == "explicit":
        return xi_explicit(SmoothCompact(eps=regime.eps, alpha=regime.alpha, profile=regime.profile), regime.mu)
    return float(cfg_xi)


def kernel_from(cfg: ExperimentConfig, regime: ScalingRegime, fp: FieldParams):
    k = cfg["kinetic.kernel"]
    if k == "boltzmann-eps":
        return boltzmann_eps_kernel(regime, fp)
    if k == "truncated":
        return boltzmann_eps_kernel(ScalingRegime("long-range", regime.mu, regime.eps, gamma=regime.gamma, s=regime.s), fp)
    if k == "landau":
        return landau_kernel(landau_xi(cfg["kinetic.xi"], regime))
    if k == "gbe":
        if fp.B <= 0:
            raise ConfigError("regime.B", "the memory equation needs B > 0")
        return hard_disk_gbe_kernel(regime.mu, fp)
    if k == "markov-hard":
        return markov_hard_disk_kernel(regime.mu)
    if k == "uncut":
        return uncut_kernel(regime.mu, regime.s, cfg["kinetic.theta_min"])
    raise ConfigError("kinetic.kernel", f"unknown kernel {k!r}")


# ---------------------------------------------------------------------------
# small numerics shared by the drivers


def modes(values: np.ndarray) -> np.ndarray:
    """``(1/2pi) int f e^{-ik phi}`` from equispaced samples along the last axis."""
    return np.fft.rfft(values, axis=-1) / values.shape[-1]


def eval_spectral(values: np.ndarray, phis) -> np.ndarray:
    """Trigonometric interpolant of equispaced samples, evaluated at ``phis``."""
    n = len(values)
    c = np.fft.rfft(values) / n
    phis = np.asarray(phis, dtype=float)
    k = np.arange(len(c))
    w = np.full(len(c), 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return np.real(np.exp(1j * np.outer(phis, k)) @ (w * c))


def l1_circle(a, b) -> float:
    d = np.abs(np.asarray(a) - np.asarray(b))
    return float(2.0 * math.pi * d.mean(axis=-1)) if d.ndim == 1 else 2.0 * math.pi * d.mean(axis=-1)


def l2_circle(a, b) -> float:
    d = np.asarray(a) - np.asarray(b)
    return float(math.sqrt(2.0 * math.pi * np.mean(d * d)))


def loglog_fit(x, y, level: float = 0.95):
    """Slope, intercept and a two-sided confidence interval of the slope."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if len(lx) < 2:
        return math.nan, math.nan, (math.nan, math.nan)
    if len(lx) == 2:
        s = (ly[1] - ly[0]) / (lx[1] - lx[0])
        return float(s), float(ly[0] - s * lx[0]), (math.nan, math.nan)
    res = stats.linregress(lx, ly)
    q = stats.t.ppf(0.5 + 0.5 * level, len(lx) - 2)
    return float(res.slope), float(res.intercept), (float(res.slope - q * res.stderr), float(res.slope + q * res.stderr))


def _pow2_at_least(n: int) -> int:
    return 1 << max(1, int(n - 1).bit_length())


# ---------------------------------------------------------------------------
# scatter


def run_scatter(cfg: ExperimentConfig, out) -> Report:
    rep = _begin(cfg, "scatter", out)
    reg = regime_from(cfg)
    pot = reg.potential
    fp = field_from(cfg) if cfg["scatter.with_field"] else None
    b = micro_field(pot, fp)
    tab = build_table(pot, b, n=cfg["scatter.table_nodes"])
    tab.to_csv(rep.out / "table.csv")
    rep.files.append("table.csv")

    R = pot.support_radius
    th_grid = np.geomspace(1e-3, math.pi, cfg["scatter.theta_points"])
    cs = cross_section(pot, fp, th_grid, n=max(cfg["scatter.table_nodes"], 2049))
    rep.csv("cross_section.csv", ("theta", "gamma"), zip(th_grid, cs.gamma),
            header={"kind": pot.kind, "eps": pot.eps, "b": b})

    n = cfg["scatter.nodes"]
    rho = np.linspace(-R, R, n + 2)[1:-1]
    if pot.hard:
        th = np.array([orbit(r, pot, b).theta for r in rho])
        err = float(np.max(np.abs(th - hard_disk_angle(rho / R))))
        rep.check("hard-disk angle", err <= 1e-12, f"max |theta - (pi - 2 asin rho)| = {err:.3e}")
        ref = 0.5 * np.sin(0.5 * th_grid)
        gerr = float(np.max(np.abs(cs.gamma - ref)))
        rep.check("hard-disk cross section", gerr <= 1e-8, f"max |Gamma - sin(theta/2)/2| = {gerr:.3e}")
    else:
        nodes = np.linspace(-0.97, 0.97, 32) * R
        worst = 0.0
        rows = []
        for r in nodes:
            tq = orbit(r, pot, b).theta
            to, _ = angle_by_ode(r, pot, b)
            d = abs(float(wrap_angle(tq - to)))
            worst = max(worst, d)
            rows.append((r, tq, to, d))
        rep.csv("double_entry.csv", ("rho", "theta_quadrature", "theta_ode", "abs_diff"), rows)
        rep.check("quadrature vs ODE angles", worst <= 1e-6, f"max difference {worst:.3e} over 32 nodes")
    rep.check("cross section finite", bool(np.all(np.isfinite(cs.gamma))), "")
    rep.figure("scatter.png", plotting.scatter_figure, tab.rho, tab.theta, th_grid, cs.gamma,
               title=f"{pot.kind}, eps={pot.eps:g}, b={b:g}")
    return _finish(rep)


# ---------------------------------------------------------------------------
# micro


def _arc_window(fp: FieldParams, reg: ScalingRegime, nu) -> Optional[float]:
    if fp.B == 0:
        return None
    return fp.T_L * reg.eps ** (reg.alpha if nu is None else nu)


def run_micro(cfg: ExperimentConfig, out, workers: Optional[int] = None) -> Report:
    rep = _begin(cfg, "micro", out)
    fp = field_from(cfg)
    reg = regime_from(cfg)
    m = cfg.section("micro")
    t = _time(cfg, "micro.t_end", fp)
    f0 = CosineDensity((m["amplitude"],))
    positions = [(i * m["spacing"], 0.0) for i in range(m["n_positions"])]
    xs, phis = phase_grid(m["n_angles"], positions)
    est = estimate_f_eps(f0, t, reg, fp, m["n_seeds"], cfg["run.seed"], xs, phis, method=m["method"],
                         workers=workers, arc_window=_arc_window(fp, reg, m["nu"]))
    free = f0.angular(phis - fp.Omega * t)
    rep.csv("micro_points.csv", ("x", "y", "phi", "f_eps", "stderr", "flag_free", "free_flight"),
            zip(xs[:, 0], xs[:, 1], phis, est.mean, est.stderr, est.clean_mean, free),
            header={"t": t, "eps": reg.eps, "n_seeds": est.n_seeds})
    rows = []
    for k in range(est.n_seeds):
        rows.append((k, seed_for(cfg["run.seed"], k), est.seed_collisions[k], *est.seed_flags[k]))
    rep.csv("micro_seeds.csv", ("seed_index", "medium_seed", "collisions_mean", *FLAG_NAMES), rows)
    rep.csv("micro_flags.csv", ("flag", "fraction"), est.flag_fractions.items())

    rep.check("flag-free estimate below full estimate", bool(np.all(est.clean_mean <= est.mean + 1e-15)),
              "monotonicity chain for a non-negative initial density")
    rep.check("finite estimates", bool(np.all(np.isfinite(est.mean)) and np.all(np.isfinite(est.stderr))), "")
    if reg.mu == 0:
        err = float(np.max(np.abs(est.mean - free)))
        rep.check("empty medium equals free flight", err <= 1e-12, f"max deviation {err:.3e}")
    marg = est.marginal_per_seed(m["n_angles"]).mean(axis=0)[-1]
    rep.figure("micro.png", plotting.marginal_figure, phis[: m["n_angles"]],
               {"microscopic": marg, "free flight": free[: m["n_angles"]]},
               {"microscopic": est.stderr[: m["n_angles"]]}, title=f"t = {t:.4g}")
    rep.summary.update(collisions_mean=est.collisions_mean, flags=est.flag_fractions)
    return _finish(rep)


# ---------------------------------------------------------------------------
# kinetic


def _kinetic_dt(cfg, fp: FieldParams) -> float:
    spp = cfg["kinetic.steps_per_period"]
    if spp < 16:
        raise ConfigError("kinetic.steps_per_period", "transport needs at least 16 steps per period")
    return fp.T_L / spp if fp.B != 0 else 1.0 / spp


def _on_step_grid(t: float, dt: float, key: str) -> float:
    n = round(t / dt)
    if abs(n * dt - t) > 1e-9 * max(1.0, t):
        raise ConfigError(key, f"time {t!r} is not a multiple of the step {dt!r}")
    return n * dt


def initial_field(cfg: ExperimentConfig) -> AngularField:
    k = cfg.section("kinetic")
    ang = CosineDensity((k["amplitude"],)).angular
    if k["mode"] == "homogeneous":
        return AngularField.homogeneous(ang, k["nphi"])
    L = k["box"]
    w = L / 8.0

    def f(X, Y, P):
        g = np.exp(-((X - 0.5 * L) ** 2 + (Y - 0.5 * L) ** 2) / (2 * w * w)) / (2 * math.pi * w * w)
        return g * ang(P)

    return AngularField.gridded(f, k["nx"], k["ny"], k["nphi"], (L, L), k["boundary"])


def run_kinetic(cfg: ExperimentConfig, out, workers: Optional[int] = None) -> Report:
    rep = _begin(cfg, "kinetic", out)
    fp = field_from(cfg)
    reg = regime_from(cfg)
    k = cfg.section("kinetic")
    dt = _kinetic_dt(cfg, fp)
    t_end = _on_step_grid(_time(cfg, "kinetic.t_end", fp), dt, "kinetic.t_end")
    cps = sorted({_on_step_grid(_time_cp(c, fp), dt, "kinetic.checkpoints") for c in k["checkpoints"]} | {0.0, t_end})
    kern = kernel_from(cfg, reg, fp)
    f0 = initial_field(cfg)
    if kern.kind == "hard-gbe" and f0.mode != "homogeneous":
        raise ConfigError("kinetic.mode", "the memory equation is solved in homogeneous mode")
    opts = {}
    if kern.kind == "hard-gbe":
        opts = dict(lag_factor=k["lag_factor"],
                    fixed_angle=k["gbe_fixed_angle"] if k["gbe_theta"] == "fixed" else None)
    try:
        sol = solve(f0, kern, fp, t_end, dt, checkpoints=cps, interpolation=k["interpolation"], **opts)
    except SolverError as exc:
        rep.check("solver stable", False, str(exc))
        return _finish(rep)
    rep.check("solver stable", True, f"{sol.steps} steps of {dt:.6g}")
    rep.check("mass conservation", sol.max_mass_drift <= 1e-12, f"max relative drift {sol.max_mass_drift:.3e}")
    rep.check("negativity", sol.min_value >= -1e-12, f"min value {sol.min_value:.3e}", binding=False)

    mode_rows = []
    for i, (t, f) in enumerate(zip(sol.times, sol.fields)):
        name = f"field_{i:03d}.csv"
        f.to_csv(rep.out / name, kern.ident, extra={"checkpoint": i})
        rep.files.append(name)
        c = f.modes()
        for kk in range(min(5, len(c))):
            mode_rows.append((t, kk, c[kk].real, c[kk].imag))
    rep.csv("modes.csv", ("t", "k", "re", "im"), mode_rows, header={"kernel": kern.ident})

    if f0.mode == "homogeneous":
        if kern.kind == "hard-gbe":
            ref = exact_homogeneous(f0, markov_hard_disk_kernel(reg.mu), fp, t_end)
            gap = float(np.max(np.abs(sol.final.values - ref.values)))
            if t_end < fp.T_L:
                rep.check("memory solve equals Markov solve before one period", gap <= 1e-10, f"max gap {gap:.3e}")
            else:
                rep.check("memory correction", True, f"max |GBE - Markov| = {gap:.3e}", binding=False)
        else:
            ref = exact_homogeneous(f0, kern, fp, t_end)
            gap = float(np.max(np.abs(sol.final.values - ref.values)))
            rep.check("splitting matches the closed form", gap <= 1e-10, f"max gap {gap:.3e}")
        if k["dsmc_particles"] > 0 and kern.kind != "hard-gbe":
            amp = k["amplitude"]
            res = dsmc_sample(_CosineSampler(amp), kern, fp, t_end, k["dsmc_particles"],
                              seed_for(cfg["run.seed"], 99), nphi=f0.nphi)
            ex = ref.modes()
            worst = 0.0
            for kk in (1, 2):
                z, se = res.mode(kk)
                worst = max(worst, abs(z - ex[kk]) / se)
            rep.check("particle method vs deterministic modes", worst <= 3.0, f"max |z| = {worst:.2f}",
                      binding=False)
    marg = sol.final.marginal()
    rep.figure("kinetic.png", plotting.marginal_figure, sol.final.phis,
               {"t = 0": f0.marginal(), f"t = {t_end:.4g}": marg}, title=kern.ident)
    if sol.final.mode == "gridded":
        rep.figure("kinetic_space.png", plotting.field_figure, sol.final.values, sol.final.box,
                   title=f"t = {t_end:.4g}")
    return _finish(rep)


def _time_cp(text, fp):
    return resolve_time(text, fp.T_L)


@dataclass(frozen=True)
class _CosineSampler:
    """Rejection sampler for ``(1 + a cos phi) / 2pi``."""

    amplitude: float

    def __call__(self, rng, n):
        out = np.empty(0)
        a = self.amplitude
        while len(out) < n:
            m = int(1.2 * (n - len(out))) + 16
            phi = rng.uniform(0.0, 2.0 * math.pi, m)
            keep = rng.uniform(0.0, 1.0 + abs(a), m) < 1.0 + a * np.cos(phi)
            out = np.concatenate([out, phi[keep]])
        return out[:n]


# ---------------------------------------------------------------------------
# converge


def run_converge(cfg: ExperimentConfig, out, workers: Optional[int] = None) -> Report:
    rep = _begin(cfg, "converge", out)
    fp = field_from(cfg)
    kind = cfg["regime.kind"]
    if kind not in ("weak", "intermediate", "long-range"):
        raise ConfigError("regime.kind", "convergence studies use the smooth or long-range regimes")
    eps_list = _eps_list(cfg)
    c = cfg.section("converge")
    t = _time(cfg, "converge.t_end", fp)
    nphi = max(c["nphi"], _pow2_at_least(c["n_angles"]))
    f0 = CosineDensity((c["amplitude"],))
    F0 = AngularField.homogeneous(f0.angular, nphi)
    xs, phis = phase_grid(c["n_angles"], [(0.0, 0.0)])
    base = regime_from(cfg, eps_list[0])

    if kind == "long-range":
        limit = uncut_kernel(base.mu, base.s, c["theta_min"])
        limit_name = "uncut"
    else:
        limit = landau_kernel(xi_grazing_limit(base.profile, base.mu, base.alpha))
        limit_name = "landau"
    g = exact_homogeneous(F0, limit, fp, t)
    tests = [np.cos(phis), np.sin(phis), np.cos(2 * phis), np.sin(2 * phis)]

    rows = []
    d1s, d1e, d2s = [], [], []
    for i, eps in enumerate(eps_list):
        reg = regime_from(cfg, eps)
        kern = boltzmann_eps_kernel(reg, fp)
        h = exact_homogeneous(F0, kern, fp, t)
        h_at = eval_spectral(h.values, phis)
        est = estimate_f_eps(f0, t, reg, fp, c["n_seeds"], seed_for(cfg["run.seed"], i), xs, phis, workers=workers)
        d1 = l1_circle(est.mean, h_at)
        mc = float(2.0 * math.pi * np.mean(est.stderr) * math.sqrt(2.0 / math.pi))
        g_at = eval_spectral(g.values, phis)
        if kind == "long-range":
            d2 = max(abs(float(2 * math.pi * np.mean(psi * (h_at - g_at)))) for psi in tests)
        else:
            d2 = l2_circle(h.values, g.values)
        inconclusive = mc > 0.5 * d1
        rows.append((eps, d1, mc, int(inconclusive), d2, est.collisions_mean))
        d1s.append(d1)
        d1e.append(mc)
        d2s.append(d2)
    rep.csv("converge.csv", ("eps", "d1", "d1_mc_error", "d1_inconclusive", "d2", "collisions_mean"), rows,
            header={"t": t, "limit": limit_name, "kind": kind})

    fits = []
    ok1 = [r for r in rows if not r[3]]
    s1, i1, ci1 = loglog_fit([r[0] for r in ok1], [r[1] for r in ok1]) if len(ok1) >= 2 else (math.nan, math.nan, (math.nan, math.nan))
    s2, i2, ci2 = loglog_fit(eps_list, d2s)
    fits.append(("d1", s1, ci1[0], ci1[1], len(ok1)))
    fits.append(("d2", s2, ci2[0], ci2[1], len(eps_list)))
    rep.csv("slopes.csv", ("quantity", "slope", "ci_low", "ci_high", "points"), fits)

    rep.check("finite distances", bool(np.all(np.isfinite(d1s + d2s))), "")
    if kind != "long-range":
        a = base.alpha
        rep.check("d2 slope near 2 alpha", abs(s2 - 2 * a) <= 0.05, f"slope {s2:.4f}, target {2 * a:.4f}",
                  binding=False)
    conc = [r[1] for r in ok1]
    rep.check("d1 decreasing", all(b_ < a_ for a_, b_ in zip(conc, conc[1:])),
              f"{len(ok1)} conclusive points", binding=False)
    rep.figure("converge.png", plotting.loglog_figure,
               {"d1 (micro vs Boltzmann)": (eps_list, d1s, d1e), f"d2 (Boltzmann vs {limit_name})": (eps_list, d2s, None)},
               ylabel="distance")
    return _finish(rep)


# ---------------------------------------------------------------------------
# pathology


def run_pathology(cfg: ExperimentConfig, out, workers: Optional[int] = None) -> Report:
    rep = _begin(cfg, "pathology", out)
    fp = field_from(cfg)
    reg = regime_from(cfg)
    eps_list = _eps_list(cfg)
    p = cfg.section("pathology")
    t = _time(cfg, "pathology.t_end", fp)
    table = pathology_scan(reg, eps_list, t, p["n_seeds"], fp, cfg["run.seed"], method=p["method"], nu=p["nu"],
                           workers=workers)
    hard = reg.kind == "boltzmann-grad"
    cols = ["eps", "n"]
    for name in FLAG_NAMES:
        cols += [f"{name}_count", f"{name}_freq", f"{name}_ci_low", f"{name}_ci_high"]
    cols += ["circ_reference"]
    rows = []
    for r in table.rows:
        row = [r.eps, r.n]
        for name in FLAG_NAMES:
            lo, hi = r.wilson(name)
            row += [r.counts[name], r.freq(name), lo, hi]
        if hard:
            ref = circ_limit_probability(2.0 * reg.mu, fp.T_L, t)
        else:
            # full free Larmor orbit envelope for the scaled smooth medium
            ref = math.exp(-2.0 * math.pi * fp.R_L * reg.mu * r.eps ** (-2.0 * reg.alpha))
        rows.append(row + [ref])
    rep.csv("pathology.csv", cols, rows, header={"t": t, "kind": reg.kind, "mu": reg.mu, "B": fp.B})
    rep.csv("pathology_runs.csv", ("eps", "seed_index", "phi", "collisions", *FLAG_NAMES),
            ((rr.eps, rr.seed_index, rr.phi, rr.collisions, *rr.flags) for rr in table.records))
    rep.csv("slopes.csv", ("flag", "slope"), ((n, table.slope(n)) for n in FLAG_NAMES))

    rep.check("all runs recorded", len(table.records) == len(eps_list) * p["n_seeds"], "")
    circ = [r.counts["circ"] for r in table.rows]
    if hard:
        ref = rows[0][-1]
        worst = 0.0
        for r in table.rows:
            se = math.sqrt(ref * (1 - ref) / r.n)
            worst = max(worst, abs(r.freq("circ") - ref) / se)
        rep.check("full-orbit frequency at its limit", worst <= 3.0, f"max |z| = {worst:.2f} vs {ref:.4f}",
                  binding=False)
        rep.check("full-orbit frequency non-vanishing", min(circ) > 0, f"counts {circ}", binding=False)
    else:
        rec = [r.counts["recollision"] for r in table.rows]
        rep.check("full-orbit frequency decreasing", all(b < a for a, b in zip(circ, circ[1:])), f"counts {circ}",
                  binding=False)
        rep.check("recollision frequency decreasing", all(b < a for a, b in zip(rec, rec[1:])), f"counts {rec}",
                  binding=False)
    series = {}
    for name in ("circ", "arc", "recollision", "overlap"):
        f = [r.freq(name) for r in table.rows]
        e = [0.5 * (r.wilson(name)[1] - r.wilson(name)[0]) for r in table.rows]
        series[name] = (eps_list, f, e)
    rep.figure("pathology.png", plotting.loglog_figure, series, ylabel="frequency", title=f"{reg.kind}, t = {t:.4g}")
    return _finish(rep)


# ---------------------------------------------------------------------------
# compare


@dataclass
class MemoryComparison:
    """Angular-marginal curves of one regime."""

    name: str
    times: np.ndarray
    phis: np.ndarray
    micro_per_seed: np.ndarray  # (n_seeds, n_times, n_angles)
    curves: dict  # label -> (n_times, n_angles) deterministic solves on the micro angles

    @property
    def micro_mean(self) -> np.ndarray:
        return self.micro_per_seed.mean(axis=0)

    def micro_modes(self, k: int = 1):
        z = modes(self.micro_per_seed)[..., k]
        n = z.shape[0]
        se = lambda a: a.std(axis=0, ddof=1) / math.sqrt(n)
        return z.mean(axis=0), se(z.real), se(z.imag)

    def curve_modes(self, label: str, k: int = 1) -> np.ndarray:
        return modes(self.curves[label])[..., k]

    def seed_distances(self, label: str, i: int = -1) -> np.ndarray:
        """Per-seed L1 distance between the micro marginal and a curve at time index ``i``."""
        return l1_circle(self.micro_per_seed[:, i, :], self.curves[label][i][None, :])

    def paired_test(self, near: str, far: str, i: int = -1):
        """One-sided paired t-test that the micro marginal is closer to ``near`` than to ``far``."""
        dn, df = self.seed_distances(near, i), self.seed_distances(far, i)
        res = stats.ttest_rel(df, dn, alternative="greater")
        diff = df - dn
        return float(res.pvalue), float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(len(diff)))


def memory_times(fp: FieldParams, t_end: float, n_times: int, dt: float) -> np.ndarray:
    times = np.linspace(0.0, t_end, n_times + 1)
    for t in times:
        _on_step_grid(float(t), dt, "compare.n_times")
    return times


def compare_hard(mu: float, eps: float, fp: FieldParams, times, n_angles: int, n_seeds: int, seed: int,
                 amplitude: float = 0.5, nphi: int = 64, dt: Optional[float] = None, workers=None,
                 positions=((0.0, 0.0),), lag_factor: str = "argument") -> MemoryComparison:
    """Hard-disk microscopic marginal against the memory and Markov solves."""
    f0 = CosineDensity((amplitude,))
    reg = ScalingRegime("boltzmann-grad", mu, eps)
    xs, phis = phase_grid(n_angles, positions)
    est = estimate_f_eps(f0, times, reg, fp, n_seeds, seed, xs, phis, workers=workers)
    micro = est.marginal_per_seed(n_angles)
    nphi = max(nphi, _pow2_at_least(n_angles))
    F0 = AngularField.homogeneous(f0.angular, nphi)
    dt = fp.T_L / 64 if dt is None else dt
    sol = solve(F0, hard_disk_gbe_kernel(mu, fp), fp, float(times[-1]), dt, checkpoints=times, lag_factor=lag_factor)
    ang = phis[:n_angles]
    gbe = np.array([eval_spectral(sol.checkpoint(t).values, ang) for t in times])
    mk = markov_hard_disk_kernel(mu)
    markov = np.array([eval_spectral(exact_homogeneous(F0, mk, fp, t).values, ang) for t in times])
    return MemoryComparison("hard disks", np.asarray(times), ang, micro, {"gbe": gbe, "markov": markov})


def compare_smooth(mu: float, eps: float, alpha: float, fp: FieldParams, times, n_angles: int, n_seeds: int,
                   seed: int, amplitude: float = 0.5, nphi: int = 64, workers=None,
                   positions=((0.0, 0.0),), with_landau: bool = True) -> MemoryComparison:
    """Smooth-potential microscopic marginal against the Boltzmann-eps (Markov) and Landau solves."""
    f0 = CosineDensity((amplitude,))
    reg = ScalingRegime("intermediate", mu, eps, alpha).validate()
    xs, phis = phase_grid(n_angles, positions)
    est = estimate_f_eps(f0, times, reg, fp, n_seeds, seed, xs, phis, workers=workers)
    micro = est.marginal_per_seed(n_angles)
    nphi = max(nphi, _pow2_at_least(n_angles))
    F0 = AngularField.homogeneous(f0.angular, nphi)
    ang = phis[:n_angles]
    kern = boltzmann_eps_kernel(reg, fp)
    curves = {"markov": np.array([eval_spectral(exact_homogeneous(F0, kern, fp, t).values, ang) for t in times])}
    if with_landau:
        lk = landau_kernel(xi_grazing_limit(reg.profile, mu, alpha))
        curves["landau"] = np.array([eval_spectral(exact_homogeneous(F0, lk, fp, t).values, ang) for t in times])
    return MemoryComparison("smooth potential", np.asarray(times), ang, micro, curves)


def mode_check(cmp: MemoryComparison, label: str, ks=(1, 2), i: int = -1):
    """Largest |z| of the micro-minus-curve Fourier components (real and imaginary parts)."""
    worst = 0.0
    for k in ks:
        z, se_r, se_i = cmp.micro_modes(k)
        c = cmp.curve_modes(label, k)
        d = z[i] - c[i]
        worst = max(worst, abs(d.real) / max(se_r[i], 1e-300), abs(d.imag) / max(se_i[i], 1e-300))
    return worst


def run_compare(cfg: ExperimentConfig, out, workers: Optional[int] = None) -> Report:
    rep = _begin(cfg, "compare", out)
    fp = field_from(cfg)
    if fp.B <= 0:
        raise ConfigError("regime.B", "the comparison needs a field")
    c = cfg.section("compare")
    t_end = _time(cfg, "compare.t_end", fp)
    dt = fp.T_L / 64
    times = memory_times(fp, t_end, c["n_times"], dt)
    positions = [(3.0 * i * fp.R_L, 0.0) for i in range(c["n_positions"])]
    seed = cfg["run.seed"]
    hard = compare_hard(c["mu_hard"], c["eps_hard"], fp, times, c["n_angles"], c["n_seeds"], seed_for(seed, 1),
                        c["amplitude"], c["nphi"], dt, workers, positions)
    smooth = compare_smooth(c["mu_smooth"], c["eps_smooth"], c["alpha_smooth"], fp, times, c["n_angles"],
                            c["n_seeds"], seed_for(seed, 2), c["amplitude"], c["nphi"], workers, positions)

    rows, margs = [], []
    for cmp in (hard, smooth):
        z, se_r, se_i = cmp.micro_modes(1)
        for j, t in enumerate(times):
            rows.append((cmp.name, t, t / fp.T_L, "micro", z[j].real, z[j].imag, se_r[j], se_i[j]))
            for label in cmp.curves:
                w = cmp.curve_modes(label)[j]
                rows.append((cmp.name, t, t / fp.T_L, label, w.real, w.imag, 0.0, 0.0))
        se = cmp.micro_per_seed[:, -1, :].std(axis=0, ddof=1) / math.sqrt(cmp.micro_per_seed.shape[0])
        for a, phi in enumerate(cmp.phis):
            margs.append((cmp.name, phi, cmp.micro_mean[-1, a], se[a],
                          *(cmp.curves[lab][-1, a] for lab in ("gbe", "markov", "landau") if lab in cmp.curves)))
    rep.csv("compare_modes.csv", ("regime", "t", "t_over_TL", "source", "re1", "im1", "stderr_re1", "stderr_im1"),
            rows)
    rep.csv("compare_marginals.csv", ("regime", "phi", "micro", "micro_stderr", "curve_a", "curve_b"), margs,
            header={"hard disks": ["gbe", "markov"], "smooth potential": ["markov", "landau"], "t": t_end})

    early = [j for j, t in enumerate(times) if t < fp.T_L]
    gap = float(np.max(np.abs(hard.curves["gbe"][early] - hard.curves["markov"][early]))) if early else 0.0
    rep.check("memory solve equals Markov solve before one period", gap <= 1e-10, f"max gap {gap:.3e}")
    p, dm, se = hard.paired_test("gbe", "markov")
    rep.check("hard disks closer to the memory solve", p < 0.05,
              f"mean(d_markov - d_gbe) = {dm:.4g} +- {se:.2g}, p = {p:.3g}", binding=False)
    z = mode_check(smooth, "markov")
    rep.check("smooth potential at the Markov solve", z <= 3.0, f"max |z| over modes 1, 2 = {z:.2f}", binding=False)
    rep.summary.update(p_value=p, smooth_z=z)

    panels = {}
    for cmp in (hard, smooth):
        zz, se_r, _ = cmp.micro_modes(1)
        curves = {"micro": (times / fp.T_L, zz.real, se_r)}
        for label in cmp.curves:
            curves[label] = (times / fp.T_L, cmp.curve_modes(label).real, None)
        panels[cmp.name] = curves
    rep.figure("compare.png", plotting.mode_figure, panels)
    rep.figure("compare_marginal.png", plotting.marginal_figure, hard.phis,
               {"micro": hard.micro_mean[-1], "gbe": hard.curves["gbe"][-1], "markov": hard.curves["markov"][-1]},
               title=f"hard disks, t = {t_end / fp.T_L:.3g} T_L")
    return _finish(rep)


RUNNERS = {
    "scatter": run_scatter,
    "micro": run_micro,
    "kinetic": run_kinetic,
    "converge": run_converge,
    "pathology": run_pathology,
    "compare": run_compare,
}


def run(cfg: ExperimentConfig, out=None, workers: Optional[int] = None) -> Report:
    name = cfg.experiment
    out = cfg["run.out"] if out is None else out
    fn = RUNNERS[name]
    if name == "scatter":
        return fn(cfg, out)
    return fn(cfg, out, workers=workers)
