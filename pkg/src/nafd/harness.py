"""Experiment orchestration: sweeps, DE-vs-MC validation, comparisons, output.

Every sweep point gets its own seeded streams: trial ``t`` of point ``p``
draws from ``derive_rng_streams(seed, p, t)``, so results do not depend on
the worker count or on execution order.
"""

import csv
import hashlib
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import (ExperimentSpec, build_ga, build_geometry_scenario, build_system,
                     check_tree, merge)
from .detequiv import de_dl_rzf, de_dl_zf, de_residual_covariance, de_ul, optimal_alpha
from .downlink import McResult, mc_dl_sum_rate
from .errors import NafdError
from .model import build_geometry, correlations_from_geometry, sample_realization, \
    uniform_correlations
from .scheduler import (GaParams, UserPool, dl_rate, exhaustive_schedule, ga_schedule,
                        iud_objective, random_schedule)
from .streams import derive_rng_streams, trial_streams
from .uplink import mc_sum_rates

CONFIG_COLUMNS = ("M", "N_U", "N_D", "K_U", "K_D", "P", "p_ul", "sigma2_ul", "sigma2_dl",
                  "alpha", "tau2_ul", "tau2_dl", "tau2_I")
COLUMNS = ("experiment", "point_index", "case", "scenario", "sweep_axis", "sweep_value",
           "metric", "value", "stderr", "trials", "seed", "status", "message",
           "config_hash") + CONFIG_COLUMNS

_SYS_AC = dict(M=8, N_U=4, N_D=4, K_U=32, K_D=32, sigma2_ul=1.0, sigma2_dl=1.0,
               alpha="auto", tau2_I=0.1)

PRESETS = {
    "validate_de_dl": {
        "system": dict(_SYS_AC, snr_ul_db=-10.0, tau2_ul=0.0),
        "experiment": {"sweep": "snr_dl_db=-10:5:10", "precoders": ["rzf", "zf"],
                       "cases": [{"tau2_dl": 0.0}, {"tau2_dl": 0.1}]},
    },
    "validate_de_ul": {
        "system": dict(_SYS_AC, snr_dl_db=5.0, tau2_dl=0.1),
        "experiment": {"sweep": "snr_ul_db=-10:5:10",
                       "cases": [{"tau2_ul": 0.0}, {"tau2_ul": 0.1}, {"tau2_ul": 0.3},
                                 {"tau2_ul": [0.0, 0.1, 0.2, 0.3], "name": "mixed"}]},
    },
    "compare_precoders": {
        "system": dict(_SYS_AC, snr_ul_db=-10.0, tau2_ul=0.0),
        "experiment": {"sweep": "snr_dl_db=-10:5:10",
                       "cases": [{"tau2_dl": 0.0}, {"tau2_dl": 0.1}]},
    },
    "compare_duplex": {
        "system": dict(_SYS_AC, snr_dl_db=5.0, snr_ul_db=5.0),
        "geometry": {},
        "experiment": {"cases": [{"M": 2}, {"M": 4}, {"M": 8}], "trials": 500,
                       "modes": ["NAFD", "CCFD_CRAN", "CCFD_MASSIVE"]},
    },
    "schedule_compare": {
        "system": dict(M=1, N_U=2, N_D=2, K_U=2, K_D=2, snr_dl_db=5.0, tau2_I=0.1,
                       alpha="auto"),
        "geometry": {},
        "schedule": {"K_U_all": 8, "K_D_all": 8},
        "experiment": {"sweep": "snr_ul_db=-10:10:10", "trials": 200},
    },
}


@dataclass
class Outcome:
    """Rows of a run and whether any sweep point failed."""

    rows: list
    failed: bool

    @property
    def exit_code(self):
        return 1 if self.failed else 0


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return json.dumps(v, separators=(",", ":"))
    return str(v)


def _hash(obj):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class _Point:
    """One sweep point: builds config and correlations, collects rows."""

    def __init__(self, tree, spec, index, case_index, overrides, sweep_value):
        self.tree = tree
        self.spec = spec
        self.index = index
        self.case_index = case_index
        self.overrides = dict(overrides)
        self.sweep_value = sweep_value
        self.name = self.overrides.pop("name", f"case{case_index}")
        self.rho = self.overrides.pop("rho", tree.get("correlation", {}).get("rho"))
        sysvals = merge(tree.get("system", {}), self.overrides)
        self.config, self.auto_alpha = build_system(sysvals)
        self.fingerprint = _hash({"tree": tree, "overrides": overrides})
        self.rows = []
        self.failed = False
        self.scenario = "uniform" if self.rho is None else f"uniform_rho{self.rho:g}"

    def row(self, metric, value=None, stderr=None, trials=None, status="ok", message="",
            config=None, scenario=None):
        c = (config or self.config).to_dict()
        sw = self.spec.sweep
        r = {"experiment": self.spec.kind, "point_index": self.index, "case": self.name,
             "scenario": scenario or self.scenario,
             "sweep_axis": sw.axis if sw else "", "sweep_value": self.sweep_value,
             "metric": metric, "value": value, "stderr": stderr, "trials": trials,
             "seed": self.spec.seed, "status": status, "message": message,
             "config_hash": self.fingerprint}
        r.update({k: c[k] for k in CONFIG_COLUMNS})
        if status != "ok":
            self.failed = True
        self.rows.append(r)

    def fail(self, metric, exc, config=None, scenario=None):
        self.row(metric, status="failed", message=f"{type(exc).__name__}: {exc}",
                 config=config, scenario=scenario)

    def streams(self, *labels):
        return trial_streams(self.spec.seed, self.index, *labels)

    def uniform(self, config=None):
        c = self.tree.get("correlation", {})
        return uniform_correlations(config or self.config, gain=c.get("gain", 1.0),
                                    gain_I=c.get("gain_I"), gain_uu=c.get("gain_uu"),
                                    rho=self.rho)

    def with_alpha(self, cs, config=None):
        c = config or self.config
        if self.auto_alpha:
            c = c.replace(alpha=optimal_alpha(c, cs))
        return c


def _mc_row(pt, metric, res, config=None, scenario=None):
    pt.row(metric, res.mean, res.stderr, res.trials, config=config, scenario=scenario)


def _diff_row(pt, metric, a, b, config=None, scenario=None):
    d = McResult.from_samples(a.samples - b.samples)
    pt.row(metric, d.mean, d.stderr, d.trials, config=config, scenario=scenario)


def _gap_row(pt, metric, mc, de):
    pt.row(metric, abs(mc - de) / abs(mc) if mc else None)


def _validate_de_dl(pt):
    cs = pt.uniform()
    cfg = pt.with_alpha(cs)
    pt.config = cfg
    for prec in pt.spec.precoders:
        try:
            mc = mc_dl_sum_rate(cfg, cs, prec, pt.spec.trials, pt.streams())
            _mc_row(pt, f"R_dl_{prec}_mc", mc)
        except NafdError as exc:
            pt.fail(f"R_dl_{prec}_mc", exc)
            mc = None
        try:
            de = (de_dl_rzf if prec == "rzf" else de_dl_zf)(cfg, cs)
            pt.row(f"R_dl_{prec}_de", de.sum_rate_bar)
        except NafdError as exc:
            pt.fail(f"R_dl_{prec}_de", exc)
            de = None
        if mc is not None and de is not None:
            _gap_row(pt, f"gap_dl_{prec}", mc.mean, de.sum_rate_bar)


def _validate_de_ul(pt):
    cs = pt.uniform()
    cfg = pt.with_alpha(cs)
    pt.config = cfg
    try:
        mc = mc_sum_rates(cfg, cs, "rzf", pt.spec.trials, pt.streams())
    except NafdError as exc:
        pt.fail("R_ul_mc", exc)
        return
    try:
        dl = de_dl_rzf(cfg, cs).sum_rate_bar
        ul = de_ul(cfg, cs).sum_rate_bar
    except NafdError as exc:
        pt.fail("R_ul_de", exc)
        return
    for name, m, d in (("ul", mc["ul"], ul), ("dl_rzf", mc["dl"], dl),
                       ("total", mc["total"], ul + dl)):
        _mc_row(pt, f"R_{name}_mc", m)
        pt.row(f"R_{name}_de", d)
        _gap_row(pt, f"gap_{name}", m.mean, d)


def _compare_precoders(pt):
    cs = pt.uniform()
    cfg = pt.with_alpha(cs)
    pt.config = cfg
    res = {}
    for prec in ("rzf", "zf"):
        try:
            res[prec] = mc_dl_sum_rate(cfg, cs, prec, pt.spec.trials, pt.streams())
            _mc_row(pt, f"R_dl_{prec}_mc", res[prec])
        except NafdError as exc:
            pt.fail(f"R_dl_{prec}_mc", exc)
    if len(res) == 2:
        _diff_row(pt, "diff_rzf_minus_zf", res["rzf"], res["zf"])


def duplex_trial(config, scenario, rng, alpha):
    """Downlink and uplink RZF/MMSE sum rates on one seeded layout."""
    from .downlink import dl_sinr, rzf_precoder
    from .uplink import residual_covariance, ul_sinr
    geo = build_geometry(scenario, config, rng)
    cs = correlations_from_geometry(geo, scenario, config)
    r = sample_realization(config, cs, rng)
    W = rzf_precoder(r.Ghat_dl, alpha, config.P, config.M, config.N_D)
    S = residual_covariance(cs, config.tau2_I, W, config)
    return dl_sinr(r, W, config).sum_rate, ul_sinr(r, S, config.p_ul).sum_rate


def _compare_duplex(pt):
    cfg = pt.config
    out = {}
    for mode in pt.spec.modes:
        try:
            sc = build_geometry_scenario(pt.tree.get("geometry", {}), mode)
            get = pt.streams(mode)
            c = cfg
            if pt.auto_alpha:
                g0 = derive_rng_streams(pt.spec.seed, pt.index, mode, "alpha")
                cs0 = correlations_from_geometry(build_geometry(sc, cfg, g0), sc, cfg)
                c = cfg.replace(alpha=optimal_alpha(cfg, cs0))
            v = np.array([duplex_trial(c, sc, get(t), c.alpha)
                          for t in range(pt.spec.trials)])
        except NafdError as exc:
            pt.fail(f"SE_{mode}_mc", exc, scenario=mode)
            continue
        out[mode] = McResult.from_samples(v.sum(axis=1))
        _mc_row(pt, f"SE_{mode}_mc", out[mode], config=c, scenario=mode)
        _mc_row(pt, f"R_dl_{mode}_mc", McResult.from_samples(v[:, 0]), config=c, scenario=mode)
        _mc_row(pt, f"R_ul_{mode}_mc", McResult.from_samples(v[:, 1]), config=c, scenario=mode)
    modes = [m for m in pt.spec.modes if m in out]
    for a, b in zip(modes, modes[1:]):
        _diff_row(pt, f"SE_diff_{a}_minus_{b}", out[a], out[b])


def schedule_instance(config, scenario, K_U_all, K_D_all, ga, rng, exhaustive=False):
    """GA, random and (optionally) exhaustive scheduling on one seeded layout.

    Returns
    -------
    dict
        IUD and downlink rate per scheduler, plus ``ga_hit`` when the
        exhaustive optimum is computed.
    """
    full = config.resize(K_U=K_U_all, K_D=K_D_all)
    geo = build_geometry(scenario, full, rng)
    cs = correlations_from_geometry(geo, scenario, full)
    pool = UserPool(config, cs, rng)
    params = GaParams(**{**ga.__dict__, "seed": int(rng.integers(2 ** 63))})
    res = ga_schedule(pool.waiting, config, params, pool)
    rnd = random_schedule(pool.waiting, config, rng)
    out = {"IUD_ga": res.best_iud, "IUD_random": iud_objective(rnd, pool),
           "R_dl_gas": dl_rate(res.best, pool), "R_dl_random": dl_rate(rnd, pool)}
    if exhaustive:
        ex = exhaustive_schedule(pool.waiting, config, pool)
        out["IUD_exhaustive"] = iud_objective(ex, pool)
        out["ga_hit"] = float(np.isclose(res.best_iud, out["IUD_exhaustive"],
                                         rtol=1e-9, atol=1e-12))
    return out


def _schedule_compare(pt):
    cfg = pt.config
    if pt.auto_alpha:
        # MMSE-style regularizer for unit-gain channels
        cfg = cfg.replace(alpha=cfg.K_D * cfg.sigma2_dl / cfg.P)
    pt.config = cfg
    sc = build_geometry_scenario(pt.tree.get("geometry", {}))
    s = pt.tree.get("schedule", {})
    ga = build_ga(pt.tree.get("ga", {}))
    get = pt.streams()
    try:
        recs = [schedule_instance(cfg, sc, s.get("K_U_all", 8), s.get("K_D_all", 8), ga,
                                  get(t), pt.spec.exhaustive)
                for t in range(pt.spec.trials)]
    except NafdError as exc:
        pt.fail("IUD_ga", exc)
        return
    for k in recs[0]:
        _mc_row(pt, k, McResult.from_samples([r[k] for r in recs]))
    _diff_row(pt, "R_dl_gas_minus_random",
              McResult.from_samples([r["R_dl_gas"] for r in recs]),
              McResult.from_samples([r["R_dl_random"] for r in recs]))


RUNNERS = {"validate_de_dl": _validate_de_dl, "validate_de_ul": _validate_de_ul,
           "compare_precoders": _compare_precoders, "compare_duplex": _compare_duplex,
           "schedule_compare": _schedule_compare}


def points(tree, spec):
    """Enumerate ``(index, case_index, overrides, sweep_value)`` in canonical order."""
    out = []
    values = spec.sweep.values() if spec.sweep else [None]
    for ci, case in enumerate(spec.cases):
        for v in values:
            ov = dict(case)
            if v is not None:
                ov[spec.sweep.axis] = v
            out.append((len(out), ci, ov, v))
    return out


def run_point(tree, spec, index, case_index, overrides, sweep_value):
    """Run one sweep point; never raises for solver failures."""
    pt = _Point(tree, spec, index, case_index, overrides, sweep_value)
    try:
        RUNNERS[spec.kind](pt)
    except NafdError as exc:
        pt.fail("point", exc)
    return pt.rows, pt.failed


def _star(args):
    return run_point(*args)


def run_experiment(spec, tree=None, workers=1):
    """Run every sweep point of ``spec`` on the config ``tree``.

    Parameters
    ----------
    spec : ExperimentSpec
    tree : dict, optional
        Config tree; missing sections come from the preset for ``spec.kind``.
    workers : int
        Processes used for sweep points.

    Returns
    -------
    Outcome
    """
    tree = resolve_tree(spec.kind, tree)
    jobs = [(tree, spec) + p for p in points(tree, spec)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_star, jobs))
    else:
        results = [_star(j) for j in jobs]
    rows = [r for rs, _ in results for r in rs]
    rows.sort(key=lambda r: r["point_index"])
    return Outcome(rows, any(f for _, f in results))


def resolve_tree(kind, tree=None):
    """Preset for ``kind`` overlaid with the user tree (without its experiment section)."""
    tree = check_tree(dict(tree or {}))
    base = {k: v for k, v in PRESETS[kind].items() if k != "experiment"}
    user = {k: v for k, v in tree.items() if k != "experiment"}
    if "geometry" in PRESETS[kind] and "geometry" not in user:
        user["geometry"] = {}
    return merge(base, user)


def make_spec(kind, tree=None, **flags):
    """ExperimentSpec from preset, config ``experiment`` section and CLI flags."""
    exp = merge(PRESETS[kind].get("experiment", {}), (tree or {}).get("experiment", {}))
    exp.pop("kind", None)
    exp.update({k: v for k, v in flags.items() if v is not None})
    for k in ("precoders", "modes"):
        if k in exp:
            exp[k] = tuple(exp[k])
    return ExperimentSpec(kind=kind, **exp)


def render(rows, emit):
    """Serialize rows as CSV (canonical) or JSON."""
    if emit == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in COLUMNS])
        return buf.getvalue()
    recs = []
    for r in rows:
        rec = {}
        for c in COLUMNS:
            v = r.get(c)
            if isinstance(v, np.generic):
                v = v.item()
            rec[c] = v
        recs.append(rec)
    return json.dumps(recs, indent=1, allow_nan=True) + "\n"


def write_atomic(path, text):
    """Write ``text`` via a temporary file in the target directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
