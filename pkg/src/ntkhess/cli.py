"""Command-line front end.

Every command reads one JSON config (``--config``), applies ``--set`` overrides
and writes CSV files to ``--out``. Exit codes: 0 success, 2 configuration
error, 3 numerical failure.
"""

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .activations import NONLINEARITIES, make_nonlin
from .data import DataConfig, generate
from .errors import ConfigError, NumericalError
from .gaussmoments import hermite_rule
from .kernels import LAMBDA_LAST_TERMS, compute_kernels
from .losses import KINDS, loss_grad, loss_hess, loss_value, make_loss
from .spectral import kernel_pca, sym_eig
from .theory import (
    FlowState,
    expected_S_moments_mse,
    grams_from_stack,
    mse_flow,
    ode_flow,
    predict_moments,
    predict_trI,
    sample_init_pair,
)
from .widenet.hessian import g_trace
from .widenet.io import save_snapshot
from .widenet.net import init_params, jacobian, outputs
from .widenet.probes import loss_surface_slice
from .widenet.train import train_flow

__all__ = ["main", "load_config", "DEFAULTS", "write_csv"]

COMMANDS = ("predict", "verify", "pca", "surface", "sweep", "flow")
LABEL_RULE = {"mse": "regression", "binary_ce": "binary", "softmax_ce": "classes"}

DEFAULTS = {
    "command": None,
    "data": None,
    "arch": {"L": 2, "width": 100, "beta": 0.1},
    "nonlinearity": "softplus",
    "loss": "mse",
    "quad_order": 40,
    "lambda_last_term": "sigma",
    "time": {"T": 0.0, "steps": 1},
    "ensemble": {"trials": 10, "seed": 0},
    "k_max": 4,
    "probes": 16,
    "sweep": {"widths": [100, 400]},
    "surface": {"grid": 21, "extent": 1.0, "train_T": 0.0, "directions": [0, 3]},
    "flow": {"record_every": 1, "dt": None},
}


def fmt(v) -> str:
    """17-significant-digit rendering for floats; integers and strings verbatim."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


# config handling


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        p = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"{p}: unknown key")
        if isinstance(base[k], dict) and k != "data":
            if not isinstance(v, dict):
                raise ConfigError(f"{p}: expected an object")
            out[k] = _merge(base[k], v, p)
        else:
            out[k] = v
    return out


def _parse_value(s):
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        return s


def _apply_set(cfg, item):
    if "=" not in item:
        raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
    key, val = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for i, k in enumerate(parts[:-1]):
        if k not in node:
            raise ConfigError(f"{'.'.join(parts[: i + 1])}: unknown key")
        if not isinstance(node.get(k), dict):
            if k == "data" and node.get(k) is None:
                node[k] = {}
            else:
                raise ConfigError(f"{'.'.join(parts[: i + 1])}: not an object")
        node = node[k]
    last = parts[-1]
    if node is not cfg.get("data") and last not in node:
        raise ConfigError(f"{key}: unknown key")
    node[last] = _parse_value(val)


def _check_type(path, v, kind, lo=None):
    ok = {
        "int": isinstance(v, int) and not isinstance(v, bool),
        "num": isinstance(v, (int, float)) and not isinstance(v, bool),
        "str": isinstance(v, str),
    }[kind]
    if not ok:
        raise ConfigError(f"{path}: expected {kind}, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{path}: must be >= {lo}")


def load_config(path=None, sets=(), command=None) -> dict:
    """Defaults, then the JSON file, then ``--set`` overrides; validated.

    Raises
    ------
    ConfigError
        With the dotted path of the offending field.
    """
    user = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON ({e})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{p}: top level must be an object")
    cfg = _merge(DEFAULTS, user)
    for item in sets:
        _apply_set(cfg, item)
    if command is not None:
        cfg["command"] = command
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg["command"] not in COMMANDS:
        raise ConfigError(f"command: must be one of {', '.join(COMMANDS)}")
    if not isinstance(cfg["data"], dict):
        raise ConfigError("data: required object")
    a = cfg["arch"]
    _check_type("arch.L", a["L"], "int", 1)
    _check_type("arch.width", a["width"], "int", 1)
    _check_type("arch.beta", a["beta"], "num")
    if cfg["nonlinearity"] not in NONLINEARITIES:
        raise ConfigError(f"nonlinearity: unknown {cfg['nonlinearity']!r}")
    if cfg["loss"] not in KINDS:
        raise ConfigError(f"loss: unknown {cfg['loss']!r}")
    if cfg["lambda_last_term"] not in LAMBDA_LAST_TERMS:
        raise ConfigError(f"lambda_last_term: unknown {cfg['lambda_last_term']!r}")
    _check_type("quad_order", cfg["quad_order"], "int", 2)
    _check_type("time.T", cfg["time"]["T"], "num", 0)
    _check_type("time.steps", cfg["time"]["steps"], "int", 1)
    _check_type("ensemble.trials", cfg["ensemble"]["trials"], "int", 1)
    _check_type("ensemble.seed", cfg["ensemble"]["seed"], "int", 0)
    _check_type("k_max", cfg["k_max"], "int", 1)
    if cfg["k_max"] > 4 and cfg["command"] == "verify":
        raise ConfigError("k_max: at most 4 for verify")
    _check_type("probes", cfg["probes"], "int", 2)
    w = cfg["sweep"]["widths"]
    if not isinstance(w, list) or not w:
        raise ConfigError("sweep.widths: expected a non-empty list")
    for i, v in enumerate(w):
        _check_type(f"sweep.widths[{i}]", v, "int", 1)
    s = cfg["surface"]
    _check_type("surface.grid", s["grid"], "int", 1)
    _check_type("surface.extent", s["extent"], "num", 0)
    _check_type("surface.train_T", s["train_T"], "num", 0)
    if not (isinstance(s["directions"], list) and len(s["directions"]) == 2):
        raise ConfigError("surface.directions: expected two eigenvector indices")
    for i, v in enumerate(s["directions"]):
        _check_type(f"surface.directions[{i}]", v, "int", 0)
    _check_type("flow.record_every", cfg["flow"]["record_every"], "int", 1)
    if cfg["flow"]["dt"] is not None:
        _check_type("flow.dt", cfg["flow"]["dt"], "num")
        if cfg["flow"]["dt"] <= 0:
            raise ConfigError("flow.dt: must be positive")
    d = dict(cfg["data"])
    d.setdefault("label_rule", LABEL_RULE[cfg["loss"]])
    if d["label_rule"] != LABEL_RULE[cfg["loss"]]:
        raise ConfigError(f"data.label_rule: {d['label_rule']!r} does not fit loss {cfg['loss']!r}")
    try:
        dc = DataConfig.from_dict(d)
    except TypeError as e:
        raise ConfigError(f"data: {e}") from None
    dc.validate()
    cfg["data"] = d


def _time_grid(cfg):
    T, n = float(cfg["time"]["T"]), int(cfg["time"]["steps"])
    return np.array([0.0]) if T == 0 else np.linspace(0.0, T, n + 1)


def _dataset(cfg):
    return generate(DataConfig.from_dict(cfg["data"]))


def _setup(cfg, width=None):
    ds = _dataset(cfg)
    return ex.make_setup(
        ds,
        cfg["arch"]["L"],
        cfg["arch"]["width"] if width is None else width,
        cfg["nonlinearity"],
        cfg["arch"]["beta"],
        cfg["loss"],
        cfg["quad_order"],
        cfg["lambda_last_term"],
    )


def _moment_cols(prefix, k):
    return [f"{prefix}{i}" for i in range(1, k + 1)]


# commands


def cmd_predict(cfg, out: Path, jobs: int = 1):
    """Limiting moments along the flow plus kernel tables."""
    ds = _dataset(cfg)
    k = cfg["k_max"]
    stack = compute_kernels(ds.inputs, cfg["arch"]["L"], cfg["arch"]["beta"], make_nonlin(cfg["nonlinearity"]), hermite_rule(cfg["quad_order"]), cfg["lambda_last_term"])
    grams = grams_from_stack(stack, ds.n_L)
    loss = make_loss(cfg["loss"], ds.labels, ds.n_L)
    init = sample_init_pair(grams.sigma, grams.phi, grams.xi, seed=cfg["ensemble"]["seed"])
    pred = predict_moments(loss, grams, init, _time_grid(cfg), k_max=k)
    header = ["t"] + _moment_cols("trI", k) + ["trS1"] + (["trS2"] if k >= 2 else []) + _moment_cols("trH", k)
    mse = cfg["loss"] == "mse"
    if mse:
        header += ["E_trS1", "E_trS2"]
    rows = []
    for i, t in enumerate(pred.t):
        r = [t, *pred.trI[i], *pred.trS[i, : min(k, 2)], *pred.trH[i]]
        if mse:
            r += [pred.E_trS1[i], pred.E_trS2[i]]
        rows.append(r)
    write_csv(out / "theory_moments.csv", header, rows)
    kd = out / "kernels"
    kd.mkdir(exist_ok=True)
    tables = stack.tables()
    for name, T in tables.items():
        write_csv(kd / f"{name}.csv", [f"x{j}" for j in range(T.shape[1])], T.tolist())
    layers = {name: {str(l): getattr(stack, name)[l].tolist() for l in sorted(getattr(stack, name))} for name in ("sigma", "theta")}
    doc = {"L": stack.L, "beta": stack.beta, "nonlinearity": stack.nl.id, "output": {n: T.tolist() for n, T in tables.items()}, "layers": layers}
    (kd / "kernels.json").write_text(json.dumps(doc, indent=1) + "\n")
    return ["theory_moments.csv", "kernels/"]


def _theory_rows(setup, trials, times, k):
    """Per-time theory values of (trI_k, trS_k); MSE uses the expectations over the initialization."""
    g, loss = setup.grams, setup.loss()
    trI = np.zeros((times.size, k))
    trS = np.zeros((times.size, k))
    if loss.kind == "mse":
        ys = loss.labels.reshape(-1)
        for i, t in enumerate(times):
            trI[i] = predict_trI(loss, g.theta, ys, k)
            e1, e2 = expected_S_moments_mse(g.theta, g.lam, g.upsilon, g.sigma, g.phi, ys, t, setup.N)
            trS[i, 0] = e1
            if k >= 2:
                trS[i, 1] = e2
        return trI, trS
    # other losses: average the limiting trajectories started from each trial's own (Y0, G0)
    for tr in trials:
        st = FlowState(0.0, tr["Y0"], tr["G0"])
        for i, t in enumerate(times):
            if t > st.t:
                st = ode_flow(loss, g.theta, g.lam, st, t - st.t, max(1, int(np.ceil(1000 * (t - st.t)))))[-1]
            gr = loss_grad(loss, st.Y)
            trI[i] += predict_trI(loss, g.theta, st.Y, k)
            trS[i, 0] += st.G @ gr
            if k >= 2:
                trS[i, 1] += gr @ g.upsilon @ gr
    return trI / len(trials), trS / len(trials)


def _zscore(mean, se, theory):
    d = mean - theory
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, d / np.where(se > 0, se, 1.0), np.where(np.abs(d) <= 1e-12 * (1 + np.abs(theory)), 0.0, np.nan))
    return z


def cmd_verify(cfg, out: Path, jobs: int = 1):
    """Ensemble of finite networks against the limiting moments."""
    setup = _setup(cfg)
    k = cfg["k_max"]
    times = _time_grid(cfg)
    base, n = cfg["ensemble"]["seed"], cfg["ensemble"]["trials"]
    seeds = [base + i for i in range(n)]
    trials = ex.run_trials(ex.moment_trial, setup, seeds, jobs, times=times, k_max=k, probes=cfg["probes"])
    header = ["trial", "seed", "t"] + _moment_cols("trI", k) + _moment_cols("trS", k) + _moment_cols("trH", k) + ["loss"]
    rows = []
    for i, (s, tr) in enumerate(zip(seeds, trials)):
        for j in range(tr["t"].size):
            rows.append([i, s, tr["t"][j], *tr["trI"][j], *tr["trS"][j], *tr["trH"][j], tr["loss"][j]])
    write_csv(out / "empirical_moments.csv", header, rows)
    t_act = trials[0]["t"]
    thI, thS = _theory_rows(setup, trials, t_act, k)
    thH = thI + thS
    comp = []
    for name, th in (("trI", thI), ("trS", thS), ("trH", thH)):
        vals = np.stack([tr[name] for tr in trials])
        mean, se = ex.ensemble_stats(vals)
        if n == 1:
            se = np.zeros_like(mean)
        comp.append((name, th, mean, se, _zscore(mean, se, th)))
    header = ["t", "k", "trI_theory", "trS_theory", "trH_theory"]
    for name, *_ in comp:
        header += [f"{name}_mean", f"{name}_se", f"{name}_z"]
    rows = []
    for j, t in enumerate(t_act):
        for kk in range(k):
            r = [t, kk + 1, thI[j, kk], thS[j, kk], thH[j, kk]]
            for _, _, mean, se, z in comp:
                r += [mean[j, kk], se[j, kk], z[j, kk]]
            rows.append(r)
    write_csv(out / "comparison.csv", header, rows)
    return ["empirical_moments.csv", "comparison.csv"]


def cmd_pca(cfg, out: Path, jobs: int = 1):
    """Weighted kernel PCA of the limiting NTK: the nonzero spectrum of ``I`` at initialization.

    The weights are the loss Hessian at ``Y = 0`` (the mean initial output).
    """
    ds = _dataset(cfg)
    stack = compute_kernels(ds.inputs, cfg["arch"]["L"], cfg["arch"]["beta"], make_nonlin(cfg["nonlinearity"]), hermite_rule(cfg["quad_order"]), cfg["lambda_last_term"])
    grams = grams_from_stack(stack, ds.n_L)
    loss = make_loss(cfg["loss"], ds.labels, ds.n_L)
    hc = loss_hess(loss, np.zeros(loss.size))
    if np.count_nonzero(hc - np.diag(np.diag(hc))):
        # non-diagonal weights: use the symmetric form H_C^{1/2} Theta H_C^{1/2}
        e = sym_eig(hc)
        r = e.eigenvectors @ np.diag(np.sqrt(np.clip(e.eigenvalues, 0, None))) @ e.eigenvectors.T
        ev = sym_eig(r @ grams.theta @ r).eigenvalues
    else:
        ev = kernel_pca(grams.theta, np.diag(hc)).eigenvalues
    ntk = sym_eig(grams.theta).eigenvalues
    tot = ev.sum()
    rows = [[i, ev[i], ev[i] / tot if tot > 0 else 0.0, ntk[i]] for i in range(ev.size)]
    write_csv(out / "spectrum.csv", ["index", "eigenvalue", "fraction", "ntk_eigenvalue"], rows)
    return ["spectrum.csv"]


def _top_I_directions(params, X, loss, idx):
    """Unit eigenvectors of ``I = J' H_C J`` for the given ranks, via the small ``M x M`` problem."""
    J = jacobian(params, X)
    hc = loss_hess(loss, outputs(params, X))
    e = sym_eig(hc)
    r = e.eigenvectors @ np.diag(np.sqrt(np.clip(e.eigenvalues, 0, None))) @ e.eigenvectors.T
    d = sym_eig(r @ J @ J.T @ r)
    if max(idx) >= d.eigenvalues.size:
        raise ConfigError(f"surface.directions: I has only {d.eigenvalues.size} nonzero directions")
    vs, lams = [], []
    for i in idx:
        lam = d.eigenvalues[i]
        if lam <= 0:
            raise NumericalError(f"eigenvalue {i} of I is not positive")
        vs.append(J.T @ (r @ d.eigenvectors[:, i]) / np.sqrt(lam))
        lams.append(lam)
    return vs, lams


def cmd_surface(cfg, out: Path, jobs: int = 1):
    """Loss on the plane spanned by two eigenvectors of ``I``, after optional training."""
    setup = _setup(cfg)
    loss = setup.loss()
    p = init_params(setup.arch(), cfg["ensemble"]["seed"])
    T = float(cfg["surface"]["train_T"])
    if T > 0:
        traj = train_flow(p, setup.X, loss, T, dt=cfg["flow"]["dt"], record_every=10**9, keep_params=True)
        p = traj.params[-1]
    (v1, v2), lams = _top_I_directions(p, setup.X, loss, cfg["surface"]["directions"])
    v2 = v2 - (v1 @ v2) * v1
    v2 /= np.linalg.norm(v2)
    a, b, vals = loss_surface_slice(p, setup.X, loss, v1, v2, cfg["surface"]["grid"], cfg["surface"]["extent"])
    rows = [[a[i], b[j], vals[i, j]] for i in range(a.size) for j in range(b.size)]
    write_csv(out / "surface.csv", ["a", "b", "loss"], rows)
    write_csv(out / "surface_axes.csv", ["axis", "direction", "eigenvalue"], [[0, cfg["surface"]["directions"][0], lams[0]], [1, cfg["surface"]["directions"][1], lams[1]]])
    return ["surface.csv", "surface_axes.csv"]


SWEEP_METRICS = ("frob_IS_normalized", "op_S", "frob_S", "frob_I", "additivity2", "additivity3", "additivity4", "trS3", "trS4")


def cmd_sweep(cfg, out: Path, jobs: int = 1):
    """Width sweep of orthogonality, operator norm and additivity statistics."""
    base = _setup(cfg)
    base_seed, n = cfg["ensemble"]["seed"], cfg["ensemble"]["trials"]
    seeds = [base_seed + i for i in range(n)]
    rows = []
    for w in cfg["sweep"]["widths"]:
        res = ex.run_trials(ex.sweep_trial, base.with_width(w), seeds, jobs, probes=cfg["probes"])
        for m in SWEEP_METRICS:
            mean, se = ex.ensemble_stats([r[m] for r in res])
            rows.append([w, m, mean, se if n > 1 else 0.0, n])
    write_csv(out / "trends.csv", ["width", "metric", "mean", "se", "n"], rows)
    return ["trends.csv"]


def cmd_flow(cfg, out: Path, jobs: int = 1):
    """Train one network and track it against the limiting flow from its own initialization."""
    setup = _setup(cfg)
    loss, g = setup.loss(), setup.grams
    p = init_params(setup.arch(), cfg["ensemble"]["seed"])
    T = float(cfg["time"]["T"])
    traj = train_flow(p, setup.X, loss, T, dt=cfg["flow"]["dt"], record_every=cfg["flow"]["record_every"], keep_params=True)
    Y0 = traj.Y[0]
    G0 = g_trace(p, setup.X).reshape(-1)
    st = FlowState(0.0, Y0, G0)
    rows = []
    for t, Y, c, q in zip(traj.times, traj.Y, traj.loss, traj.params):
        if loss.kind == "mse":
            st = mse_flow(g.theta, g.lam, Y0, G0, loss.labels.reshape(-1), t, setup.N)
        elif t > st.t:
            st = ode_flow(loss, g.theta, g.lam, st, t - st.t, max(1, int(np.ceil(1000 * (t - st.t)))))[-1]
        gr = loss_grad(loss, Y)
        rows.append([t, c, loss_value(loss, st.Y), float(np.abs(Y - st.Y).max()), float(g_trace(q, setup.X).reshape(-1) @ gr), float(st.G @ loss_grad(loss, st.Y))])
    write_csv(out / "flow.csv", ["t", "loss", "loss_theory", "max_dev_Y", "trS1", "trS1_theory"], rows)
    save_snapshot(out / "final.ntkh", traj.params[-1])
    return ["flow.csv", "final.ntkh"]


HANDLERS = {"predict": cmd_predict, "verify": cmd_verify, "pca": cmd_pca, "surface": cmd_surface, "sweep": cmd_sweep, "flow": cmd_flow}


def build_parser():
    ap = argparse.ArgumentParser(prog="ntkhess", description="Limiting kernels and Hessian moments of wide networks.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", metavar="PATH", help="JSON run config")
    ap.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    ap.add_argument("--jobs", metavar="N", type=int, default=1, help="worker processes for ensembles")
    ap.add_argument("--set", metavar="K=V", action="append", default=[], dest="sets", help="override a config field (dotted path, JSON value)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config, args.sets, args.command)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
        files = HANDLERS[args.command](cfg, out, args.jobs)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    for f in files:
        print(out / f)
    return 0
