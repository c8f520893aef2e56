"""Command-line front end.

Every subcommand resolves its configuration (defaults, then ``--config`` file,
then explicit flags), validates it against the shipped JSON schema, writes its
artifacts into ``<output root>/<command>-<config hash>/`` and finishes with a
``manifest.json`` recording the full configuration and artifact checksums.

Exit codes: 0 success, 1 validation or missing-input error, 2 numerical abort.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import __version__
from .gradients import (
    TargetSpec,
    UnstableSpectrumError,
    analytic_terms,
    finite_diff_grad,
    fixed_point_residual,
    grad_linear,
    grad_nonlinear,
    mse_loss,
    theta_star,
)
from .kernels import BACKEND
from .memory import (
    layer_avg_mf,
    layer_sup_mf,
    mc_sum,
    memory_function,
    singular_diagnostics,
    vandermonde,
)
from .spectra import CONTINUOUS_TAGS, Spectrum, delta_grid, discretize, make_spectrum, spectral_radius
from .ssm_core import DivergenceError, gen_uniform_input, layer_simulate, make_layer, simulate
from .training import (
    CompareSetup,
    TrainConfig,
    _make_task,
    build_model,
    compare_settings,
    parse_task,
    train,
)

logger = logging.getLogger(__name__)

OUTPUT_ENV = "SSMMEM_OUTPUT_ROOT"
DEFAULT_ROOT = "runs"
MANIFEST = "manifest.json"
MANIFEST_VERSION = 1
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
COMMANDS = ("spectra", "simulate", "mf", "vandermonde", "gradcheck", "train", "compare", "report")

# Keys that do not influence results and are left out of the config hash.
UNHASHED = ("output_dir", "workers")

_COMMON = {"tag": "s4dlin", "n": 32, "delta": None, "radius": 0.99, "seed": 0}
_TRAINING = {
    "task": "delay:20",
    "optimizer": "adam",
    "lr_readout": 0.01,
    "lr_eig": 0.001,
    "epochs": 300,
    "batch_size": None,
    "activation": "identity",
    "eig_param": "exp",
}
DEFAULTS = {
    "spectra": dict(_COMMON),
    "simulate": {**_COMMON, "T": 1024, "washout": None, "dump_states": False},
    "mf": {
        **_COMMON,
        "T": 1024,
        "washout": None,
        "delta_grid": None,
        "tau_max": None,
        "surrogates": 20,
        "threshold": 1.2,
    },
    "vandermonde": {**_COMMON, "T": 1024},
    "gradcheck": {**_COMMON, "n": 6, "T": 256, "tau": 3, "fd_step": 1e-6, "radius": 0.9, "tag": "random"},
    "train": {**_COMMON, **_TRAINING, "T": 1024, "washout": None, "delta_grid": None, "mode": "rc"},
    "compare": {
        **{k: v for k, v in _COMMON.items() if k not in ("tag", "seed")},
        **_TRAINING,
        "tags": ["s4dinv", "s4dlin", "random", "lin", "step"],
        "T": 1024,
        "washout": None,
        "delta_grid": None,
        "seeds": 6,
        "modes": ["rc", "trainable_eig"],
        "workers": 1,
    },
    "report": {},
}
DEFAULT_GRID = (0.01, 0.1, 4)


class ConfigError(ValueError):
    """Invalid configuration or missing input."""


# ---------------------------------------------------------------------------
# Formatting helpers


def fmt(x) -> str:
    """Float with 17 significant digits (exact round trip); other values via str."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if x is None:
        return ""
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config: dict) -> str:
    payload = {k: v for k, v in config.items() if k not in UNHASHED}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def load_schema() -> dict:
    text = resources.files("ssmmem").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


# ---------------------------------------------------------------------------
# Configuration


def _grid_values(config: dict, tag: Optional[str] = None) -> tuple:
    tag = tag or config.get("tag")
    if tag is not None and tag not in CONTINUOUS_TAGS:
        return ()
    if config.get("delta_grid") is not None:
        lo, hi, count = config["delta_grid"]
        return tuple(delta_grid(lo, hi, count))
    if config.get("delta") is not None:
        return (float(config["delta"]),)
    return ()


def resolve_config(command: str, file_config: Optional[dict], flags: dict) -> dict:
    """Merge defaults, a config file and explicit flags, then fill derived defaults."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    config = {"command": command, **DEFAULTS[command]}
    if file_config:
        if "manifest_version" in file_config:
            file_config = file_config["config"]
        if file_config.get("command", command) != command:
            raise ConfigError(f"config is for command {file_config['command']!r}, not {command!r}")
        config.update(file_config)
    config.update({k: v for k, v in flags.items() if v is not None})
    config.setdefault("output_dir", None)
    try:
        jsonschema.validate(config, load_schema())
    except jsonschema.ValidationError as err:
        raise ConfigError(f"invalid configuration: {err.message}") from err
    if command in ("simulate", "mf", "train", "compare") and config.get("washout") is None:
        config["washout"] = 2 * config["T"]
    if command in ("mf", "vandermonde", "gradcheck", "simulate", "train"):
        if config["tag"] in CONTINUOUS_TAGS and config.get("delta") is None and config.get("delta_grid") is None:
            config["delta"] = 0.01 if command != "train" else None
            if command == "train":
                config["delta_grid"] = list(DEFAULT_GRID)
    if command == "compare" and config.get("delta_grid") is None and config.get("delta") is None:
        config["delta_grid"] = list(DEFAULT_GRID)
    if command == "mf" and config.get("tau_max") is None:
        config["tau_max"] = min(config["washout"], 4 * config["n"])
    if command == "report" and "target_dir" not in config:
        raise ConfigError("report needs a target directory")
    return config


def output_root(config: dict) -> Path:
    root = config.get("output_dir") or os.environ.get(OUTPUT_ENV) or DEFAULT_ROOT
    return Path(root)


def write_manifest(run_dir: Path, config: dict, artifacts: Sequence[str], status: str = "ok") -> dict:
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": config["command"],
        "config": config,
        "config_hash": config_hash(config),
        "seed": config.get("seed", config.get("seeds")),
        "package_version": __version__,
        "backend": BACKEND,
        "status": status,
        "artifacts": {name: sha256_file(run_dir / name) for name in sorted(artifacts)},
    }
    write_json(run_dir / MANIFEST, manifest)
    return manifest


# ---------------------------------------------------------------------------
# Commands. Each returns (artifact names, status).


def _discrete_members(config: dict) -> list:
    """Discrete (spectrum, coupling) pairs for the configured tag."""
    base = make_spectrum(config["tag"], config["n"], seed=config["seed"], radius_target=config["radius"])
    if base.domain == "discrete":
        return [(base, None)]
    return [discretize(base, d) for d in _grid_values(config)]


def cmd_spectra(config: dict, run_dir: Path):
    s = make_spectrum(config["tag"], config["n"], seed=config["seed"], radius_target=config["radius"])
    if s.domain == "continuous" and config.get("delta") is not None:
        s, _ = discretize(s, config["delta"])
    (run_dir / "spectrum.json").write_text(s.to_json() + "\n")
    write_csv(
        run_dir / "eigenvalues.csv",
        ["index", "real", "imag", "abs"],
        [(i, z.real, z.imag, abs(z)) for i, z in enumerate(s.eigenvalues)],
    )
    return ["spectrum.json", "eigenvalues.csv"], "ok"


def cmd_simulate(config: dict, run_dir: Path):
    s, c = _discrete_members(config)[0]
    u = gen_uniform_input(config["T"] + config["washout"], config["seed"])
    traj = simulate(s, c, u, config["washout"])
    summary = {
        "T": traj.T,
        "n": traj.n,
        "spectral_radius": spectral_radius(s),
        "state_rms": np.sqrt(np.mean(np.abs(traj.states) ** 2, axis=0)),
        "spectrum": s.to_dict(),
    }
    write_json(run_dir / "trajectory.json", summary)
    artifacts = ["trajectory.json"]
    if config.get("dump_states"):
        header = ["t"] + [f"{p}_{i}" for i in range(traj.n) for p in ("re", "im")]
        rows = (
            [t] + [v for z in row for v in (z.real, z.imag)] for t, row in enumerate(traj.states)
        )
        write_csv(run_dir / "states.csv", header, rows)
        artifacts.append("states.csv")
    return artifacts, "ok"


def cmd_mf(config: dict, run_dir: Path):
    members = _discrete_members(config)
    u = gen_uniform_input(config["T"] + config["washout"], config["seed"])
    curves = []
    for s, c in members:
        traj = simulate(s, c, u, config["washout"])
        curves.append(
            memory_function(traj, config["tau_max"], config["surrogates"], config["threshold"], config["seed"])
        )
    sup = layer_sup_mf(curves)
    avg = layer_avg_mf(curves)
    truncated = np.zeros(sup.values.shape[0], dtype=bool)
    for cur in curves:
        truncated |= (cur.values == 0) & (np.clip(cur.raw, 0, 1) > 0)
    truncated &= sup.values == 0
    write_csv(
        run_dir / "mf.csv",
        ["tau", "value", "truncated"],
        [(t, v, bool(tr)) for t, (v, tr) in enumerate(zip(sup.values, truncated))],
    )
    data = {
        "tag": config["tag"],
        "n": config["n"],
        "deltas": [s.delta for s, _ in members],
        "supremum": sup.to_dict(),
        "average": avg.to_dict(),
        "members": [
            {"delta": s.delta, "mc": mc_sum(cur), **cur.to_dict()} for (s, _), cur in zip(members, curves)
        ],
        "mc_supremum": mc_sum(sup),
        "count_above_0.1": int(np.sum(sup.values > 0.1)),
    }
    write_json(run_dir / "mf.json", data)
    return ["mf.csv", "mf.json"], "ok"


def cmd_vandermonde(config: dict, run_dir: Path):
    members = _discrete_members(config)
    diags = [singular_diagnostics(vandermonde(s, config["T"])) for s, _ in members]
    data = {
        "tag": config["tag"],
        "n": config["n"],
        "T": config["T"],
        "members": [{"delta": s.delta, **d.to_dict()} for (s, _), d in zip(members, diags)],
        "effective_rank": max(d.effective_rank for d in diags),
    }
    write_json(run_dir / "vandermonde.json", data)
    rows = [(m, i, sv) for m, d in enumerate(diags) for i, sv in enumerate(d.singular_values)]
    write_csv(run_dir / "singular_values.csv", ["member", "index", "sigma"], rows)
    return ["vandermonde.json", "singular_values.csv"], "ok"


def cmd_gradcheck(config: dict, run_dir: Path):
    s, c = _discrete_members(config)[0]
    T, tau, h = config["T"], config["tau"], config["fd_step"]
    washout = max(2 * T, tau)
    u = gen_uniform_input(T + washout, config["seed"])
    traj = simulate(s, c, u, washout)
    feats = traj.features()
    target = TargetSpec.delay(tau)
    y = target.materialize(u, washout, T)
    rng = np.random.default_rng(config["seed"])
    theta = rng.standard_normal(feats.shape[1])
    errs = {}
    for act in ("identity", "tanh"):
        g = (grad_linear(feats, theta, y) if act == "identity" else grad_nonlinear(feats, theta, y, act)).g
        g_fd = finite_diff_grad(lambda th: mse_loss(feats, th, y, act), theta, h).g
        errs[act] = float(np.linalg.norm(g - g_fd) / np.linalg.norm(g_fd))
    report = {
        "instance": {"spectrum": s.to_dict(), "T": T, "tau": tau, "seed": config["seed"], "fd_step": h},
        "rel_err": errs,
        "max_rel_err": max(errs.values()),
    }
    terms = analytic_terms(s, c, target.alpha, T)
    report["teacher_term_norm"] = float(np.linalg.norm(terms.teacher))
    report["alpha_norm"] = float(np.linalg.norm(target.alpha))
    report["gram_cond"] = terms.gram_cond
    try:
        ts = theta_star(s, c, target.alpha, T)
        report["fixed_point_residual"] = fixed_point_residual(s, c, ts, target.alpha, T=T)
        report["unstable"] = False
    except UnstableSpectrumError as err:
        report["fixed_point_residual"] = None
        report["unstable"] = True
        report["unstable_reason"] = str(err)
    write_json(run_dir / "gradcheck.json", report)
    return ["gradcheck.json"], "ok"


def _train_cfg(config: dict, mode: str, seed: int) -> TrainConfig:
    return TrainConfig(
        mode=mode,
        optimizer=config["optimizer"],
        lr_readout=config["lr_readout"],
        lr_eig=config["lr_eig"],
        epochs=config["epochs"],
        seed=seed,
        activation=config["activation"],
        batch_size=config["batch_size"],
        eig_param=config["eig_param"],
    )


def cmd_train(config: dict, run_dir: Path):
    task = _make_task(parse_task(config["task"]), config["T"], config["seed"], config["washout"])
    model = build_model(
        config["tag"], config["n"], config["T"], config["seed"], _grid_values(config),
        config["radius"], task.washout, config["activation"],
    )
    run = train(model, task, _train_cfg(config, config["mode"], config["seed"]))
    write_csv(
        run_dir / "history.csv",
        ["epoch", "train_mse", "test_mse"],
        [(i + 1, a, b) for i, (a, b) in enumerate(zip(run.train_loss, run.test_loss))],
    )
    data = run.to_dict()
    data["epochs_to_0.01"] = run.epochs_to_threshold(0.01)
    data["final_test_mse"] = run.final_test_mse if run.test_loss else None
    write_json(run_dir / "run.json", data)
    return ["history.csv", "run.json"], ("diverged" if run.divergence_flag else "ok")


def cmd_compare(config: dict, run_dir: Path):
    setup = CompareSetup(
        n=config["n"], T=config["T"], deltas=_grid_values(config, "s4dlin"),
        radius=config["radius"], washout=config["washout"],
    )
    result = compare_settings(
        config["tags"], [config["task"]], list(range(config["seeds"])),
        _train_cfg(config, "rc", 0), setup, config["modes"], config.get("workers", 1),
    )
    write_csv(
        run_dir / "comparison.csv",
        ["tag", "mode", "seed", "final_mse", "epochs_to_0.01", "diverged"],
        [(r["tag"], r["mode"], r["seed"], r["final_mse"], r["epochs_to_0.01"], r["diverged"]) for r in result["rows"]],
    )
    write_json(run_dir / "summary.json", {"task": config["task"], "summary": result["summary"]})
    return ["comparison.csv", "summary.json"], "ok"


COMMAND_FUNCS = {
    "spectra": cmd_spectra,
    "simulate": cmd_simulate,
    "mf": cmd_mf,
    "vandermonde": cmd_vandermonde,
    "gradcheck": cmd_gradcheck,
    "train": cmd_train,
    "compare": cmd_compare,
}


# ---------------------------------------------------------------------------
# Report


def _check(lines: list, name: str, ok: bool, detail: str) -> dict:
    lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return {"check": name, "pass": bool(ok), "detail": detail}


def build_report(target: Path) -> tuple[dict, str, list]:
    """Aggregate every run under ``target`` into a summary.

    Returns
    -------
    (summary dict, markdown text, list of problems)
        Problems are missing manifests, missing artifacts or checksum mismatches.
    """
    manifests = sorted(p for p in Path(target).glob("*/" + MANIFEST))
    manifests = [p for p in manifests if json.loads(p.read_text()).get("command") != "report"]
    if not manifests:
        return {}, "", ["no manifests found"]
    problems = []
    checks = []
    lines: list[str] = []
    md = ["# Run summary", ""]
    sections = {"mf": [], "vandermonde": [], "gradcheck": [], "train": [], "compare": [], "other": []}
    for path in manifests:
        man = json.loads(path.read_text())
        run_dir = path.parent
        missing = [a for a in man["artifacts"] if not (run_dir / a).exists()]
        bad = [a for a in man["artifacts"] if a not in missing and sha256_file(run_dir / a) != man["artifacts"][a]]
        problems += [f"{run_dir.name}: missing {a}" for a in missing]
        problems += [f"{run_dir.name}: checksum mismatch {a}" for a in bad]
        if missing or bad:
            continue
        cmd = man["command"]
        sections.get(cmd, sections["other"]).append((run_dir, man))

    for run_dir, man in sections["mf"]:
        data = json.loads((run_dir / "mf.json").read_text())
        vals = np.array(data["supremum"]["values"])
        n = data["n"]
        md += [f"## Memory function: {data['tag']} (N={n}, deltas={data['deltas']})", ""]
        md += [f"- run: `{run_dir.name}`", f"- MC (supremum curve): {data['mc_supremum']:.6g}"]
        md += [f"- truncation index: {data['supremum']['truncation_index']}",
               f"- delays with MF > 0.1: {data['count_above_0.1']}", ""]
        md += ["| tau | MF |", "|---|---|"] + [f"| {t} | {v:.6g} |" for t, v in enumerate(vals) if v > 0] + [""]
        checks.append(_check(lines, f"mf-range {run_dir.name}", bool(np.all((vals >= -1e-6) & (vals <= 1 + 1e-6))),
                             f"min={vals.min():.3g} max={vals.max():.3g}"))
        worst = max(m["mc"] for m in data["members"])
        checks.append(_check(lines, f"mc-bound {run_dir.name}", worst <= n + 1e-3, f"max member MC={worst:.6g}, N={n}"))

    if sections["vandermonde"]:
        md += ["## Vandermonde ranks", "", "| run | tag | N | T | effective rank |", "|---|---|---|---|---|"]
        for run_dir, man in sections["vandermonde"]:
            data = json.loads((run_dir / "vandermonde.json").read_text())
            md.append(f"| `{run_dir.name}` | {data['tag']} | {data['n']} | {data['T']} | {data['effective_rank']} |")
            checks.append(_check(lines, f"rank-bound {run_dir.name}", data["effective_rank"] <= data["n"],
                                 f"rank={data['effective_rank']}, N={data['n']}"))
        md.append("")

    if sections["gradcheck"]:
        md += ["## Gradient checks", "", "| run | max rel. err | fixed-point residual | teacher term norm |",
               "|---|---|---|---|"]
        for run_dir, man in sections["gradcheck"]:
            data = json.loads((run_dir / "gradcheck.json").read_text())
            md.append(f"| `{run_dir.name}` | {data['max_rel_err']:.3g} | {data['fixed_point_residual']} | "
                      f"{data['teacher_term_norm']:.3g} |")
            checks.append(_check(lines, f"finite-difference {run_dir.name}", data["max_rel_err"] < 1e-4,
                                 f"max_rel_err={data['max_rel_err']:.3g}"))
            if data["fixed_point_residual"] is not None:
                checks.append(_check(lines, f"fixed-point {run_dir.name}", data["fixed_point_residual"] < 1e-8,
                                     f"residual={data['fixed_point_residual']:.3g}"))
        md.append("")

    if sections["train"]:
        md += ["## Training runs", "", "| run | tag | mode | final test MSE | epochs to 0.01 | diverged |",
               "|---|---|---|---|---|---|"]
        for run_dir, man in sections["train"]:
            data = json.loads((run_dir / "run.json").read_text())
            cfg = man["config"]
            md.append(f"| `{run_dir.name}` | {cfg['tag']} | {cfg['mode']} | {data['final_test_mse']} | "
                      f"{data['epochs_to_0.01']} | {data['divergence_flag']} |")
        md.append("")

    for run_dir, man in sections["compare"]:
        data = json.loads((run_dir / "summary.json").read_text())
        md += [f"## Comparison ({data['task']})", "", "| tag | mode | min MSE | max MSE | mean MSE | "
               "median epochs to 0.01 | divergences |", "|---|---|---|---|---|---|---|"]
        by_key = {}
        for row in data["summary"]:
            by_key[(row["tag"], row["mode"])] = row
            md.append(f"| {row['tag']} | {row['mode']} | {row['min_mse']} | {row['max_mse']} | {row['mean_mse']} | "
                      f"{row['median_epochs_to_0.01']} | {row['divergence_count']} |")
        md.append("")
        for (tag, mode), row in by_key.items():
            if mode == "rc" and (tag, "trainable_eig") in by_key:
                rc_ep = row["median_epochs_to_0.01"]
                tr_ep = by_key[(tag, "trainable_eig")]["median_epochs_to_0.01"]
                checks.append(_check(lines, f"rc-not-slower {tag} {run_dir.name}", rc_ep <= tr_ep,
                                     f"median epochs rc={rc_ep} trainable={tr_ep}"))

    if sections["other"]:
        md += ["## Other runs", ""] + [f"- `{d.name}` ({m['command']})" for d, m in sections["other"]] + [""]
    md += ["## Checks", ""] + [f"- {line}" for line in lines] + [""]
    summary = {
        "runs": [{"dir": d.name, "command": m["command"]} for s in sections.values() for d, m in s],
        "checks": checks,
        "problems": problems,
    }
    return summary, "\n".join(md), problems


def cmd_report(config: dict, run_dir: Path):
    summary, text, problems = build_report(Path(config["target_dir"]))
    if not summary:
        raise ConfigError("; ".join(problems))
    (run_dir / "summary.md").write_text(text)
    write_json(run_dir / "summary.json", summary)
    for check in summary["checks"]:
        print(f"{'PASS' if check['pass'] else 'FAIL'} {check['check']}: {check['detail']}")
    if problems:
        raise ConfigError("missing artifacts: " + "; ".join(problems))
    return ["summary.md", "summary.json"], "ok"


COMMAND_FUNCS["report"] = cmd_report


# ---------------------------------------------------------------------------
# Argument parsing


def _grid_arg(text: str) -> list:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected DT_MIN,DT_MAX,COUNT")
    return [float(parts[0]), float(parts[1]), int(parts[2])]


def _list_arg(text: str) -> list:
    return [t for t in text.split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssmmem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, spectrum=True):
        p.add_argument("--config", help="ExperimentConfig JSON or a run manifest to re-execute")
        p.add_argument("--out-dir", dest="output_dir", help=f"output root (default ${OUTPUT_ENV} or ./{DEFAULT_ROOT})")
        if spectrum:
            p.add_argument("--tag", choices=["s4dinv", "s4dlin", "random", "lin", "step"])
            p.add_argument("--n", type=int)
            p.add_argument("--delta", type=float)
            p.add_argument("--radius", type=float)
            p.add_argument("--seed", type=int)

    p = sub.add_parser("spectra", help="build a spectrum and write it as JSON")
    common(p)

    p = sub.add_parser("simulate", help="simulate a diagonal system")
    common(p)
    p.add_argument("--T", type=int)
    p.add_argument("--washout", type=int)
    p.add_argument("--dump-states", dest="dump_states", action="store_const", const=True)

    p = sub.add_parser("mf", help="memory function with surrogate truncation")
    common(p)
    p.add_argument("--T", type=int)
    p.add_argument("--washout", type=int)
    p.add_argument("--delta-grid", dest="delta_grid", type=_grid_arg, metavar="DT_MIN,DT_MAX,COUNT")
    p.add_argument("--tau-max", dest="tau_max", type=int)
    p.add_argument("--surrogates", type=int)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("vandermonde", help="singular values of the eigenvalue-power matrix")
    common(p)
    p.add_argument("--T", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference and fixed-point gradient checks")
    common(p)
    p.add_argument("--T", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--fd-step", dest="fd_step", type=float)

    def training(p):
        p.add_argument("--T", type=int)
        p.add_argument("--washout", type=int)
        p.add_argument("--delta-grid", dest="delta_grid", type=_grid_arg, metavar="DT_MIN,DT_MAX,COUNT")
        p.add_argument("--task", help="delay:TAU or combo:D=W,D=W,...")
        p.add_argument("--optimizer", choices=["sgd", "adam"])
        p.add_argument("--lr-readout", dest="lr_readout", type=float)
        p.add_argument("--lr-eig", dest="lr_eig", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--activation", choices=["identity", "tanh"])
        p.add_argument("--eig-param", dest="eig_param", choices=["exp", "direct"])

    p = sub.add_parser("train", help="train one model")
    common(p)
    training(p)
    p.add_argument("--mode", choices=["rc", "trainable_eig"])

    p = sub.add_parser("compare", help="rc versus trainable eigenvalues over tags and seeds")
    p.add_argument("--config")
    p.add_argument("--out-dir", dest="output_dir")
    p.add_argument("--tags", type=_list_arg)
    p.add_argument("--n", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--radius", type=float)
    p.add_argument("--seeds", type=int, help="number of seeds (0 .. SEEDS-1)")
    p.add_argument("--modes", type=_list_arg)
    p.add_argument("--workers", type=int)
    training(p)

    p = sub.add_parser("report", help="aggregate all runs in a directory")
    p.add_argument("target_dir")
    p.add_argument("--out-dir", dest="output_dir", help="where to write the report (default: TARGET_DIR)")
    return parser


def _load_config_file(path: Optional[str]) -> Optional[dict]:
    if path is None:
        return None
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Execute one CLI invocation and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        file_config = _load_config_file(getattr(args, "config", None))
        if args.command == "report" and flags.get("output_dir") is None:
            flags["output_dir"] = flags["target_dir"]
        config = resolve_config(args.command, file_config, flags)
        run_dir = output_root(config) / f"{args.command}-{config_hash(config)[:12]}"
        run_dir.mkdir(parents=True, exist_ok=True)
        artifacts, status = COMMAND_FUNCS[args.command](config, run_dir)
        write_manifest(run_dir, config, artifacts, status)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (DivergenceError, UnstableSpectrumError, FloatingPointError, ArithmeticError) as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    print(run_dir)
    if status == "diverged":
        print("numerical abort: training diverged", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
