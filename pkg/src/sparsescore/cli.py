"""Command-line entry point.

Subcommands, one per experiment class:

* ``train`` — fit a model on samples from the configured target.
* ``sample`` — run the Langevin sampler from a checkpoint.
* ``eval`` — score error and sample-quality metrics for a checkpoint.
* ``toy`` — the paired 3D anisotropy experiment with path plots.
* ``sweep`` — the Gaussian-Uniform grid with a dominance table.
* ``audit`` — tilting-factor residuals and the convergence-bound terms.

Configuration comes from ``section.key = value`` files plus ``--set``
overrides; ``--help`` lists every key with its default.  All outputs are
plain CSV/JSON/SVG under a per-run directory, and each run writes a
``report.json`` with the resolved config hash for reproducibility.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np

from .config import describe_keys, resolve_config
from .experiments import (
    build_arch,
    build_discrete,
    build_target,
    build_train_cfg,
    build_ve,
    shrinkage_curve,
    sweep_experiment,
    tilting_table,
    toy_experiment,
)
from .metrics import bound_audit, kl_knn, score_error
from .reporting import metric_record, new_report, run_dir, write_matrix_csv
from .sampler import langevin_sample, oracle_score, save_trajectories
from .scorenet import load_checkpoint, save_checkpoint
from .targets import Gaussian, kl_gaussian_moments
from .trainer import train


# --------------------------------------------------------------------------
# data ingestion
# --------------------------------------------------------------------------


def ingest(path, fmt: str) -> np.ndarray:
    """Load a sample matrix from ``csv`` or IDX ``idx`` files.

    CSV: one sample per row, plain decimal floats.  IDX: the ubyte
    tensor format; samples are flattened row-major and scaled to [0, 1].
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if fmt == "csv":
        data = np.loadtxt(path, delimiter=",", ndmin=2)
        return data
    if fmt == "idx":
        raw = path.read_bytes()
        if len(raw) < 4:
            raise ValueError("idx file too short for a header")
        zero0, zero1, dtype, ndim = struct.unpack(">BBBB", raw[:4])
        if zero0 != 0 or zero1 != 0:
            raise ValueError("bad idx magic bytes")
        if dtype != 0x08:
            raise ValueError(f"unsupported idx dtype 0x{dtype:02x} (expected ubyte 0x08)")
        header_len = 4 + 4 * ndim
        if len(raw) < header_len:
            raise ValueError("idx header truncated")
        dims = struct.unpack(f">{ndim}I", raw[4:header_len])
        count = int(np.prod(dims))
        payload = raw[header_len:]
        if len(payload) != count:
            raise ValueError(f"idx payload holds {len(payload)} bytes, expected {count}")
        tensor = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
        flat = tensor.reshape(dims[0], -1) if ndim > 1 else tensor.reshape(-1, 1)
        return flat.astype(float) / 255.0
    raise ValueError(f"unknown ingest format {fmt!r}")


def dump_csv(path, matrix: np.ndarray) -> None:
    """Plain decimal CSV dump, one sample per row, exact round trip."""
    with open(path, "w", encoding="utf-8") as f:
        for row in np.atleast_2d(matrix):
            f.write(",".join(repr(float(v)) for v in row))
            f.write("\n")


# --------------------------------------------------------------------------
# plotting (reads only emitted artifacts)
# --------------------------------------------------------------------------


def plot_toy_svg(out_path, data_csv, baseline_traj, regularized_traj, n_paths: int = 8) -> None:
    """Three-panel figure: data cloud, baseline paths, regularized paths.

    Consumes only the already-written artifacts so that plotting can
    never change the numbers a run reports.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .sampler import load_trajectories

    data = np.loadtxt(data_csv, delimiter=",", ndmin=2)
    fig = plt.figure(figsize=(13, 4.2))
    panels = [("data", None), ("plain score matching", baseline_traj),
              ("scale-regularized", regularized_traj)]
    for i, (title, traj_path) in enumerate(panels, start=1):
        ax = fig.add_subplot(1, 3, i, projection="3d")
        ax.scatter(data[:, 0], data[:, 1], data[:, 2], s=3, c="red", alpha=0.25,
                   label="data")
        if traj_path is not None:
            traj, _ = load_trajectories(traj_path)
            k = min(n_paths, traj.shape[0])
            for c in range(k):
                ax.plot(traj[c, :, 0], traj[c, :, 1], traj[c, :, 2],
                        lw=0.8, c="darkred", alpha=0.8)
            ax.scatter(traj[:k, 0, 0], traj[:k, 0, 1], traj[:k, 0, 2],
                       s=25, c="blue", label="start")
            ax.scatter(traj[:k, -1, 0], traj[:k, -1, 1], traj[:k, -1, 2],
                       s=25, c="green", label="final")
        ax.set_title(title)
        ax.set_xlabel("x"); ax.set_ylabel("y"); ax.set_zlabel("z")
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_train(cfg, args) -> int:
    report = new_report("train", cfg)
    out = run_dir(cfg, report, args.out)
    target = build_target(cfg)
    if args.data:
        data = ingest(args.data, args.format)
        if data.shape[1] != target.dim:
            raise ValueError(
                f"ingested dimension {data.shape[1]} != target.dim {target.dim}"
            )
    else:
        data = target.sample(cfg["target.n"], np.random.default_rng(cfg["train.seed"] + 555_000))
    ve = build_ve(cfg)
    tcfg = build_train_cfg(cfg)

    every = cfg["train.checkpoint_every"]

    def checkpoint_cb(epoch, model):
        if every > 0 and (epoch + 1) % every == 0:
            save_checkpoint(model, out / f"checkpoint_epoch{epoch + 1:05d}.json", cfg.hash())

    model, history = train(data, tcfg, ve, build_arch(cfg), callback=checkpoint_cb)

    ckpt = out / "checkpoint.json"
    save_checkpoint(model, ckpt, cfg.hash())
    log_path = out / "training_log.csv"
    write_matrix_csv(
        log_path,
        ["epoch", "step", "fit_term", "reg_term", "total", "kappa"],
        ((rec.epoch, rec.step, rec.fit_term, rec.reg_term, rec.total, rec.kappa)
         for rec in history.records),
    )
    data_path = out / "data.csv"
    dump_csv(data_path, data)
    fit = history.fit_curve()
    summary = {
        "final_kappa": model.kappa,
        "fit_term_median_last_decile": float(np.median(fit[-max(1, len(fit) // 10):])),
        "fit_term_median_first_epoch": float(np.median(fit[: max(1, len(fit) // tcfg.epochs)])),
        "epochs": tcfg.epochs,
        "seed": tcfg.seed,
        "config_hash": cfg.hash(),
        "config": {k: v if not isinstance(v, tuple) else list(v) for k, v in cfg.as_dict().items()},
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2), encoding="utf-8")
    report.metrics.append(metric_record("final_kappa", model.kappa, tcfg.seed, r=tcfg.r))
    for p in (ckpt, log_path, data_path, summary_path):
        report.add_artifact(p)
    report.write(out, cfg)
    print(f"trained model -> {ckpt} (kappa={model.kappa:.4f})")
    return 0


def cmd_sample(cfg, args) -> int:
    report = new_report("sample", cfg)
    out = run_dir(cfg, report, args.out)
    model = load_checkpoint(args.checkpoint)
    ve = build_ve(cfg)
    run = langevin_sample(
        model.effective_score, ve,
        T=cfg["sampler.steps"], n=cfg["sampler.chains"], dim=model.dim,
        seed=cfg["train.seed"], record=cfg["sampler.record"],
    )
    finals_path = out / "finals.csv"
    dump_csv(finals_path, run.finals)
    report.add_artifact(finals_path)
    if run.trajectories is not None:
        traj_path = out / "trajectories.bin"
        save_trajectories(run, traj_path)
        report.add_artifact(traj_path)
    if run.diverged:
        print(f"warning: {len(run.diverged)} chains diverged", file=sys.stderr)
    report.metrics.append(
        metric_record("diverged_chains", len(run.diverged), run.seed, T=run.T, n=run.n)
    )
    report.write(out, cfg)
    print(f"samples -> {finals_path}")
    return 0


def cmd_eval(cfg, args) -> int:
    report = new_report("eval", cfg)
    out = run_dir(cfg, report, args.out)
    target = build_target(cfg)
    ve = build_ve(cfg)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        score = model.effective_score
        label = "model"
    else:
        score = oracle_score(target, ve)
        label = "oracle"
    rng = np.random.default_rng(cfg["train.seed"] + 99)
    err = score_error(score, target, ve, n_t=40, n_x=cfg["metrics.n_mc"] // 40 + 1, rng=rng)
    run = langevin_sample(score, ve, T=cfg["sampler.steps"], n=cfg["sampler.chains"],
                          dim=target.dim, seed=cfg["train.seed"] + 1)
    ok = np.all(np.isfinite(run.finals), axis=1)
    if isinstance(target, Gaussian):
        kl = kl_gaussian_moments(run.finals[ok], target)
        kl_name = "kl_moment_matched"
    else:
        ref = target.sample(int(ok.sum()), np.random.default_rng(4242))
        kl = kl_knn(ref, run.finals[ok], k=cfg["metrics.knn_k"])
        kl_name = "kl_knn"
    seed = cfg["train.seed"]
    report.metrics.append(metric_record("score_error", err, seed, source=label))
    report.metrics.append(metric_record(kl_name, kl, seed, T=cfg["sampler.steps"]))
    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps(report.metrics, indent=2), encoding="utf-8")
    report.add_artifact(metrics_path)
    report.write(out, cfg)
    print(f"score_error={err:.6f}  {kl_name}={kl:.6f}")
    return 0


def cmd_toy(cfg, args) -> int:
    report = new_report("toy", cfg)
    out = run_dir(cfg, report, args.out)
    result = toy_experiment(cfg)

    data_path = out / "data.csv"
    dump_csv(data_path, result.data)
    artifacts = [data_path]
    stats_rows = []
    traj_paths = {}
    for name, run in (("baseline", result.baseline), ("regularized", result.regularized)):
        finals_path = out / f"{name}_finals.csv"
        dump_csv(finals_path, run.sample_run.finals)
        traj_path = out / f"{name}_trajectories.bin"
        save_trajectories(run.sample_run, traj_path)
        traj_paths[name] = traj_path
        artifacts += [finals_path, traj_path]
        per_axis = run.displacement["per_axis"]
        stats_rows.append(
            [name, run.r, run.kl, run.model.kappa,
             run.displacement["ratio_first_vs_rest"], *per_axis.tolist()]
        )
        report.metrics.append(metric_record("kl_moment_matched", run.kl, run.seed, r=run.r))
        report.metrics.append(
            metric_record("displacement_ratio", run.displacement["ratio_first_vs_rest"],
                          run.seed, r=run.r)
        )
    d = result.data.shape[1]
    stats_path = out / "displacement_stats.csv"
    write_matrix_csv(
        stats_path,
        ["run", "r", "kl", "kappa", "ratio_first_vs_rest"] + [f"mean_abs_step_axis{i}" for i in range(d)],
        stats_rows,
    )
    artifacts.append(stats_path)
    svg_path = out / "toy.svg"
    plot_toy_svg(svg_path, data_path, traj_paths["baseline"], traj_paths["regularized"])
    artifacts.append(svg_path)
    for p in artifacts:
        report.add_artifact(p)
    report.write(out, cfg)
    gap = result.ratio_gap
    print(
        f"baseline: KL={result.baseline.kl:.4f} ratio={result.baseline.displacement['ratio_first_vs_rest']:.5f}\n"
        f"regularized: KL={result.regularized.kl:.4f} ratio={result.regularized.displacement['ratio_first_vs_rest']:.5f}\n"
        f"ratio gap (reg - base) = {gap:+.5f}"
    )
    return 0


def cmd_sweep(cfg, args) -> int:
    report = new_report("sweep", cfg)
    out = run_dir(cfg, report, args.out)

    def progress(cell):
        status = f"kl={cell.kl:.4f}" if cell.kl is not None else f"FAILED: {cell.error}"
        print(f"  cell s={cell.s} r={cell.r} seed={cell.seed}: {status}", flush=True)

    result = sweep_experiment(cfg, progress=progress)
    T = cfg["sampler.steps"]
    cells_path = out / "sweep.csv"
    write_matrix_csv(
        cells_path,
        ["r", "T", "s", "seed", "kl", "kappa"],
        ((c.r, T, c.s, c.seed, np.nan if c.kl is None else c.kl,
          np.nan if c.kappa is None else c.kappa) for c in result.cells),
    )
    r_values = tuple(cfg["sweep.r_values"])
    r_base = min(r_values)
    r_reg = max(r_values)
    rows = result.dominance_rows(r_base, r_reg)
    dom_path = out / "dominance.csv"
    write_matrix_csv(
        dom_path,
        ["s", "baseline_kl", "baseline_se", "regularized_kl", "regularized_se", "regularized_wins"],
        ((row["s"], row["baseline_kl"], row["baseline_se"], row["regularized_kl"],
          row["regularized_se"], int(row["regularized_wins"])) for row in rows),
    )
    for c in result.cells:
        if c.kl is not None:
            report.metrics.append(
                metric_record("kl_knn", c.kl, c.seed, r=c.r, T=T, s=c.s)
            )
    failures = [c for c in result.cells if c.error]
    if failures:
        fail_path = out / "failures.json"
        fail_path.write_text(json.dumps(
            [{"s": c.s, "r": c.r, "seed": c.seed, "error": c.error} for c in failures],
            indent=2), encoding="utf-8")
        report.add_artifact(fail_path)
    report.add_artifact(cells_path)
    report.add_artifact(dom_path)
    report.write(out, cfg)
    print(f"sweep table -> {dom_path}")
    for row in rows:
        print(
            f"  s={row['s']}: baseline {row['baseline_kl']:.4f}+-{row['baseline_se']:.4f} "
            f"regularized {row['regularized_kl']:.4f}+-{row['regularized_se']:.4f} "
            f"{'<-- regularized wins' if row['regularized_wins'] else ''}"
        )
    return 0


def cmd_audit(cfg, args) -> int:
    report = new_report("audit", cfg)
    out = run_dir(cfg, report, args.out)
    rows = tilting_table(cfg)
    rows_perturbed = tilting_table(cfg, score_shift=0.1)
    tilt_path = out / "tilting.csv"
    write_matrix_csv(
        tilt_path,
        ["t", "residual_exact_score", "residual_shifted_score"],
        ((t, r0, r1) for (t, r0), (_, r1) in zip(rows, rows_perturbed)),
    )
    target = build_target(cfg)
    ve = build_ve(cfg)
    disc = build_discrete(cfg)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        score = model.effective_score
        kappa = model.kappa
    else:
        score = oracle_score(target, ve)
        kappa = 1.0
    audit = bound_audit(
        score, target, ve, disc, r=cfg["objective.r"],
        n_mc=cfg["metrics.n_mc"], seed=cfg["train.seed"], kappa=kappa,
    )
    audit_doc = {
        "init_term": audit.init_term,
        "reverse_term": audit.reverse_term,
        "estimation_term": audit.estimation_term,
        "kl_measured": audit.kl_measured,
        "s": audit.s,
        "B": audit.B,
        "M": audit.M,
        "unresolved": list(audit.unresolved),
        "note": "computable terms are reported, the inequality is not asserted",
    }
    audit_path = out / "bound_audit.json"
    audit_path.write_text(json.dumps(audit_doc, indent=2), encoding="utf-8")
    max_resid = max(r for _, r in rows)
    report.metrics.append(metric_record("tilting_residual_max", max_resid, cfg["train.seed"], T=disc.T))
    report.metrics.append(metric_record("kl_measured", audit.kl_measured, cfg["train.seed"], T=disc.T))
    report.add_artifact(tilt_path)
    report.add_artifact(audit_path)
    report.write(out, cfg)
    print(f"tilting residual max over t: {max_resid:.3e}")
    print(f"bound audit -> {audit_path}")
    return 0


def cmd_shrinkage(cfg, args) -> int:
    """Extra orchestration: kappa-vs-r curve with paired seeds."""
    report = new_report("shrinkage", cfg)
    out = run_dir(cfg, report, args.out)
    r_values = [float(v) for v in args.r_values.split(",")]
    curve = shrinkage_curve(cfg, r_values)
    path = out / "shrinkage.csv"
    write_matrix_csv(path, ["r", "kappa"], curve)
    for r, kappa in curve:
        report.metrics.append(metric_record("final_kappa", kappa, cfg["train.seed"], r=r))
    report.add_artifact(path)
    report.write(out, cfg)
    for r, kappa in curve:
        print(f"  r={r:g}: kappa={kappa:.4f}")
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _load_config(args) -> "RunConfig":
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return resolve_config(text, overrides)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sparse-score",
        description=__doc__,
        epilog="configuration keys (override with --set key=value):\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="path to a section.key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", help="output root (overrides SPARSE_SCORE_OUT)")

    p_train = sub.add_parser("train", help="train a score model on the configured target")
    common(p_train)
    p_train.add_argument("--data", help="ingest training data instead of sampling the target")
    p_train.add_argument("--format", choices=("csv", "idx"), default="csv")
    p_train.set_defaults(func=cmd_train)

    p_sample = sub.add_parser("sample", help="Langevin-sample from a checkpoint")
    common(p_sample)
    p_sample.add_argument("--checkpoint", required=True)
    p_sample.add_argument("--steps", type=int, help="shortcut for --set sampler.steps=N")
    p_sample.add_argument("--chains", type=int, help="shortcut for --set sampler.chains=N")
    p_sample.add_argument("--record", action="store_true", help="record trajectories")
    p_sample.add_argument("--seed", type=int, help="shortcut for --set train.seed=N")
    p_sample.set_defaults(func=cmd_sample)

    p_eval = sub.add_parser("eval", help="score error and sampling KL for a checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", help="model checkpoint (omit to audit the oracle)")
    p_eval.set_defaults(func=cmd_eval)

    p_toy = sub.add_parser("toy", help="3D anisotropy experiment (baseline vs regularized)")
    common(p_toy)
    p_toy.set_defaults(func=cmd_toy)

    p_sweep = sub.add_parser("sweep", help="Gaussian-Uniform sparsity sweep with dominance table")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_audit = sub.add_parser("audit", help="tilting residuals and convergence-bound terms")
    common(p_audit)
    p_audit.add_argument("--checkpoint", help="audit a trained model instead of the oracle")
    p_audit.set_defaults(func=cmd_audit)

    p_shr = sub.add_parser("shrinkage", help="final kappa across tuning parameters (paired seed)")
    common(p_shr)
    p_shr.add_argument("--r-values", default="0.0001,0.001,0.01")
    p_shr.set_defaults(func=cmd_shrinkage)

    args = parser.parse_args(argv)
    cfg = _load_config(args)

    # flag shortcuts map onto config keys
    if getattr(args, "steps", None) is not None:
        cfg = resolve_config("", {**dict(cfg.values), "sampler.steps": args.steps})
    if getattr(args, "chains", None) is not None:
        cfg = resolve_config("", {**dict(cfg.values), "sampler.chains": args.chains})
    if getattr(args, "record", False):
        cfg = resolve_config("", {**dict(cfg.values), "sampler.record": True})
    if getattr(args, "seed", None) is not None:
        cfg = resolve_config("", {**dict(cfg.values), "train.seed": args.seed})

    return args.func(cfg, args)


if __name__ == "__main__":
    sys.exit(main())
