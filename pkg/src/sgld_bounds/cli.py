"""Command-line entry point: ``sgld-bounds {run,certify,lab,experiment,sweep,demo}``.

Every subcommand reads one JSON config document, writes its artifacts
atomically into ``--out`` and finishes by writing ``manifest.json``.  The
manifest embeds the resolved config (and any consumed input data), so
passing it back through ``--config`` replays the invocation.

Exit status: 0 on success, 1 when the config or inputs fail validation,
2 when the computation itself fails.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .certificates import VARIANTS, GradSqEstimate, all_certificates
from .config import ConfigError
from .density_lab.checks import lab_verify
from .experiments import (
    FenceConfig,
    SweepPoint,
    data_averaged_gap,
    default_probes,
    fence_demo,
    stability_probe,
    sweep_report,
    write_sweep_csv,
)
from .langevin import DivergenceError, SgldConfig, Trajectory, run_replicas
from .problems import draw_points, neighbor_of

COMMANDS = ("run", "certify", "lab", "experiment", "sweep", "demo")
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


# ---------------------------------------------------------------------------
# artifact plumbing


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def config_hash(doc: dict) -> str:
    return _sha256_bytes(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode())


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n"


class ArtifactWriter:
    """Writes files into ``out`` through a temp file and ``os.replace``."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.paths: dict[str, str] = {}

    @contextlib.contextmanager
    def path(self, name: str):
        # created on first write so a rejected config leaves nothing behind
        self.out.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=f".{name}.", suffix=".tmp")
        os.close(fd)
        try:
            yield tmp
            os.replace(tmp, self.out / name)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
        self.paths[name] = str(self.out / name)

    def text(self, name: str, content: str) -> None:
        with self.path(name) as tmp:
            Path(tmp).write_text(content)

    def rows(self, name: str, header, rows) -> None:
        with self.path(name) as tmp, open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)

    def manifest(self, command: str, doc: dict, seed, inputs: dict | None = None) -> None:
        artifacts = {}
        for name, p in sorted(self.paths.items()):
            artifacts[name] = {"path": p, "sha256": _sha256_bytes(Path(p).read_bytes())}
        payload = {
            "tool": "sgld-bounds",
            "version": __version__,
            "command": command,
            "seed": seed,
            "config_hash": config_hash(doc),
            "config": doc,
            "artifacts": artifacts,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        if inputs:
            payload["inputs"] = inputs
        self.text("manifest.json", dumps(payload))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Console:
    def __init__(self, stream=sys.stderr):
        self.stream = stream
        self.color = "NO_COLOR" not in os.environ and hasattr(stream, "isatty") and stream.isatty()

    def _paint(self, text, code):
        return f"\033[{code}m{text}\033[0m" if self.color else text

    def info(self, msg: str) -> None:
        print(msg, file=self.stream)

    def status(self, label: str, ok: bool, detail: str = "") -> None:
        tag = self._paint("PASS", "32") if ok else self._paint("FAIL", "31")
        print(f"{tag} {label}" + (f"  {detail}" if detail else ""), file=self.stream)

    def error(self, msg: str) -> None:
        print(self._paint("error:", "31") + " " + msg, file=self.stream)


# ---------------------------------------------------------------------------
# subcommands


def _seed_of(doc: dict, command: str):
    if command == "lab":
        return doc.get("lab", {}).get("seed", 0)
    if command == "demo":
        return doc.get("experiment", {}).get("fence", {}).get("seed", 0)
    return doc.get("algorithm", {}).get("seed", 0)


def cmd_run(args, doc, out: ArtifactWriter, con: Console):
    problem = cfgmod.build_problem(doc)
    config = cfgmod.build_sgld(doc)
    replicas = doc["algorithm"].get("replicas", 1)
    batch = run_replicas(problem, config, replicas)
    if batch.diverged.all():
        raise DivergenceError(int(batch.diverged_at.min()), 0)
    with out.path("dataset.csv") as tmp:
        problem.dataset.to_csv(tmp)
    traj = batch.trajectory(0)
    if batch.diverged[0]:
        raise DivergenceError(int(batch.diverged_at[0]), 0)
    if args.format == "json":
        rec = {
            "config": config.to_dict(),
            "replica": 0,
            "eta": traj.eta,
            "grad_sq_norm": traj.grad_sq,
            "sampled_index": traj.sampled_index,
            "final_w": traj.final_w,
            "left_domain": bool(traj.left_domain),
        }
        out.text("trajectory.json", dumps(rec))
    else:
        with out.path("trajectory.csv") as tmp:
            traj.to_csv(tmp)
    if config.snapshot_every:
        with out.path("snapshots.csv") as tmp:
            traj.snapshots_to_csv(tmp)
    if replicas > 1:
        est = batch.grad_sq_estimate()
        out.rows(
            "grad_sq_summary.csv",
            ["k", "eta", "grad_sq_mean", "grad_sq_se", "replicas"],
            [[k + 1, _fmt(e), _fmt(m), _fmt(s), est.replicas] for k, (e, m, s) in enumerate(zip(batch.eta, est.mean, est.se))],
        )
    con.info(f"ran {replicas} replica(s) for {config.N} steps; diverged={int(batch.diverged.sum())}")
    return None


def _certificate_inputs(args, doc, problem, config):
    """Squared-gradient record for the PAC-Bayes certificate plus manifest inputs."""
    if args.trajectory:
        path = Path(args.trajectory)
        if not path.exists():
            raise ConfigError(f"trajectory file not found: {path}")
        try:
            eta, grad_sq, _ = Trajectory.read_csv(path)
        except (ValueError, KeyError, IndexError) as exc:
            raise ConfigError(f"{path}: malformed trajectory CSV ({exc})") from None
        expected = config.etas
        if eta.shape[0] < config.N or not np.allclose(eta[: config.N], expected, rtol=1e-12, atol=0):
            raise ConfigError(f"{path}: step sizes do not match the configured schedule")
        inputs = {"trajectory": {"path": str(path), "eta": eta, "grad_sq_norm": grad_sq}}
        return grad_sq[: config.N], inputs
    embedded = doc.get("_inputs", {}).get("trajectory")
    if embedded is not None:
        grad_sq = np.asarray(embedded["grad_sq_norm"], dtype=float)
        return grad_sq[: config.N], {"trajectory": embedded}
    replicas = doc.get("certificate", {}).get("replicas", 1)
    batch = run_replicas(problem, config, replicas)
    ok = ~batch.diverged
    if not ok.any():
        raise DivergenceError(int(batch.diverged_at.min()), 0)
    return GradSqEstimate.from_samples(batch.grad_sq[ok]), None


def cmd_certify(args, doc, out: ArtifactWriter, con: Console):
    problem = cfgmod.build_problem(doc)
    config = cfgmod.build_sgld(doc)
    pb = cfgmod.build_pac_bayes(doc)
    wanted = doc.get("certificate", {}).get("variants", list(VARIANTS))
    grad_sq, inputs = _certificate_inputs(args, doc, problem, config)
    certs = all_certificates(grad_sq, config, problem.n, problem.L, problem.C, pb)
    chosen = {k: certs[k] for k in wanted if k in certs}
    skipped = sorted(set(wanted) - set(chosen))
    for name in skipped:
        con.info(f"skipped {name}: not applicable to grad_mode={config.grad_mode} N={config.N}")
    report = {k: c.to_dict() for k, c in chosen.items()}
    out.text("certificates.json", dumps(report))
    for name, cert in chosen.items():
        if args.format == "csv" and "eta" in cert.intermediates:
            with out.path(f"certificate_{name}.csv") as tmp:
                cert.write_table(tmp)
        con.info(f"{name}: {cert.bound:.6g}")
    return inputs


def cmd_lab(args, doc, out: ArtifactWriter, con: Console):
    check, setup = cfgmod.build_lab(doc, args.check)
    report = lab_verify(check, setup)
    with out.path(f"lab_{check}.csv") as tmp:
        report.to_csv(tmp)
    out.text(f"lab_{check}.json", report.to_json())
    con.status(check, report.passed, f"worst margin {report.worst_margin():.3g}")
    return None


def cmd_experiment(args, doc, out: ArtifactWriter, con: Console):
    exp = doc.get("experiment", {})
    kind = exp.get("kind", "gap")
    config = cfgmod.build_sgld(doc)
    replicas = exp.get("replicas", 100)
    p = doc.get("problem")
    if p is None:
        raise ConfigError("config is missing section(s): problem")
    if kind == "gap":
        seeds = exp.get("dataset_seeds", [p.get("seed", 0)])
        est = data_averaged_gap(
            p["kind"], p["n"], p.get("d", 1), config, replicas, seeds, exp.get("test_size", 10_000), p.get("params", {})
        )
        rows = [
            [s, g.mean_gap, g.std_error, g.replicas, g.excluded, g.left_domain]
            for s, g in zip(seeds, est.per_dataset)
        ]
        header = ["dataset_seed", "gap_mean", "gap_se", "replicas", "excluded", "left_domain"]
        summary = {"kind": "gap", "gap_mean": est.mean_gap, "gap_se": est.std_error, "excluded": est.excluded}
        con.info(f"gap {est.mean_gap:.6g} +- {est.std_error:.3g}")
    else:
        problem = cfgmod.build_problem(doc)
        i = exp.get("differing_index", 0)
        replacement = draw_points(problem, 1, problem.seed + 3_000_017)[0]
        pair = neighbor_of(problem, i, replacement)
        probes = default_probes(pair, exp.get("probes", 64), problem.seed)
        res = stability_probe(pair, config, replicas, probes)
        rows = [[j, float(m), float(s)] for j, (m, s) in enumerate(zip(res.differences, res.std_errors))]
        header = ["probe", "mean_difference", "std_error"]
        summary = {
            "kind": "stability",
            "value": res.value,
            "std_error": res.std_error,
            "argmax": res.argmax,
            "excluded": res.excluded,
        }
        con.info(f"stability probe {res.value:.6g} +- {res.std_error:.3g}")
    if args.format == "csv":
        out.rows("experiment.csv", header, [[_fmt(v) for v in r] for r in rows])
    else:
        summary["rows"] = [dict(zip(header, r)) for r in rows]
    out.text("experiment.json", dumps(summary))
    return None


def cmd_sweep(args, doc, out: ArtifactWriter, con: Console):
    exp = doc.get("experiment", {})
    if "grid" not in exp:
        raise ConfigError("config /experiment: sweep needs a 'grid' list")
    p = doc.get("problem")
    if p is None:
        raise ConfigError("config is missing section(s): problem")
    a = doc.get("algorithm", {})
    points = []
    for j, g in enumerate(exp["grid"]):
        point = SweepPoint(g["schedule"], g["N"], g["n"], g["lambda"], g["beta"])
        # reject invalid points up front so no computation starts on a bad grid
        try:
            sched = cfgmod.build_schedule(g["schedule"])
            SgldConfig(point.beta, point.lam, a.get("sigma0", 1.0), sched, N=point.N)
        except ValueError as exc:
            raise ConfigError(f"config /experiment/grid/{j}: {exc}") from None
        points.append(point)
    rows = sweep_report(
        points,
        p["kind"],
        exp.get("replicas", 100),
        seed=a.get("seed", 0),
        d=p.get("d", 1),
        sigma0=a.get("sigma0", 1.0),
        dataset_seeds=exp.get("dataset_seeds", [p.get("seed", 0)]),
        test_size=exp.get("test_size", 10_000),
        family=p.get("params", {}),
        delta=doc.get("certificate", {}).get("delta", 0.05),
        jobs=args.jobs,
    )
    if args.format == "csv":
        with out.path("sweep.csv") as tmp:
            write_sweep_csv(rows, tmp)
    else:
        out.text("sweep.json", dumps([r.csv_record() for r in rows]))
    failed = sum(r.failed for r in rows)
    con.info(f"sweep: {len(rows)} rows, {failed} failed")
    return None


def cmd_demo(args, doc, out: ArtifactWriter, con: Console):
    f = dict(doc.get("experiment", {}).get("fence", {}))
    try:
        cfg = FenceConfig(**f)
    except TypeError as exc:
        raise ConfigError(f"config /experiment/fence: {exc}") from None
    report = fence_demo(cfg)
    rec = report.to_dict()
    out.text("fence.json", dumps(rec))
    if args.format == "csv":
        keys = [k for k in rec if k != "config"]
        out.rows("fence.csv", ["quantity", "value"], [[k, _fmt(rec[k])] for k in keys])
    con.info(
        f"SGLD right-basin frequency {report.sgld_right_frequency:.3f}, GD {report.gd_right_frequency:.3f}; "
        f"probe GD {report.gd_probe:.4g} vs SGLD {report.sgld_probe:.4g}"
    )
    return None


HANDLERS = {
    "run": cmd_run,
    "certify": cmd_certify,
    "lab": cmd_lab,
    "experiment": cmd_experiment,
    "sweep": cmd_sweep,
    "demo": cmd_demo,
}


# ---------------------------------------------------------------------------
# dispatch


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config document or a previous manifest.json")
    common.add_argument("--seed", type=_u64, metavar="U64", help="override the algorithm seed")
    common.add_argument("--out", metavar="DIR", default="out", help="artifact directory (default: ./out)")
    common.add_argument("--jobs", type=int, metavar="K", default=os.cpu_count() or 1, help="worker processes")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")

    parser = argparse.ArgumentParser(prog="sgld-bounds", description="SGLD generalization certificates and checks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    sub.add_parser("run", parents=[common], help="run SGLD and write the trajectory")
    p = sub.add_parser("certify", parents=[common], help="compute certificates from a trajectory or a fresh run")
    p.add_argument("--trajectory", metavar="CSV", help="stored trajectory CSV to certify")
    p = sub.add_parser("lab", parents=[common], help="grid verification of a divergence inequality")
    p.add_argument("--check", help="which check to run")
    sub.add_parser("experiment", parents=[common], help="Monte Carlo gap or stability estimate")
    sub.add_parser("sweep", parents=[common], help="certificates versus measured gap over a grid")
    sub.add_parser("demo", parents=[common], help="fence-sitting demonstration")
    return parser


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _load_doc(args) -> tuple[dict, dict]:
    """Config document plus any inputs embedded by a manifest."""
    if args.config is None:
        return {}, {}
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = json.loads(path.read_text()) if path.suffix == ".json" else None
    embedded = raw.get("inputs", {}) if isinstance(raw, dict) and raw.get("tool") == "sgld-bounds" else {}
    return cfgmod.load(path), embedded


def execute(argv=None, console: Console | None = None) -> int:
    con = console or Console()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    if args.jobs < 1:
        con.error("--jobs must be at least 1")
        return EXIT_INVALID
    try:
        doc, embedded = _load_doc(args)
        doc = cfgmod.with_seed(doc, args.seed, args.command)
        cfgmod.validate(doc)
        work = dict(doc)
        if embedded:
            work["_inputs"] = embedded
        out = ArtifactWriter(Path(args.out))
        inputs = HANDLERS[args.command](args, work, out, con)
    except (ConfigError, json.JSONDecodeError) as exc:
        con.error(str(exc))
        return EXIT_INVALID
    except (RuntimeError, ValueError, FloatingPointError, OSError) as exc:
        con.error(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    out.manifest(args.command, doc, _seed_of(doc, args.command), inputs)
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(execute(argv))


if __name__ == "__main__":
    main()
