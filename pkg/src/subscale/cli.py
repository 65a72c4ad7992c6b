"""Command-line pipeline: ingest, fit, compare, allocate, density, select.

Every command writes its tables and plots into an output directory together
with ``manifest.json`` recording the normalized argument vector, input file
hashes, the effective seed, and the tool version.  ``subscale report
<manifest> -o DIR`` replays the recorded command; outputs are byte-identical
because nothing in the pipeline depends on time, environment, or thread
count.

Exit codes: 0 success, 1 input/usage error, 2 analytic failure (no
convergence, no interior minimum, degenerate geometry, unreachable target).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, alloc, density, fit, laws, runs, synth
from .errors import SubscaleError
from .svg import SvgPlot

_DEFAULT_FAMILIES = ["power", "chinchilla", "suboptimal"]


# ---------------------------------------------------------------------------
# Small helpers
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(
        json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n",
        encoding="utf-8",
    )


@dataclasses.dataclass(frozen=True)
class ReportBundle:
    """Everything one command emitted: data tables, plots, and the manifest.

    The manifest names every emitted file plus the normalized argument
    vector, input hashes, effective seed, and tool version; replaying it
    reproduces the tables byte for byte.
    """

    tables: tuple[str, ...]
    plots: tuple[str, ...]
    manifest: dict


def _write_manifest(
    out_dir: Path,
    command: str,
    argv: list[str],
    inputs: list[Path],
    tables: list[str],
    plots: list[str],
    seed: int | None,
    threads: int | None,
) -> ReportBundle:
    manifest = {
        "tool": "subscale",
        "version": __version__,
        "command": command,
        "argv": argv,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "tables": sorted(tables),
        "plots": sorted(plots),
        "seed": seed,
        "threads": threads,
    }
    _write_json(out_dir / "manifest.json", manifest)
    return ReportBundle(
        tables=tuple(sorted(tables)), plots=tuple(sorted(plots)), manifest=manifest
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get("SUBSCALE_THREADS", "1")))


def _load_config(args) -> fit.FitConfig:
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        config = fit.FitConfig.from_dict(data)
    else:
        config = fit.FitConfig()
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _load_law(path) -> laws.LawParams:
    return laws.params_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _csv_line(cells) -> str:
    out = []
    for c in cells:
        if isinstance(c, float):
            out.append(repr(c))
        else:
            out.append(str(c))
    return ",".join(out)


def _runs_by_id(series: runs.RunSeries) -> dict[str, list[runs.TrainingRun]]:
    grouped: dict[str, list[runs.TrainingRun]] = {}
    for rec in series.records:
        grouped.setdefault(rec.run_id, []).append(rec)
    return grouped


# ---------------------------------------------------------------------------
# Plots
# ---------------------------------------------------------------------------


def _fit_plot(
    series: runs.RunSeries, params: laws.LawParams, family: str, title: str
) -> SvgPlot:
    """Observed losses (markers) and fitted curves (dashed), per run."""
    plot = SvgPlot(
        title=title, x_label="training tokens", y_label="loss", x_log=True, y_log=True
    )
    for i, (run_id, records) in enumerate(sorted(_runs_by_id(series).items())):
        records = sorted(records, key=lambda r: r.tokens)
        xs = [r.tokens for r in records]
        ys = [r.loss for r in records]
        sub = runs.RunSeries.from_records(records)
        preds, _ = fit.predict(params, sub, family=family)
        color = None if i < 6 else "#999999"
        plot.add_series(f"{run_id} observed", xs, ys, markers=True, color=color)
        plot.add_series(f"{run_id} fitted", xs, list(preds), dashed=True, color=color)
    return plot


def _sweep_plot(law: laws.LawParams, budget: float, otr_values) -> SvgPlot:
    """Loss vs model size at fixed budgets, with the locus of the minima."""
    plot = SvgPlot(
        title="loss vs model size at fixed compute",
        x_label="model size (parameters)",
        y_label="predicted loss",
        x_log=True,
        y_log=True,
    )
    locus_x, locus_y = [], []
    for factor in (0.1, 1.0, 10.0):
        b = budget * factor
        points = alloc.otr_sweep(law, b, otr_values)
        plot.add_series(
            f"budget {b:.2e}",
            [p.n for p in points],
            [p.predicted_loss for p in points],
        )
        try:
            plan = alloc.optimal_allocation(law, b)
            locus_x.append(plan.n_star)
            locus_y.append(plan.predicted_loss)
        except SubscaleError:
            pass
    if len(locus_x) >= 2:
        plot.add_series("optimal locus", locus_x, locus_y, markers=True, color="#000000")
    return plot


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    out = _out_dir(args)
    src = Path(args.input).resolve()
    series = runs.ingest(src, args.format)
    if args.smooth_window is not None:
        series = runs.gaussian_smooth(series, args.smooth_window, args.smooth_sigma)
    runs.write_csv(series, out / "runs.csv")
    argv = ["ingest", str(src)]
    if args.format:
        argv += ["--format", args.format]
    if args.smooth_window is not None:
        argv += ["--smooth-window", str(args.smooth_window)]
        if args.smooth_sigma is not None:
            argv += ["--smooth-sigma", repr(args.smooth_sigma)]
    _write_manifest(out, "ingest", argv, [src], ["runs.csv"], [], None, None)
    n_runs = len(runs.run_ids(series))
    print(f"ingested {len(series)} records across {n_runs} runs -> {out / 'runs.csv'}")
    return 0


def _fit_argv(args, src: Path, threads: int) -> list[str]:
    argv = ["fit", str(src)]
    for family in args.family:
        argv += ["--family", family]
    if args.config:
        argv += ["--config", str(Path(args.config).resolve())]
    argv += ["--split-fraction", repr(args.split_fraction)]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    argv += ["--threads", str(threads)]
    return argv


def cmd_fit(args) -> int:
    out = _out_dir(args)
    src = Path(args.input).resolve()
    series = runs.ingest(src)
    config = _load_config(args)
    threads = _threads(args)
    inputs = [src] + ([Path(args.config).resolve()] if args.config else [])
    argv = _fit_argv(args, src, threads)

    if len(args.family) > 1:
        table = fit.compare_laws(
            series, args.family, config, args.split_fraction, threads
        )
        (out / "comparison.csv").write_text(table.to_csv_text(), encoding="utf-8")
        _write_json(out / "comparison.json", table.to_dict())
        best = next((r for r in table.rows if r.error is None), None)
        tables = ["comparison.csv", "comparison.json"]
        plots = []
        if best is not None:
            plot = _fit_plot(
                series, best.params, best.family, f"best family: {best.family}"
            )
            plot.write(out / "loss_tokens.svg")
            plots.append("loss_tokens.svg")
        _write_manifest(out, "fit", argv, inputs, tables, plots, config.seed, threads)
        if best is None:
            print("all families failed", file=sys.stderr)
            return 2
        print(
            f"best by prediction MAPE: {best.family} "
            f"(fit {best.mape_fit:.3e}, pred {best.mape_pred:.3e})"
        )
        return 0

    family = args.family[0]
    if args.split_fraction >= 1.0:
        fit_split, holdout = series, None
    else:
        fit_split, holdout = runs.split_fit_holdout(series, args.split_fraction)
    result = fit.fit_law(fit_split, family, config, threads)
    if holdout is not None:
        _, mape_pred = fit.predict(result.params, holdout, family=family)
        result = dataclasses.replace(result, mape_pred=mape_pred)

    _write_json(out / "fit_result.json", result.to_dict())
    (out / "fit_result.csv").write_text(result.to_csv_text(), encoding="utf-8")
    lines = [_csv_line(["run_id", "model_size", "tokens", "loss", "predicted", "residual"])]
    preds, _ = fit.predict(result.params, fit_split, family=family)
    for rec, pred, res in zip(fit_split.records, preds, result.residuals):
        lines.append(
            _csv_line([rec.run_id, rec.model_size, rec.tokens, rec.loss, float(pred), res])
        )
    (out / "residuals.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    plot = _fit_plot(series, result.params, family, f"{family} fit")
    plot.write(out / "loss_tokens.svg")
    _write_manifest(
        out,
        "fit",
        argv,
        inputs,
        ["fit_result.json", "fit_result.csv", "residuals.csv"],
        ["loss_tokens.svg"],
        config.seed,
        threads,
    )
    pred_txt = "" if result.mape_pred is None else f", pred MAPE {result.mape_pred:.3e}"
    print(
        f"{family}: converged={result.converged}, fit MAPE {result.mape_fit:.3e}{pred_txt}"
    )
    return 0 if result.converged else 2


def cmd_predict(args) -> int:
    out = _out_dir(args)
    src = Path(args.input).resolve()
    params_path = Path(args.params).resolve()
    series = runs.ingest(src)
    params = _load_law(params_path)
    family = args.family or fit.family_for_params(params)
    preds, mape_pred = fit.predict(params, series, family=family)
    lines = [_csv_line(["run_id", "model_size", "tokens", "loss", "predicted"])]
    for rec, pred in zip(series.records, preds):
        lines.append(
            _csv_line([rec.run_id, rec.model_size, rec.tokens, rec.loss, float(pred)])
        )
    (out / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_json(out / "prediction.json", {"family": family, "mape_pred": mape_pred})
    argv = ["predict", str(src), "--params", str(params_path), "--family", family]
    _write_manifest(
        out,
        "predict",
        argv,
        [src, params_path],
        ["predictions.csv", "prediction.json"],
        [],
        None,
        None,
    )
    print(f"prediction MAPE {mape_pred:.6e} over {len(series)} records")
    return 0


def cmd_compare(args) -> int:
    args.family = args.family or list(_DEFAULT_FAMILIES)
    return cmd_fit(args)


def _otr_grid(args) -> np.ndarray:
    return np.geomspace(args.otr_min, args.otr_max, args.otr_points)


def cmd_alloc(args) -> int:
    out = _out_dir(args)
    law_path = Path(args.law).resolve()
    law = _load_law(law_path)
    if not args.budget > 0:
        raise ValueError("budget must be > 0")
    plan = alloc.optimal_allocation(law, args.budget, (args.n_min, args.n_max))
    _write_json(out / "allocation.json", plan.to_dict())
    tables = ["allocation.json"]
    plots = []
    if args.sweep:
        otr_values = _otr_grid(args)
        points = alloc.otr_sweep(law, args.budget, otr_values)
        lines = [_csv_line(["otr", "n", "d", "loss"])]
        for p in points:
            lines.append(_csv_line([p.otr, p.n, p.d, p.predicted_loss]))
        (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        _sweep_plot(law, args.budget, otr_values).write(out / "alloc_sweep.svg")
        tables.append("sweep.csv")
        plots.append("alloc_sweep.svg")
    argv = ["alloc", "--law", str(law_path), "--budget", repr(args.budget)]
    argv += ["--n-min", repr(args.n_min), "--n-max", repr(args.n_max)]
    if args.sweep:
        argv += [
            "--sweep",
            "--otr-min", repr(args.otr_min),
            "--otr-max", repr(args.otr_max),
            "--otr-points", str(args.otr_points),
        ]
    _write_manifest(out, "alloc", argv, [law_path], tables, plots, None, None)
    print(json.dumps(plan.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    law_path = Path(args.law).resolve()
    law = _load_law(law_path)
    if not args.budget > 0:
        raise ValueError("budget must be > 0")
    otr_values = _otr_grid(args)
    points = alloc.otr_sweep(law, args.budget, otr_values)
    lines = [_csv_line(["otr", "n", "d", "loss"])]
    for p in points:
        lines.append(_csv_line([p.otr, p.n, p.d, p.predicted_loss]))
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _sweep_plot(law, args.budget, otr_values).write(out / "alloc_sweep.svg")
    argv = [
        "sweep",
        "--law", str(law_path),
        "--budget", repr(args.budget),
        "--otr-min", repr(args.otr_min),
        "--otr-max", repr(args.otr_max),
        "--otr-points", str(args.otr_points),
    ]
    _write_manifest(
        out, "sweep", argv, [law_path], ["sweep.csv"], ["alloc_sweep.svg"], None, None
    )
    best = min(points, key=lambda p: p.predicted_loss)
    print(f"sweep minimum: otr {best.otr:.4g}, loss {best.predicted_loss:.6g}")
    return 0


def cmd_density(args) -> int:
    out = _out_dir(args)
    src = Path(args.embeddings).resolve()
    embeddings = density.load_embeddings(src, normalize=args.normalize)
    seed = args.seed if args.seed is not None else 0
    clustering = density.kmeans(embeddings, args.k, seed=seed, max_iters=args.max_iters)
    report = density.dataset_density(embeddings, clustering)
    _write_json(out / "density_report.json", report.to_dict())
    argv = ["density", str(src), "--k", str(args.k), "--seed", str(seed)]
    argv += ["--max-iters", str(args.max_iters)]
    if args.normalize:
        argv.append("--normalize")
    _write_manifest(out, "density", argv, [src], ["density_report.json"], [], seed, None)
    print(
        f"k={report.k} n={report.n_total} dim={report.dim} "
        f"log_density={report.log_density:.6g}"
    )
    return 0


def cmd_select(args) -> int:
    out = _out_dir(args)
    src = Path(args.embeddings).resolve()
    if (args.keep_fraction is None) == (args.target_log_density is None):
        raise ValueError("give exactly one of --keep-fraction or --target-log-density")
    embeddings = density.load_embeddings(src, normalize=args.normalize)
    seed = args.seed if args.seed is not None else 0
    clustering = density.kmeans(embeddings, args.k, seed=seed, max_iters=args.max_iters)
    before = density.dataset_density(embeddings, clustering)
    retained = density.select_low_density(
        embeddings,
        clustering,
        keep_fraction=args.keep_fraction,
        target_log_density=args.target_log_density,
    )
    kept_emb, kept_clustering = density.apply_selection(embeddings, clustering, retained)
    after = density.dataset_density(kept_emb, kept_clustering)
    (out / "retained_ids.txt").write_text(
        "\n".join(retained) + "\n", encoding="utf-8"
    )
    _write_json(
        out / "selection.json",
        {
            "n_before": embeddings.n_samples,
            "n_after": len(retained),
            "log_density_before": before.log_density,
            "log_density_after": after.log_density,
            "k_before": before.k,
            "k_after": after.k,
        },
    )
    argv = ["select", str(src), "--k", str(args.k), "--seed", str(seed)]
    argv += ["--max-iters", str(args.max_iters)]
    if args.keep_fraction is not None:
        argv += ["--keep-fraction", repr(args.keep_fraction)]
    if args.target_log_density is not None:
        argv += ["--target-log-density", repr(args.target_log_density)]
    if args.normalize:
        argv.append("--normalize")
    _write_manifest(
        out,
        "select",
        argv,
        [src],
        ["retained_ids.txt", "selection.json"],
        [],
        seed,
        None,
    )
    print(
        f"kept {len(retained)}/{embeddings.n_samples}; "
        f"log density {before.log_density:.6g} -> {after.log_density:.6g}"
    )
    return 0


def cmd_synth(args) -> int:
    out = _out_dir(args)
    spec_path = Path(args.spec).resolve()
    spec = synth.load_spec(spec_path)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    argv = ["synth", "--spec", str(spec_path)]
    argv += ["--seed", str(spec.seed)]
    if isinstance(spec, synth.CurveSpec):
        series = synth.gen_curves(spec)
        name = f"runs.{args.runs_format}"
        if args.runs_format == "csv":
            runs.write_csv(series, out / name)
        else:
            runs.write_jsonl(series, out / name)
        argv += ["--runs-format", args.runs_format]
        outputs = [name]
        print(f"generated {len(series)} records -> {out / name}")
    else:
        embeddings, labels = synth.gen_blobs(spec)
        name = "embeddings.csv" if args.emb_format == "csv" else "embeddings.emb"
        density.save_embeddings(out / name, embeddings)
        labels_name = "labels.csv"
        lines = ["id,label"] + [
            f"{i},{lab}" for i, lab in zip(embeddings.ids, labels)
        ]
        (out / labels_name).write_text("\n".join(lines) + "\n", encoding="utf-8")
        argv += ["--emb-format", args.emb_format]
        outputs = [name, labels_name]
        print(f"generated {embeddings.n_samples} embeddings -> {out / name}")
    _write_manifest(out, "synth", argv, [spec_path], outputs, [], spec.seed, None)
    return 0


def cmd_report(args) -> int:
    manifest_path = Path(args.manifest).resolve()
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    for path_str, digest in manifest.get("inputs", {}).items():
        path = Path(path_str)
        if not path.exists():
            raise ValueError(f"manifest input missing: {path}")
        if _sha256(path) != digest:
            raise ValueError(f"manifest input changed since recording: {path}")
    argv = list(manifest["argv"]) + ["--out", str(args.out)]
    return main(argv)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_out(p) -> None:
    p.add_argument("-o", "--out", required=True, help="output directory")


def _add_seed_threads(p, threads: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None, help="override embedded seeds")
    if threads:
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help="worker threads (default $SUBSCALE_THREADS or 1); never changes results",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subscale",
        description="Scaling-law analysis for over-trained and high-density regimes",
    )
    parser.add_argument("--version", action="version", version=f"subscale {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a runs file, optionally smooth")
    p.add_argument("input")
    p.add_argument("--format", choices=["csv", "jsonl"], default=None)
    p.add_argument("--smooth-window", type=int, default=None)
    p.add_argument("--smooth-sigma", type=float, default=None)
    _add_out(p)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("fit", help="fit one or more law families")
    p.add_argument("input")
    p.add_argument(
        "--family",
        action="append",
        required=True,
        choices=sorted(fit.FAMILIES),
        help="repeat for a comparison table",
    )
    p.add_argument("--config", default=None, help="FitConfig JSON file")
    p.add_argument("--split-fraction", type=float, default=0.25)
    _add_seed_threads(p)
    _add_out(p)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("predict", help="evaluate a fitted law on a runs file")
    p.add_argument("input")
    p.add_argument("--params", required=True, help="law params JSON")
    p.add_argument("--family", choices=sorted(fit.FAMILIES), default=None)
    _add_out(p)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("compare", help="fit and rank several families")
    p.add_argument("input")
    p.add_argument("--family", action="append", choices=sorted(fit.FAMILIES))
    p.add_argument("--config", default=None)
    p.add_argument("--split-fraction", type=float, default=0.25)
    _add_seed_threads(p)
    _add_out(p)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("alloc", help="compute-optimal (N, D) for a budget")
    p.add_argument("--law", required=True, help="law params JSON")
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--n-min", type=float, default=alloc.DEFAULT_N_BRACKET[0])
    p.add_argument("--n-max", type=float, default=alloc.DEFAULT_N_BRACKET[1])
    p.add_argument("--sweep", action="store_true")
    p.add_argument("--otr-min", type=float, default=1.0)
    p.add_argument("--otr-max", type=float, default=2000.0)
    p.add_argument("--otr-points", type=int, default=25)
    _add_out(p)
    p.set_defaults(handler=cmd_alloc)

    p = sub.add_parser("sweep", help="loss along a fixed budget vs OTR")
    p.add_argument("--law", required=True)
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--otr-min", type=float, default=1.0)
    p.add_argument("--otr-max", type=float, default=2000.0)
    p.add_argument("--otr-points", type=int, default=25)
    _add_out(p)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("density", help="cluster embeddings and report density")
    p.add_argument("embeddings")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--normalize", action="store_true")
    _add_seed_threads(p, threads=False)
    _add_out(p)
    p.set_defaults(handler=cmd_density)

    p = sub.add_parser("select", help="density-based subset selection")
    p.add_argument("embeddings")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--keep-fraction", type=float, default=None)
    p.add_argument("--target-log-density", type=float, default=None)
    p.add_argument("--normalize", action="store_true")
    _add_seed_threads(p, threads=False)
    _add_out(p)
    p.set_defaults(handler=cmd_select)

    p = sub.add_parser("synth", help="generate fixtures from a spec JSON")
    p.add_argument("--spec", required=True)
    p.add_argument("--runs-format", choices=["csv", "jsonl"], default="csv")
    p.add_argument("--emb-format", choices=["emb", "csv"], default="emb")
    _add_seed_threads(p, threads=False)
    _add_out(p)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("report", help="replay a recorded manifest")
    p.add_argument("manifest")
    _add_out(p)
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except SubscaleError as exc:
        print(f"subscale {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"subscale {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
