"""Command-line entry point: ``landmark <command> [flags]``.

Exit codes are distinct per failure class so scripts can branch on them.
Every file written goes through a temp-file-and-rename, and every report
embeds the resolved configuration it was produced from.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checks, storage
from .config import ConfigError, RunConfig, resolve
from .container import LoadError, VersionMismatchError, atomic_write_text
from .metrics import format_report, mean_recall_at_k, metrics_report, pearson, topn_recall_at_k
from .model import (TrainingDivergedError, Toggles, eem_records, freq_records, load_checkpoint,
                    predict_scenes, save_checkpoint, save_trace, train)
from .synth import compute_marginals, generate_dataset, predicate_counts, summary_text

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_VERSION = 5
EXIT_CORRUPT = 6
EXIT_DIVERGED = 7

ABLATION_GRID = (
    ("none", dict(enable_eem=False, enable_lam=False, enable_lcm=False)),
    ("EEM", dict(enable_eem=True, enable_lam=False, enable_lcm=False)),
    ("EEM+LAM", dict(enable_eem=True, enable_lam=True, enable_lcm=False)),
    ("LAM+LCM", dict(enable_eem=False, enable_lam=True, enable_lcm=True)),
    ("all", dict(enable_eem=True, enable_lam=True, enable_lcm=True)),
)
DATA_KEYS = ("n_entity_classes", "n_predicates", "n_channels", "visual_dim")

log = logging.getLogger("landmark")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (key = value lines or JSON)")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--out", help="output path")
    p.add_argument("--workers", type=int)


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", help="dataset file from 'gen'; generated from the config when omitted")
    p.add_argument("--task", choices=("predcls", "sgcls"))
    p.add_argument("--mu", type=float)
    p.add_argument("--lambda", dest="lambda_mse", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    for m in ("eem", "lam", "lcm"):
        p.add_argument(f"--enable-{m}", dest=f"enable_{m}", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--k", dest="k_list", help="comma-separated K list, e.g. 20,50,100")
    p.add_argument("--topn", dest="topn_list", help="comma-separated N list, e.g. 1,5")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="landmark", description="language-guided scene graph toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _common(p)

    p = sub.add_parser("stats", help="marginals, FREQ table and long-tail summary")
    _common(p)
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint plus trace")
    _common(p)
    _model_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--task", choices=("predcls", "sgcls"))
    p.add_argument("--k", dest="k_list")
    p.add_argument("--topn", dest="topn_list")
    p.add_argument("--split", default="eval", choices=("eval", "zeroshot", "train"))

    p = sub.add_parser("ablate", help="train the five-row module toggle grid")
    _common(p)
    _model_flags(p)

    p = sub.add_parser("sweep-mu", help="mR@K as a function of mu")
    _common(p)
    _model_flags(p)
    p.add_argument("--mu-list", default="0.0,0.3,0.5,0.7,1.0")

    p = sub.add_parser("gradcheck", help="finite-difference check of every module")
    _common(p)
    p.add_argument("--max-entries", type=int, default=12, help="coordinates probed per parameter block")

    p = sub.add_parser("eem-freq", help="top-N recall of the trained estimator against FREQ")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--topn", dest="topn_list")
    p.add_argument("--split", default="eval", choices=("eval", "zeroshot"))

    p = sub.add_parser("pcc", help="Pearson correlation of per-class recall gains with training frequency")
    _common(p)
    p.add_argument("--baseline", required=True, help="baseline checkpoint")
    p.add_argument("--checkpoint", required=True, help="enhanced checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", dest="k_list")
    return ap


# ---------------------------------------------------------------------------
# helpers


def _overrides(args) -> dict:
    keys = ("seed", "workers", "task", "mu", "lambda_mse", "iterations", "lr", "enable_eem", "enable_lam",
            "enable_lcm", "k_list", "topn_list")
    out = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    for item in args.set:
        if "=" not in item:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}", EXIT_USAGE)
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    path = getattr(args, "config", None)
    if path is not None and not Path(path).exists():
        raise CliError(f"config file not found: {path}", EXIT_MISSING)
    return resolve(base=base, path=path, overrides=_overrides(args), environ=os.environ)


def _require(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"file not found: {path}", EXIT_MISSING)
    return p


def _load_dataset(path: str):
    return storage.load_dataset(_require(path))


def _dataset_for(cfg: RunConfig, path: str | None):
    if path is None:
        return generate_dataset(cfg.synth(), cfg.seed, cfg.to_text())
    ds = _load_dataset(path)
    if ds.config_text:
        data_cfg = RunConfig.from_text(ds.config_text)
        bad = [k for k in DATA_KEYS if getattr(data_cfg, k) != getattr(cfg, k)]
        if bad:
            raise CliError(f"config disagrees with dataset on {', '.join(bad)}", EXIT_CONFIG)
    return ds


def _config_block(cfg: RunConfig) -> str:
    return "".join(f"# {line}\n" for line in cfg.to_text().splitlines())


def _emit(text: str, record: dict, cfg: RunConfig, out: str | None) -> None:
    """Print the text report; with ``--out`` also write <out>.txt and <out>.json."""
    print(text)
    if out:
        base = Path(out)
        stem = base.with_suffix("") if base.suffix in (".txt", ".json") else base
        record = {**record, "seed": cfg.seed, "config": cfg.to_text()}
        atomic_write_text(stem.with_name(stem.name + ".txt"), text + "\n" + _config_block(cfg))
        atomic_write_text(stem.with_name(stem.name + ".json"), json.dumps(record, indent=2, sort_keys=True) + "\n")


def _train(ds, cfg: RunConfig):
    marg = compute_marginals(ds.subset("train"), cfg.n_entity_classes, cfg.n_predicates, cfg.smoothing_eps)
    return train(ds, cfg, marg)


def _evaluate(result, ds, cfg: RunConfig, split: str = "eval") -> dict:
    recs = predict_scenes(result.model, ds, ds.subset(split), cfg.task, Toggles.from_config(cfg),
                          workers=cfg.workers)
    return metrics_report(recs, cfg.task, cfg.ks, cfg.ns, ds.vocab.predicate_classes)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = resolve_config(args)
    ds = generate_dataset(cfg.synth(), cfg.seed, cfg.to_text())
    out = args.out or "dataset.lmk"
    storage.save_dataset(ds, out)
    print(summary_text(ds))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    ds = _load_dataset(args.dataset)
    cfg = RunConfig.from_text(ds.config_text) if ds.config_text else resolve_config(args)
    cfg = resolve(base=cfg, overrides=_overrides(args))
    train_scenes = ds.subset("train")
    marg = compute_marginals(train_scenes, ds.vocab.n_entities, ds.vocab.n_predicates, cfg.smoothing_eps)
    counts = predicate_counts(train_scenes, ds.vocab.n_predicates)
    fg = counts[1:]
    lines = [summary_text(ds).rstrip(), "",
             f"{'predicate':<16s} {'train count':>11s} {'share':>8s}"]
    for k in np.argsort(-fg, kind="stable") + 1:
        lines.append(f"{ds.vocab.predicate_classes[k]:<16s} {counts[k]:>11d} {100 * counts[k] / max(fg.sum(), 1):>7.2f}%")
    nz = fg[fg > 0]
    ratio = float(nz.max() / nz.min()) if nz.size else 0.0
    lines.append(f"head/tail ratio {ratio:.2f}")
    text = "\n".join(lines)
    if args.out:
        storage.save_stats(marg, args.out, cfg.to_text())
    _emit(text, {"predicate_counts": counts.tolist(), "head_tail_ratio": ratio}, cfg,
          str(Path(args.out).with_suffix("")) + ".summary" if args.out else None)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    ds = _dataset_for(cfg, args.dataset)
    result = _train(ds, cfg)
    out = Path(args.out or "checkpoint.lmk")
    save_checkpoint(result, out)
    trace_path = out.with_name(out.stem + ".trace.jsonl")
    save_trace(result.trace, trace_path, cfg.to_text())
    first, last = result.trace[0]["total"], result.trace[-1]["total"]
    print(f"trained {cfg.iterations} steps, toggles {Toggles.from_config(cfg).label()}, "
          f"loss {first:.6f} -> {last:.6f}")
    print(f"wrote {out} and {trace_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    result = load_checkpoint(_require(args.checkpoint))
    cfg = resolve(base=result.config, overrides=_overrides(args))
    ds = _load_dataset(args.dataset)
    report = _evaluate(result, ds, cfg, args.split)
    text = f"split {args.split}, toggles {Toggles.from_config(cfg).label()}\n" + format_report(report)
    lines = [text, "", f"{'predicate':<16s}" + "".join(f" {'R@' + str(r['K']):>8s}" for r in report["rows"])]
    for name in ds.vocab.predicate_classes[1:]:
        cells = "".join(
            f" {100 * r['per_class'][name]:>8.2f}" if name in r["per_class"] else f" {'-':>8s}"
            for r in report["rows"]
        )
        lines.append(f"{name:<16s}{cells}")
    _emit("\n".join(lines), {"split": args.split, **report}, cfg, args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    ds = _dataset_for(cfg, args.dataset)
    k = 50 if 50 in cfg.ks else cfg.ks[0]
    rows = []
    for name, toggles in ABLATION_GRID:
        run = cfg.with_overrides(**toggles)
        report = _evaluate(_train(ds, run), ds, run)
        row = next(r for r in report["rows"] if r["K"] == k)
        rows.append({"row": name, "EEM": run.enable_eem, "LAM": run.enable_lam, "LCM": run.enable_lcm,
                     "R": row["R"], "mR": row["mR"], "report": report})
        log.info("ablation row %s done", name)
    mark = lambda b: "x" if b else "-"  # noqa: E731
    lines = [f"{'row':<8s} {'EEM':>3s} {'LAM':>3s} {'LCM':>3s} {f'R@{k}':>8s} {f'mR@{k}':>8s}"]
    for r in rows:
        lines.append(f"{r['row']:<8s} {mark(r['EEM']):>3s} {mark(r['LAM']):>3s} {mark(r['LCM']):>3s} "
                     f"{100 * r['R']:>8.2f} {100 * r['mR']:>8.2f}")
    _emit("\n".join(lines), {"K": k, "rows": rows}, cfg, args.out)
    return EXIT_OK


def cmd_sweep_mu(args) -> int:
    cfg = resolve_config(args)
    ds = _dataset_for(cfg, args.dataset)
    try:
        mus = [float(x) for x in args.mu_list.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"--mu-list must be comma-separated numbers, got {args.mu_list!r}", EXIT_USAGE) from None
    rows = []
    for mu in mus:
        run = cfg.with_overrides(mu=mu, enable_eem=True)
        report = _evaluate(_train(ds, run), ds, run)
        rows.append({"mu": mu, **{f"mR@{r['K']}": r["mR"] for r in report["rows"]},
                     **{f"R@{r['K']}": r["R"] for r in report["rows"]}})
    lines = [f"{'mu':>6s}" + "".join(f" {'mR@' + str(k):>8s}" for k in cfg.ks)
             + "".join(f" {'R@' + str(k):>8s}" for k in cfg.ks)]
    for r in rows:
        lines.append(f"{r['mu']:>6.2f}" + "".join(f" {100 * r[f'mR@{k}']:>8.2f}" for k in cfg.ks)
                     + "".join(f" {100 * r[f'R@{k}']:>8.2f}" for k in cfg.ks))
    _emit("\n".join(lines), {"rows": rows}, cfg, args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = resolve_config(args)
    reports = checks.module_gradchecks(cfg, max_entries=args.max_entries)
    ok = checks.all_passed(reports)
    lines = checks.report_lines(reports) + [f"gradcheck {'PASSED' if ok else 'FAILED'}"]
    record = {name: {"passed": r.passed, "max_rel_error": r.max_rel_error,
                     "blocks": [vars(b) for b in r.blocks]} for name, r in reports.items()}
    _emit("\n".join(lines), {"passed": ok, "modules": record}, cfg, args.out)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_eem_freq(args) -> int:
    result = load_checkpoint(_require(args.checkpoint))
    cfg = resolve(base=result.config, overrides=_overrides(args))
    if not cfg.enable_eem:
        raise CliError("checkpoint was trained without EEM", EXIT_CONFIG)
    ds = _load_dataset(args.dataset)
    marg = compute_marginals(ds.subset("train"), ds.vocab.n_entities, ds.vocab.n_predicates, cfg.smoothing_eps)
    scenes = ds.subset(args.split)
    recs = {"EEM": eem_records(result.model, scenes), "FREQ": freq_records(marg, scenes)}
    k = max(cfg.ks)
    table = {name: {str(n): topn_recall_at_k(r, n, k) for n in cfg.ns} for name, r in recs.items()}
    lines = [f"{'model':<6s}" + "".join(f" {'Top-' + str(n):>8s}" for n in cfg.ns)]
    for name, row in table.items():
        lines.append(f"{name:<6s}" + "".join(f" {100 * row[str(n)]:>8.2f}" for n in cfg.ns))
    _emit("\n".join(lines), {"split": args.split, "K": k, "topn": table}, cfg, args.out)
    return EXIT_OK


def cmd_pcc(args) -> int:
    base = load_checkpoint(_require(args.baseline))
    enh = load_checkpoint(_require(args.checkpoint))
    cfg = resolve(base=enh.config, overrides=_overrides(args))
    ds = _load_dataset(args.dataset)
    k = 50 if 50 in cfg.ks else cfg.ks[0]
    scenes = ds.subset("eval")
    per = []
    for res in (base, enh):
        recs = predict_scenes(res.model, ds, scenes, cfg.task, Toggles.from_config(res.config),
                              workers=cfg.workers)
        per.append(mean_recall_at_k(recs, k).per_class)
    counts = predicate_counts(ds.subset("train"), ds.vocab.n_predicates)
    preds = sorted(set(per[0]) & set(per[1]))
    delta = [per[1][p] - per[0][p] for p in preds]
    freq = [counts[p] for p in preds]
    r = pearson(delta, freq)
    lines = [f"{'predicate':<16s} {'train count':>11s} {'delta R@' + str(k):>12s}"]
    for p, d, f in zip(preds, delta, freq):
        lines.append(f"{ds.vocab.predicate_classes[p]:<16s} {f:>11d} {100 * d:>12.2f}")
    lines.append(f"PCC(delta, frequency) = {r:.4f}")
    _emit("\n".join(lines), {"K": k, "pcc": r, "rows": [
        {"predicate": int(p), "count": int(f), "delta": d} for p, d, f in zip(preds, delta, freq)]}, cfg, args.out)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen, "stats": cmd_stats, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
    "sweep-mu": cmd_sweep_mu, "gradcheck": cmd_gradcheck, "eem-freq": cmd_eem_freq, "pcc": cmd_pcc,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except VersionMismatchError as exc:
        print(f"version mismatch: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except LoadError as exc:
        print(f"unreadable file: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
