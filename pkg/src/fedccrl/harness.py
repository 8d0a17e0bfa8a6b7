"""Command-line harness: method comparison, ablation grid, sweeps.

Every verb resolves one config (defaults, then ``--config``, then ``--set``),
runs leave-one-domain-out training for each requested seed and target, and
writes into ``--out``::

    config.resolved        the fully resolved config, as INI
    runs/<label>_seed<s>.jsonl   one JSON record per round per target
    summary.csv            one row per method/variant, mean and seed std

All numbers in ``summary.csv`` are recomputable from the JSONL streams.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ResolvedConfig, parse_config
from .data import DomainDataset, generate_synthetic, leave_one_domain_out, load_image_root, write_image_root
from .federation import METHODS, AblationFlags, FederationConfig, run_single
from .losses import LossWeights

log = logging.getLogger("fedccrl")

DEFAULT_SEEDS = (1, 2, 3)
SWEEP_PARAMETERS = ("r", "lambda1", "lambda2")

# (ccdt, difp) x (ra, js), in the row order of the published ablation table.
AUGMENT_COMBOS = ((True, False), (False, True), (True, True))
LOSS_COMBOS = ((False, False), (True, False), (False, True), (True, True))


@dataclass(frozen=True)
class RunSpec:
    config_path: str | None = None
    overrides: tuple = ()
    out_dir: str | None = None
    repeats: int | None = None  # number of seeds used; defaults to all of them
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    method: str | None = None
    target_domains: tuple[int, ...] | None = None  # None means every domain
    jobs: int = 1

    def __post_init__(self):
        if len(self.seeds) == 0:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"seeds must be distinct, got {list(self.seeds)}")
        if self.repeats is not None and not 1 <= self.repeats <= len(self.seeds):
            raise ValueError(f"repeat count must lie in [1, {len(self.seeds)}], got {self.repeats}")
        if self.method is not None and self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    @property
    def active_seeds(self) -> tuple[int, ...]:
        return tuple(self.seeds[: self.repeats or len(self.seeds)])


@dataclass
class SummaryRow:
    label: str
    domain_mean: dict[int, float]
    domain_std: dict[int, float]
    avg: float
    avg_std: float
    seeds: tuple[int, ...]


@dataclass
class Report:
    """Per-run records plus one summary row per method or variant."""

    kind: str
    domains: dict[int, str]  # id -> column name, in column order
    rows: list[SummaryRow] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)
    resolved: ResolvedConfig | None = None

    def row(self, label: str) -> SummaryRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.domains.values())
        w.writerow(["method", *names, "Avg", *(f"{n}_std" for n in names), "Avg_std", "seeds"])
        for r in self.rows:
            w.writerow(
                [
                    r.label,
                    *(f"{r.domain_mean[d]:.4f}" for d in self.domains),
                    f"{r.avg:.4f}",
                    *(f"{r.domain_std[d]:.4f}" for d in self.domains),
                    f"{r.avg_std:.4f}",
                    ";".join(str(s) for s in r.seeds),
                ]
            )
        return buf.getvalue()


def _std(values) -> float:
    """Sample standard deviation across seeds; 0 for a single seed."""
    values = np.asarray(values, dtype=float)
    return float(values.std(ddof=1)) if len(values) > 1 else 0.0


def summarize(label: str, final: dict[tuple[int, int], float], seeds, domains) -> SummaryRow:
    """Build a row from ``final[(seed, domain)]`` accuracies."""
    grid = np.array([[final[(s, d)] for d in domains] for s in seeds])
    per_seed_avg = grid.mean(axis=1)
    return SummaryRow(
        label,
        {d: float(grid[:, j].mean()) for j, d in enumerate(domains)},
        {d: _std(grid[:, j]) for j, d in enumerate(domains)},
        float(grid.mean(axis=0).mean()),
        _std(per_seed_avg),
        tuple(seeds),
    )


def summary_from_records(records: list[dict], domains) -> dict[str, SummaryRow]:
    """Recompute summary rows from round records (last round per run wins)."""
    final: dict[str, dict] = {}
    seeds: dict[str, list] = {}
    for rec in records:
        label = rec["label"]
        key = (rec["seed"], rec["target_domain"])
        cur = final.setdefault(label, {})
        if key not in cur or rec["round"] >= cur[key][0]:
            cur[key] = (rec["round"], rec["accuracy"])
        if rec["seed"] not in seeds.setdefault(label, []):
            seeds[label].append(rec["seed"])
    return {
        label: summarize(label, {k: v[1] for k, v in cur.items()}, seeds[label], list(domains))
        for label, cur in final.items()
    }


# ---------------------------------------------------------------- execution


def load_data(resolved: ResolvedConfig) -> list[DomainDataset]:
    if resolved.image_root:
        return load_image_root(resolved.image_root, resolved.synthetic.image_dims)
    return generate_synthetic(resolved.synthetic)


def _run_one(job) -> dict:
    label, cfg, train, test = job
    _, _, transport, history = run_single(cfg, train, test)
    records = [
        {
            "label": label,
            "method": cfg.method,
            "seed": cfg.global_seed,
            "target_domain": test.domain_id,
            "round": m.round,
            "accuracy": m.accuracy,
            "loss_cls": m.loss_cls,
            "loss_ra": m.loss_ra,
            "loss_js": m.loss_js,
            "bytes_up": m.bytes_up,
            "bytes_down": m.bytes_down,
        }
        for m in history
    ]
    return {
        "label": label,
        "seed": cfg.global_seed,
        "target": test.domain_id,
        "accuracy": history[-1].accuracy,
        "records": records,
        "bytes_up": transport.bytes("up"),
        "stats_bytes_up": transport.bytes("up", kind="stats"),
    }


def execute(
    kind: str, variants: list[tuple[str, FederationConfig]], spec: RunSpec, resolved: ResolvedConfig, data=None
) -> Report:
    """Train every (variant, seed, target) and assemble the report in a fixed order."""
    data = load_data(resolved) if data is None else data
    ids = [d.domain_id for d in data]
    targets = list(spec.target_domains) if spec.target_domains is not None else ids
    for t in targets:
        if t not in ids:
            raise ValueError(f"unknown target domain {t}; have {ids}")
    seeds = spec.active_seeds
    jobs = []
    for label, cfg in variants:
        for s in seeds:
            run_cfg = replace(cfg, global_seed=s)
            for t in targets:
                train, test = leave_one_domain_out(data, t)
                jobs.append((label, run_cfg, train, test))
    log.info("%s: %d training runs", kind, len(jobs))
    if spec.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    names = {d.domain_id: d.name or f"domain{d.domain_id}" for d in data}
    report = Report(kind, {t: names[t] for t in targets}, resolved=resolved)
    for label, _ in variants:
        mine = [r for r in results if r["label"] == label]
        final = {(r["seed"], r["target"]): r["accuracy"] for r in mine}
        report.rows.append(summarize(label, final, seeds, targets))
        for r in mine:
            report.records.extend(r["records"])
    if spec.out_dir is not None:
        write_outputs(report, Path(spec.out_dir))
    return report


def write_outputs(report: Report, out: Path) -> None:
    runs = out / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    if report.resolved is not None:
        (out / "config.resolved").write_text(report.resolved.to_text())
    streams: dict[str, list[str]] = {}
    for rec in report.records:
        name = f"{rec['label']}_seed{rec['seed']}.jsonl"
        streams.setdefault(name, []).append(json.dumps(rec, sort_keys=True))
    for name, lines in streams.items():
        (runs / _safe(name)).write_text("\n".join(lines) + "\n")
    (out / "summary.csv").write_text(report.summary_csv())


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._-=" else "-" for ch in name)


def _resolve(spec: RunSpec) -> ResolvedConfig:
    return parse_config(spec.config_path, spec.overrides)


def run_comparison(spec: RunSpec, data=None) -> Report:
    resolved = _resolve(spec)
    base = resolved.federation
    variants = [(m, replace(base, method=m)) for m in METHODS]
    return execute("compare", variants, spec, resolved, data)


def ablation_label(ccdt: bool, difp: bool, ra: bool, js: bool) -> str:
    aug = "+".join(n for n, on in (("ccdt", ccdt), ("difp", difp)) if on)
    losses = "+".join(n for n, on in (("ra", ra), ("js", js)) if on) or "none"
    return f"{aug}|{losses}"


def run_ablation(spec: RunSpec, data=None) -> Report:
    resolved = _resolve(spec)
    base = replace(resolved.federation, method="fedccrl")
    variants = []
    for ccdt, difp in AUGMENT_COMBOS:
        for ra, js in LOSS_COMBOS:
            flags = AblationFlags(ccdt, difp, ra, js)
            variants.append((ablation_label(ccdt, difp, ra, js), replace(base, flags=flags)))
    return execute("ablate", variants, spec, resolved, data)


def sweep_config(base: FederationConfig, parameter: str, value: float) -> FederationConfig:
    """Apply one sweep value, holding the partner weight at its fixed value."""
    if parameter == "r":
        return replace(base, upload_ratio=value)
    if parameter == "lambda1":
        return replace(base, loss=replace(base.loss, lambda1=value, lambda2=1.0))
    if parameter == "lambda2":
        return replace(base, loss=replace(base.loss, lambda1=LossWeights.lambda1, lambda2=value))
    raise ValueError(f"sweep parameter must be one of {SWEEP_PARAMETERS}, got {parameter!r}")


def run_sweep(spec: RunSpec, parameter: str, values, data=None) -> Report:
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"sweep parameter must be one of {SWEEP_PARAMETERS}, got {parameter!r}")
    resolved = _resolve(spec)
    base = resolved.federation
    if spec.method is not None:
        base = replace(base, method=spec.method)
    variants = []
    for v in values:
        cfg = sweep_config(base, parameter, float(v))
        variants.append((f"{cfg.method}[{parameter}={v:g}]", cfg))
    return execute("sweep", variants, spec, resolved, data)


def run_train(spec: RunSpec, data=None) -> Report:
    resolved = _resolve(spec)
    base = resolved.federation
    if spec.method is not None:
        base = replace(base, method=spec.method)
    return execute("train", [(base.method, base)], spec, resolved, data)


def generate_dataset(spec: RunSpec) -> list[DomainDataset]:
    resolved = _resolve(spec)
    data = generate_synthetic(resolved.synthetic)
    if spec.out_dir is not None:
        write_image_root(spec.out_dir, data)
        Path(spec.out_dir, "config.resolved").write_text(resolved.to_text())
    return data


# ---------------------------------------------------------------- CLI


def _int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _targets(text: str):
    return None if text == "all" else _int_tuple(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                        help="override one config key (repeatable)")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("--seeds", type=_int_tuple, default=DEFAULT_SEEDS, help="comma separated seeds")
    common.add_argument("--repeats", type=int, default=None, help="use only the first N seeds")
    common.add_argument("--method", choices=METHODS, default=None)
    common.add_argument("--target-domain", type=_targets, default=None, metavar="ID|all",
                        help="comma separated target domain ids, or all")
    common.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fedccrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("compare", parents=[common], help="fedccrl vs fedavg, leave-one-domain-out")
    sub.add_parser("ablate", parents=[common], help="12-row augmentation x alignment grid")
    sw = sub.add_parser("sweep", parents=[common], help="vary r, lambda1 or lambda2")
    sw.add_argument("--param", choices=SWEEP_PARAMETERS, required=True)
    sw.add_argument("--values", type=_float_list, required=True, help="comma separated values")
    sub.add_parser("train", parents=[common], help="single method run")
    sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset as PNM folders")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        spec = RunSpec(
            config_path=args.config,
            overrides=tuple(args.overrides),
            out_dir=args.out,
            repeats=args.repeats,
            seeds=args.seeds,
            method=args.method,
            target_domains=args.target_domain,
            jobs=args.jobs,
        )
        if args.verb == "gen-data":
            data = generate_dataset(spec)
            print(f"wrote {sum(len(d) for d in data)} images in {len(data)} domains to {args.out}")
            return 0
        if args.verb == "compare":
            report = run_comparison(spec)
        elif args.verb == "ablate":
            report = run_ablation(spec)
        elif args.verb == "sweep":
            report = run_sweep(spec, args.param, args.values)
        else:
            report = run_train(spec)
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"fedccrl: error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(report.summary_csv())
    return 0


if __name__ == "__main__":
    sys.exit(main())
