"""Study configuration, deterministic parallel execution, and artifacts.

A study is described by a single JSON document (fail-closed: unknown keys are
errors). Replication r always runs on SeedStream(master_seed, r), so the rank
output is a pure function of the configuration no matter how many workers are
used. Artifacts: ranks.csv (flushed incrementally), report.json, and one
ECDF-difference SVG per comparison.
"""

from __future__ import annotations

import argparse
import csv
import json
import multiprocessing
import os
import re
import sys
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .calibration import (
    CS1_MATRIX_LABELS,
    InsufficientReplicationsError,
    RankRecord,
    UniformityReport,
    ecdf_uniformity_band,
    group_by_comparison,
    run_cs1_matrix,
    run_cs2_study,
    run_sbc,
)
from .inference import McmcConfig, SamplerQualityError
from .models import CS1, CS2, TOY_NORMAL, make_spec
from .qoi import QoiLabel
from .rngdist import ParameterError

CASE_CS1 = "cs1"
CASE_CS2 = "cs2"
CASE_SBC_ONLY = "sbc_only"
CASE_TOY = "toy"
_CASES = (CASE_CS1, CASE_CS2, CASE_SBC_ONLY, CASE_TOY)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SAMPLER = 3

_RANKS_HEADER = ("replication", "prior_label", "posterior_label", "k", "S")


class ConfigError(ValueError):
    """Configuration file violates the published schema."""


@dataclass(frozen=True)
class StudyConfig:
    case: str
    R: int
    N: int
    G: int = 20
    k: int = 10
    family: str | None = None
    x_fixed: object = 1.0  # scalar for cs1, sequence for cs2
    n_new_levels: int = 200
    grid_resolution: int = 50
    prior_overrides: tuple = ()
    mcmc: McmcConfig = McmcConfig()
    fault_shrink: float = 1.0
    prior_qois: tuple[str, ...] = ()
    posterior_qois: tuple[str, ...] = ()
    alpha: float = 0.05
    master_seed: int = 0
    workers: int = 1
    output_dir: str = "qoi-check-out"

    def __post_init__(self) -> None:
        if self.case not in _CASES:
            raise ConfigError(f"unknown case {self.case!r}; expected one of {_CASES}")
        if self.R < 1:
            raise ConfigError("R must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0.0 < self.fault_shrink <= 1.0:
            raise ConfigError("fault_shrink must lie in (0, 1]")

    def with_labels(self, prior, posterior) -> "StudyConfig":
        return replace(self, prior_qois=tuple(prior), posterior_qois=tuple(posterior))


_CASE_DEFAULTS: dict[str, dict] = {
    CASE_CS1: {"R": 100, "N": 500, "G": 20, "x_fixed": 1.0, "n_new_levels": 200},
    CASE_CS2: {
        "R": 20,
        "N": 10000,
        "k": 10,
        "x_fixed": [0.1, 0.25, 0.5, 0.75, 0.9],
        "grid_resolution": 50,
    },
    CASE_TOY: {"R": 1000, "N": 10},
    CASE_SBC_ONLY: {"R": 100, "N": 500, "G": 20, "k": 10},
}

_TOP_LEVEL_KEYS = {
    "case",
    "R",
    "N",
    "G",
    "k",
    "family",
    "x_fixed",
    "n_new_levels",
    "grid_resolution",
    "prior_overrides",
    "mcmc",
    "fault_shrink",
    "prior_qois",
    "posterior_qois",
    "alpha",
    "master_seed",
    "workers",
    "output_dir",
}

_MCMC_KEYS = {
    "chains",
    "warmup",
    "post_warmup",
    "target_S",
    "rw_target_acceptance",
    "ess_floor_fraction",
    "max_attempts",
}


def _require_int(value, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return value


def _require_number(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)


def _parse_prior_overrides(raw) -> tuple:
    if not isinstance(raw, dict):
        raise ConfigError("prior_overrides must be an object of name -> [kind, p1, p2]")
    out = []
    for name, desc in raw.items():
        if (
            not isinstance(desc, list)
            or len(desc) != 3
            or not isinstance(desc[0], str)
        ):
            raise ConfigError(
                f"prior override for {name!r} must be [kind, p1, p2], got {desc!r}"
            )
        out.append(
            (
                str(name),
                (desc[0], _require_number(desc[1], name), _require_number(desc[2], name)),
            )
        )
    return tuple(out)


def _parse_labels(raw, key: str) -> tuple[str, ...]:
    if not isinstance(raw, list) or not all(isinstance(v, str) for v in raw):
        raise ConfigError(f"{key} must be a list of QOI label strings")
    for text in raw:
        try:
            QoiLabel.parse(text)
        except ParameterError as exc:
            raise ConfigError(f"invalid QOI label in {key}: {exc}") from None
    return tuple(raw)


def load_config(path) -> StudyConfig:
    """Parse and validate a study configuration document (fail-closed)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(payload) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "case" not in payload:
        raise ConfigError("config must name a case")
    case = payload["case"]
    if not isinstance(case, str) or case not in _CASES:
        raise ConfigError(f"case must be one of {_CASES}, got {case!r}")

    merged = dict(_CASE_DEFAULTS[case])
    for key, value in payload.items():
        if key != "case":
            merged[key] = value

    kwargs: dict = {"case": case}
    for key in ("R", "N", "G", "k", "n_new_levels", "grid_resolution", "workers"):
        if key in merged:
            kwargs[key] = _require_int(merged[key], key)
    if "master_seed" in merged:
        kwargs["master_seed"] = _require_int(merged["master_seed"], "master_seed")
    for key in ("alpha", "fault_shrink"):
        if key in merged:
            kwargs[key] = _require_number(merged[key], key)
    if "output_dir" in merged:
        if not isinstance(merged["output_dir"], str):
            raise ConfigError("output_dir must be a string")
        kwargs["output_dir"] = merged["output_dir"]
    if "family" in merged:
        family = merged["family"]
        if family not in (CS1, CS2, TOY_NORMAL):
            raise ConfigError(
                f"family must be one of {(CS1, CS2, TOY_NORMAL)}, got {family!r}"
            )
        kwargs["family"] = family
    if "x_fixed" in merged:
        xf = merged["x_fixed"]
        if case == CASE_CS2:
            if not isinstance(xf, list) or not xf:
                raise ConfigError("x_fixed must be a non-empty list for cs2")
            kwargs["x_fixed"] = tuple(_require_number(v, "x_fixed") for v in xf)
        else:
            kwargs["x_fixed"] = _require_number(xf, "x_fixed")
    if "prior_overrides" in merged:
        kwargs["prior_overrides"] = _parse_prior_overrides(merged["prior_overrides"])
    for key in ("prior_qois", "posterior_qois"):
        if key in merged:
            kwargs[key] = _parse_labels(merged[key], key)
    if "mcmc" in merged:
        raw = merged["mcmc"]
        if not isinstance(raw, dict):
            raise ConfigError("mcmc must be an object")
        unknown = set(raw) - _MCMC_KEYS
        if unknown:
            raise ConfigError(f"unknown mcmc keys: {sorted(unknown)}")
        try:
            kwargs["mcmc"] = McmcConfig(**raw)
        except (TypeError, ParameterError) as exc:
            raise ConfigError(f"invalid mcmc settings: {exc}") from None
    try:
        return StudyConfig(**kwargs)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# execution


def _pin_blas_threads() -> None:
    # replication-level parallelism only; nested BLAS threading would both
    # oversubscribe the box and break run-to-run timing comparability
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(var, "1")


def resolve_workers(config: StudyConfig) -> int:
    env = os.environ.get("QOI_CHECK_WORKERS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"QOI_CHECK_WORKERS must be an integer, got {env!r}")
        if value < 1:
            raise ConfigError("QOI_CHECK_WORKERS must be >= 1")
        return value
    return config.workers


@contextmanager
def _replication_mapper(workers: int):
    if workers <= 1:
        yield map
    else:
        with multiprocessing.get_context().Pool(
            processes=workers, initializer=_pin_blas_threads
        ) as pool:
            yield lambda fn, tasks: pool.imap(fn, tasks, chunksize=1)


class _RanksWriter:
    """Incremental CSV sink; completed replications survive a later crash."""

    def __init__(self, path: Path):
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(_RANKS_HEADER)
        self._fh.flush()

    def write_batch(self, records: list[RankRecord]) -> None:
        for rec in records:
            self._writer.writerow(
                [rec.replication, rec.prior_label, rec.posterior_label, rec.k, rec.S]
            )
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _atomic_write_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _safe_name(label: str) -> str:
    cleaned = re.sub(r"[^A-Za-z0-9._=-]+", "-", label).strip("-")
    return cleaned or "label"


def _spec_for_sbc(config: StudyConfig):
    family = config.family
    if config.case == CASE_TOY:
        family = TOY_NORMAL
    if family is None:
        family = CS1
    overrides = dict(config.prior_overrides)
    if family == CS1:
        return make_spec(CS1, N=config.N, G=config.G, prior_overrides=overrides)
    if family == CS2:
        return make_spec(CS2, N=config.N, k=config.k, prior_overrides=overrides)
    return make_spec(TOY_NORMAL, N=config.N, prior_overrides=overrides)


def _emit_reports(
    config: StudyConfig,
    records: list[RankRecord],
    out_dir: Path,
    extras: dict,
    sampler_status: dict,
) -> dict:
    comparisons = []
    plot_dir = out_dir / "plots"
    plot_dir.mkdir(parents=True, exist_ok=True)
    notes = extras.get("notes", {})
    for cid, recs in group_by_comparison(records).items():
        try:
            report = ecdf_uniformity_band(recs, alpha=config.alpha)
        except InsufficientReplicationsError as exc:
            comparisons.append(
                {
                    "prior_label": cid[0],
                    "posterior_label": cid[1],
                    "R": len(recs),
                    "error": str(exc),
                }
            )
            continue
        entry = report.to_json_dict()
        if report.posterior_label in notes:
            entry["note"] = notes[report.posterior_label]
        comparisons.append(entry)
        name = f"{_safe_name(cid[0])}__{_safe_name(cid[1])}.svg"
        emit_ecdf_plot(report, plot_dir / name)

    payload = {
        "case": config.case,
        "R": config.R,
        "S": records[0].S if records else None,
        "alpha": config.alpha,
        "master_seed": config.master_seed,
        "sampler_quality": sampler_status,
        "comparisons": comparisons,
    }
    for key, value in extras.items():
        if key != "notes":
            payload[key] = value
    return payload


def _execute(config: StudyConfig, runner) -> int:
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = _RanksWriter(out_dir / "ranks.csv")
    workers = resolve_workers(config)
    records: list[RankRecord] = []
    extras: dict = {}
    sampler_status: dict = {"status": "ok"}
    exit_code = EXIT_OK
    try:
        with _replication_mapper(workers) as mapper:
            records, extras = runner(config, mapper, writer.write_batch)
    except SamplerQualityError as err:
        sampler_status = {
            "status": "failed",
            "replication": err.replication,
            "message": str(err),
            "diagnostics": {
                name: entry
                for name, entry in err.diagnostics.items()
                if not name.startswith("_")
            },
        }
        exit_code = EXIT_SAMPLER
    finally:
        writer.close()
    payload = _emit_reports(config, records, out_dir, extras, sampler_status)
    _atomic_write_json(out_dir / "report.json", payload)
    return exit_code


def _run_case(config: StudyConfig, mapper, on_batch):
    if config.case == CASE_CS1:
        return run_cs1_matrix(config, mapper=mapper, on_batch=on_batch)
    if config.case == CASE_CS2:
        return run_cs2_study(config, mapper=mapper, on_batch=on_batch)
    return _run_sbc_case(config, mapper, on_batch)


def _run_sbc_case(config: StudyConfig, mapper, on_batch):
    spec = _spec_for_sbc(config)
    records = run_sbc(
        spec,
        config.R,
        config.mcmc,
        config.master_seed,
        fault_shrink=config.fault_shrink,
        mapper=mapper,
        on_batch=on_batch,
    )
    return records, {}


def run_study(config) -> int:
    """Execute a full study; returns the process exit status."""
    cfg = config if isinstance(config, StudyConfig) else load_config(config)
    return _execute(cfg, _run_case)


def run_self_sbc(config) -> int:
    """Parameter-wise SBC gate (sbc_only / toy cases)."""
    cfg = config if isinstance(config, StudyConfig) else load_config(config)
    if cfg.case not in (CASE_SBC_ONLY, CASE_TOY):
        raise ConfigError("self-SBC needs case 'sbc_only' or 'toy'")
    return _execute(cfg, lambda c, m, cb: _run_sbc_case(c, m, cb))


# ---------------------------------------------------------------------------
# plotting

_SVG_W, _SVG_H = 640, 400
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 24, 48, 44


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def emit_ecdf_plot(report: UniformityReport, path) -> None:
    """Deterministic SVG of the ECDF-difference curve inside its band."""
    t = np.asarray(report.eval_points, float)
    curve = np.asarray(report.ecdf, float) - t
    lo = np.asarray(report.band_lo, float) - t
    hi = np.asarray(report.band_hi, float) - t
    span = max(float(np.max(np.abs(np.concatenate([curve, lo, hi])))), 0.02) * 1.15

    x0, x1 = _MARGIN_L, _SVG_W - _MARGIN_R
    y0, y1 = _SVG_H - _MARGIN_B, _MARGIN_T

    def sx(v: float) -> str:
        return _fmt(x0 + v * (x1 - x0))

    def sy(v: float) -> str:
        return _fmt(y0 + (v + span) * (y1 - y0) / (2.0 * span))

    band_pts = [f"{sx(ti)},{sy(hi[i])}" for i, ti in enumerate(t)]
    band_pts += [f"{sx(ti)},{sy(lo[i])}" for i, ti in reversed(list(enumerate(t)))]
    curve_pts = [f"{sx(ti)},{sy(curve[i])}" for i, ti in enumerate(t)]

    verdict = "PASS" if report.passed else "FAIL"
    verdict_fill = "#2e7d32" if report.passed else "#c62828"
    title = f"{report.prior_label} vs {report.posterior_label}"
    subtitle = (
        f"R={report.R} S={report.S} gamma={_fmt(report.gamma)} "
        f"chi2_p={_fmt(report.chi2_p)}"
    )

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="#ffffff"/>',
        f'<text x="{_MARGIN_L}" y="20" font-family="monospace" font-size="13">{title}</text>',
        f'<text x="{_MARGIN_L}" y="36" font-family="monospace" font-size="11" '
        f'fill="#555555">{subtitle}</text>',
        f'<polygon points="{" ".join(band_pts)}" fill="#c9dcf0" stroke="none"/>',
        f'<line x1="{x0}" y1="{sy(0.0)}" x2="{x1}" y2="{sy(0.0)}" '
        'stroke="#888888" stroke-width="1" stroke-dasharray="4,3"/>',
        f'<polyline points="{" ".join(curve_pts)}" fill="none" stroke="#111111" '
        'stroke-width="1.5"/>',
        f'<line x1="{x0}" y1="{y1}" x2="{x0}" y2="{y0}" stroke="#000000"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#000000"/>',
        f'<text x="{x0}" y="{y0 + 16}" font-family="monospace" font-size="10">0</text>',
        f'<text x="{x1 - 8}" y="{y0 + 16}" font-family="monospace" font-size="10">1</text>',
        f'<text x="{x0 - 58}" y="{sy(span / 1.15)}" font-family="monospace" '
        f'font-size="10">+{_fmt(span / 1.15)}</text>',
        f'<text x="{x0 - 58}" y="{sy(-span / 1.15)}" font-family="monospace" '
        f'font-size="10">-{_fmt(span / 1.15)}</text>',
        f'<text x="{x1 - 52}" y="{_MARGIN_T - 8}" font-family="monospace" '
        f'font-size="14" fill="{verdict_fill}">{verdict}</text>',
        "</svg>",
    ]
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# CLI


def _cmd_plot(report_path: Path, out_path: Path, index: int) -> int:
    payload = json.loads(Path(report_path).read_text(encoding="utf-8"))
    comparisons = payload.get("comparisons", [])
    if not comparisons:
        print("report contains no comparisons", file=sys.stderr)
        return EXIT_CONFIG
    if not 0 <= index < len(comparisons):
        print(
            f"comparison index {index} out of range 0..{len(comparisons) - 1}",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    entry = comparisons[index]
    if "error" in entry:
        print(f"comparison {index} has no band: {entry['error']}", file=sys.stderr)
        return EXIT_CONFIG
    report = UniformityReport.from_json_dict(entry)
    emit_ecdf_plot(report, out_path)
    return EXIT_OK


def main(argv=None) -> int:
    _pin_blas_threads()
    parser = argparse.ArgumentParser(
        prog="qoi-check",
        description="Simulation-based calibration checks for derived quantities of interest.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a replication study from a JSON config")
    p_run.add_argument("config", type=Path)
    p_sbc = sub.add_parser("sbc", help="run the parameter-wise SBC gate")
    p_sbc.add_argument("config", type=Path)
    p_plot = sub.add_parser("plot", help="re-render one comparison from a report")
    p_plot.add_argument("report", type=Path)
    p_plot.add_argument("out", type=Path)
    p_plot.add_argument(
        "--comparison", type=int, default=0, help="index into the report's comparisons"
    )
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return run_study(args.config)
        if args.command == "sbc":
            return run_self_sbc(args.config)
        return _cmd_plot(args.report, args.out, args.comparison)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
