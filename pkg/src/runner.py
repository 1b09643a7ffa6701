"""
Experiment Runner

Executes one validated ExperimentConfig and returns a deterministic result:
a JSON-safe payload (always carrying the version and resolved config), an
optional table for CSV output and the pass/fail verdict. Shared by the CLI
and the HTTP API.
"""

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd

from src.comparison import (build_lower_coupling, build_mean_lower_chain, build_mean_upper_chain,
                            build_upper_coupling, comparison_tilde, tail_inequality)
from src.config import ExperimentConfig, get_settings
from src.covariance import merge_reports, verify_cov_comp, verify_increment_lemma
from src.errors import RangeError
from src.extremes import (borell_check, build_tail_report, dekking_host_gap, first_order_table,
                          iqr_trend, max_variance, mc_max, tightness_reduction)
from src.lattice import GridSize
from src.parser import load_profile, version_string, write_field
from src.profile import (LOG2, SQRT_LOG2, build_comparison_profile, effective_profile,
                         expected_max, mibrw_centring)
from src.samplers import FieldSpec, sample_field
from src.second_moment import PathEventSpec, calibrate_cf, moments_table
from src.utils import STREAM_TAGS, Checkpoint, make_rng

logger = logging.getLogger(__name__)

# Quantiles of the reference maxima used as the default comparison levels
LEVEL_QUANTILES = (0.5, 0.75, 0.9, 0.95, 0.99)


@dataclass
class RunResult:
    """Outcome of one experiment."""

    command: str
    payload: dict[str, Any]
    table: pd.DataFrame | None = None
    passed: bool = True
    artifacts: list[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 2


class ExperimentRunner:
    """Runs a subcommand for a resolved configuration."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.profile = load_profile(config.profile)
        if "threads" in config.model_fields_set:
            self.threads = config.threads
        else:
            self.threads = get_settings().threads

    def meta(self) -> dict[str, Any]:
        return {"version": version_string(), "command": self.config.command,
                "config": self.config.resolved()}

    @property
    def seed(self) -> int:
        return self.config.seed if self.config.seed is not None else 0

    def run(self) -> RunResult:
        """
        Dispatch to the subcommand handler.

        Raises:
            DGFFError: Validation or module errors, surfaced unchanged
        """
        handlers = {
            "profile": self.run_profile,
            "sample": self.run_sample,
            "cov-check": self.run_cov_check,
            "compare": self.run_compare,
            "tails": self.run_tails,
            "second-moment": self.run_second_moment,
        }
        logger.info("running %s (config %s)", self.config.command, self.config.digest())
        result = handlers[self.config.command]()
        logger.info("%s finished: %s", self.config.command, "pass" if result.passed else "fail")
        return result

    def _field_spec(self, n: int) -> FieldSpec:
        kind = self.config.kind
        kappa = self.config.kappa if isinstance(self.config.kappa, int) else 0
        profile = None if kind == "dgff" else self.profile
        if kind == "ibrw" and kappa > 0:
            profile = comparison_tilde(self.profile, n, kappa)
        return FieldSpec(kind, n, profile, k0=self.config.k0 if kind == "tmibrw" else 0,
                         kappa=kappa if kind == "ibrw" else 0)

    def run_profile(self) -> RunResult:
        eff = effective_profile(self.profile)
        rows = []
        for n in self.config.n_list:
            row: dict[str, Any] = {"n": n}
            try:
                row["m_N"] = expected_max(self.profile, n)
                row["M_star"] = mibrw_centring(self.profile, n, n)
            except RangeError as exc:
                row["m_N"] = row["M_star"] = None
                row["note"] = str(exc)
            rows.append(row)
        payload = {"meta": self.meta(), "profile": self.profile.to_dict(),
                   "effective": eff.to_dict(), "first_order": eff.first_order(), "table": rows}
        if isinstance(self.config.kappa, int) and self.config.kappa > 0:
            payload["comparison"] = build_comparison_profile(
                self.profile, self.config.n, self.config.kappa).to_dict()
        return RunResult("profile", payload, pd.DataFrame(rows))

    def run_sample(self) -> RunResult:
        sample = sample_field(self._field_spec(self.config.n), self.seed)
        values = sample.values
        index = np.unravel_index(int(np.argmax(values)), values.shape)
        summary = {"max": float(values.max()), "argmax": [int(i) for i in index],
                   "mean": float(values.mean()), "var": float(values.var())}
        result = RunResult("sample", {"meta": self.meta(), "field": sample.header(),
                                      "summary": summary})
        if self.config.output:
            result.artifacts.append(str(write_field(sample, self.config.output)))
        return result

    def run_cov_check(self) -> RunResult:
        config = self.config
        if config.lemma == "cov_comp":
            checkpoint = Checkpoint(config.checkpoint, config.digest())
            report = verify_cov_comp(self.profile, config.n_list, config.items, self.seed,
                                     slope_tolerance=config.slope_tolerance, checkpoint=checkpoint)
        else:
            reports = [verify_increment_lemma(self.profile, GridSize(n), config.delta, self.seed)
                       for n in config.n_list]
            report = merge_reports(reports, config.slope_tolerance)
        if report.verdict == "undetermined":
            logger.warning("%s: fewer than two grid sizes, no growth verdict", report.lemma)
        rows = [{"item": item, "n": n, "deviation": dev, "pairs": entry.pairs.get(n)}
                for item, entry in report.items.items() for n, dev in sorted(entry.deviations.items())]
        payload = {"meta": self.meta(), "report": report.model_dump(mode="json")}
        return RunResult("cov-check", payload, pd.DataFrame(rows), report.verdict != "growing")

    def _levels(self, reference: np.ndarray) -> list[float]:
        if self.config.lambda_grid:
            return self.config.lambda_grid
        return [round(float(q), 6) for q in np.quantile(reference, LEVEL_QUANTILES)]

    def run_compare(self) -> RunResult:
        config, p, n = self.config, self.profile, self.config.n
        R, seed, threads = config.replicates, self.seed, self.threads
        payload: dict[str, Any] = {"meta": self.meta()}
        if config.direction in ("upper", "lower"):
            build = build_upper_coupling if config.direction == "upper" else build_lower_coupling
            spec = build(p, n, config.kappa)
            payload["coupling"] = spec.model_dump(mode="json")
            if not spec.slepian.passed:
                logger.warning("Slepian hypotheses fail for kappa=%d; skipping Monte Carlo", spec.kappa)
                return RunResult("compare", payload, None, False)
            if config.direction == "upper":
                lhs, _ = mc_max(FieldSpec("psi", n, p), R, seed, threads)
                tilde = comparison_tilde(p, n, spec.kappa)
                rhs, _ = mc_max(FieldSpec("ibrw", n, tilde, kappa=spec.kappa), R, seed, threads)
                relation = "P(max psi >= l) <= 2 P(max R >= l)"
                report = tail_inequality(lhs, rhs, self._levels(lhs), 2.0, relation)
            else:
                small, _ = mc_max(FieldSpec("mibrw", n - spec.kappa, p), R, seed, threads)
                rhs, _ = mc_max(FieldSpec("psi", n, p), R, seed, threads, vertices=spec.embedding)
                lhs = SQRT_LOG2 * small
                relation = "1/2 P(max sqrt(log 2) S >= l) <= P(max psi >= l)"
                report = tail_inequality(lhs, rhs, self._levels(lhs), 2.0, relation)
            payload["inequality"] = report.model_dump(mode="json")
            table = pd.DataFrame([point.model_dump() for point in report.points])
            return RunResult("compare", payload, table, report.holds)
        if config.direction == "mean-upper":
            spec, sf = build_mean_upper_chain(p, n)
            psi, _ = mc_max(FieldSpec("psi", n, p), R, seed, threads)
            walk, _ = mc_max(FieldSpec("mibrw", n, p), R, seed, threads)
            noise = make_rng(seed, STREAM_TAGS["noise"]).standard_normal((R, GridSize(n).size)).max(axis=1)
            lhs = psi
            rhs = SQRT_LOG2 * walk + spec.c1 * noise
            holds = sf.one_sided and _mean_le(lhs, rhs)
        else:
            spec, sf = build_mean_lower_chain(p, n)
            small = GridSize(n - 2)
            walk, _ = mc_max(FieldSpec("tmibrw" if spec.k0 else "mibrw", small.n, p, k0=spec.k0),
                             R, seed, threads)
            lhs = SQRT_LOG2 * walk
            rhs, _ = mc_max(FieldSpec("psi", n, p), R, seed, threads, vertices=spec.embedding)
            holds = sf.one_sided and _mean_le(lhs, rhs)
        payload["coupling"] = spec.model_dump(mode="json")
        payload["sudakov_fernique"] = sf.model_dump(mode="json")
        payload["means"] = {"lhs": float(lhs.mean()), "lhs_se": _se(lhs),
                            "rhs": float(rhs.mean()), "rhs_se": _se(rhs)}
        return RunResult("compare", payload, None, holds)

    def run_tails(self) -> RunResult:
        config = self.config
        reports, tables, specs, maxima_by_n = [], [], [], []
        borell = {}
        for n in config.n_list:
            spec = self._field_spec(n)
            maxima, _ = mc_max(spec, config.replicates, self.seed, self.threads)
            report = build_tail_report(spec, maxima, config.x_grid, config.lambda_grid,
                                       config.recentre)
            reports.append(report)
            table = pd.DataFrame([point.model_dump() for point in report.right_tail])
            table.insert(0, "n", n)
            tables.append(table)
            specs.append(spec)
            maxima_by_n.append(maxima)
            varmax = max_variance(spec)
            if varmax > 0:
                xs = [1.0, 2.0, 3.0, 2.0 * float(np.sqrt(n * LOG2))]
                borell[n] = borell_check(maxima, varmax, xs).to_dict(orient="records")
        passed = all(row["holds"] for rows in borell.values() for row in rows)
        payload: dict[str, Any] = {"meta": self.meta(),
                                   "reports": [r.model_dump(mode="json") for r in reports],
                                   "borell": {str(n): rows for n, rows in borell.items()}}
        if len(config.n_list) > 1:
            payload["first_order"] = first_order_table(specs, maxima_by_n).to_dict(orient="records")
        if config.tightness:
            payload["tightness"], ok = self._tightness(reports, maxima_by_n)
            passed = passed and ok
        return RunResult("tails", payload, pd.concat(tables, ignore_index=True), passed)

    def _tightness(self, reports, maxima_by_n) -> tuple[dict[str, Any], bool]:
        config = self.config
        centred = {r.n: m - r.centring for r, m in zip(reports, maxima_by_n)}
        iqr, verdict = iqr_trend(centred, config.slope_tolerance)
        reduction = {str(n): tightness_reduction(values) for n, values in centred.items()}
        out: dict[str, Any] = {"iqr": iqr.to_dict(orient="records"), "iqr_verdict": verdict,
                               "reduction": reduction}
        ok = verdict != "growing"
        if config.kind in ("dgff", "psi"):
            gaps = [dekking_host_gap(self.profile, n, config.replicates, self.seed, config.kind,
                                     self.threads) for n in config.n_list]
            out["dekking_host"] = [g.model_dump(mode="json") for g in gaps]
            ok = ok and all(g.holds for g in gaps)
        return out, ok

    def run_second_moment(self) -> RunResult:
        config, p, n = self.config, self.profile, self.config.n
        cf = config.cf or calibrate_cf(p, n, seed=self.seed)
        rows = moments_table(p, n, config.y_grid, cf, config.replicates, self.seed,
                             config.method, self.threads)
        payload = {"meta": self.meta(), "cf": cf,
                   "path_event": PathEventSpec.build(p, n, config.y_grid[0], cf).to_dict(),
                   "rows": rows}
        return RunResult("second-moment", payload, pd.DataFrame(rows),
                         all(row["holds"] for row in rows))


def _se(values: np.ndarray) -> float:
    return float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0


def _mean_le(lhs: np.ndarray, rhs: np.ndarray) -> bool:
    """E[lhs] <= E[rhs] within three combined standard errors."""
    return float(lhs.mean() - rhs.mean()) <= 3 * float(np.hypot(_se(lhs), _se(rhs)))
