"""
Strategy comparison
Collects error records of strategy variants and checks their expected ordering
"""

from datetime import datetime
from typing import Any, Dict, List, Optional, Tuple
import json
import logging
import math

from experiments.fitting import ConvergenceFit, fit_order
from experiments.montecarlo import ErrorRecord
from integrator.sampler import StrategySpec

logger = logging.getLogger(__name__)


class StrategyComparison:
    """
    Error records of several strategies on the same experiment

    A variant is expected to beat another of the same kind when it draws
    more subdomains (larger k) or selects the inactive set less often
    (smaller rho).
    """

    def __init__(self, h_ref: float = 2.0 ** -8, margin: float = 2.0, fit_range=None):
        """
        Initialize comparison

        Args:
            h_ref: Step size at which the ordering is evaluated
            margin: Allowed excess in combined standard errors
            fit_range: Passed to fit_order
        """
        self.h_ref = h_ref
        self.margin = margin
        self.fit_range = fit_range
        self.strategies: Dict[str, StrategySpec] = {}
        self.results: Dict[str, List[ErrorRecord]] = {}

    def record_result(self, strategy: StrategySpec, record: ErrorRecord):
        label = strategy.label
        self.strategies[label] = strategy
        self.results.setdefault(label, []).append(record)

    def fit(self, label: str) -> Optional[ConvergenceFit]:
        try:
            return fit_order(self.results[label], self.fit_range)
        except ValueError as e:
            logger.debug(f"No fit for {label}: {e}")
            return None

    def _nearest(self, label: str, h: float) -> ErrorRecord:
        return min(self.results[label], key=lambda r: abs(math.log(r.h / h)))

    def error_at(self, label: str, h: Optional[float] = None) -> Tuple[float, float]:
        """
        (error, standard error) of a variant at h

        The error comes from the fitted curve when a fit exists, else from the
        record nearest in log h; the standard error always from that record.
        """
        h = h or self.h_ref
        nearest = self._nearest(label, h)
        fit = self.fit(label)
        error = fit.predict(h) if fit is not None else nearest.rel_error
        return error, nearest.std_err

    def expected_pairs(self) -> List[Tuple[str, str]]:
        """(better, worse) label pairs implied by k and rho"""
        pairs = []
        labels = list(self.strategies)
        for a in labels:
            for b in labels:
                sa, sb = self.strategies[a], self.strategies[b]
                if sa.kind != sb.kind or a == b:
                    continue
                if sa.kind == "uniform_k" and sa.k > sb.k:
                    pairs.append((a, b))
                elif sa.kind == "predictor" and sa.rho < sb.rho:
                    pairs.append((a, b))
        return pairs

    def check_ordering(self, better: str, worse: str, h: Optional[float] = None) -> Dict[str, Any]:
        """error(better) <= error(worse) + margin * sqrt(se_better^2 + se_worse^2)"""
        e_better, se_better = self.error_at(better, h)
        e_worse, se_worse = self.error_at(worse, h)
        allowance = self.margin * math.hypot(se_better, se_worse)
        passed = e_better <= e_worse + allowance
        if not passed:
            logger.warning(f"Ordering violated: {better} ({e_better:.3e}) vs {worse} ({e_worse:.3e})")
        return {
            "better": better,
            "worse": worse,
            "h": h or self.h_ref,
            "better_error": e_better,
            "worse_error": e_worse,
            "allowance": allowance,
            "passed": passed,
        }

    def check_all(self, h: Optional[float] = None) -> List[Dict[str, Any]]:
        return [self.check_ordering(better, worse, h) for better, worse in self.expected_pairs()]

    def get_stats(self) -> Dict[str, Any]:
        return {label: self._variant_stats(label) for label in self.results}

    def _variant_stats(self, label: str) -> Dict[str, Any]:
        records = self.results[label]
        fit = self.fit(label)
        error, std_err = self.error_at(label)
        return {
            "strategy": self.strategies[label].kind,
            "param": self.strategies[label].param,
            "points": len(records),
            "slope": round(fit.slope, 3) if fit else None,
            "intercept": round(fit.intercept, 3) if fit else None,
            "error_at_h_ref": error,
            "std_err_at_h_ref": std_err,
            "mean_batch_fraction": round(sum(r.mean_batch_fraction for r in records) / len(records), 3),
        }

    def export_results(self, filepath: str) -> str:
        """Export records, stats and ordering checks to a JSON file"""
        data = {
            "h_ref": self.h_ref,
            "stats": self.get_stats(),
            "ordering": self.check_all(),
            "results": {label: [r.model_dump() for r in recs] for label, recs in self.results.items()},
            "exported_at": datetime.utcnow().isoformat(),
        }
        with open(filepath, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2)
        return filepath
