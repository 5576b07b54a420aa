"""Benchmark evaluation: filtered MRR / Hits@K on hard answers, answer-set
cardinality error with a validation-selected threshold, and interpretation
accuracy of recovered intermediate assignments.

Ranks use the mean-rank tie convention; all metrics are reported as
percentages. Structure aggregates follow the usual table layout: avg_p over
the nine EPFO structures, avg_ood over pi/ip/2u/up, avg_n over the five
negation structures.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .adjacency import NeuralAdjacency
from .kg import KnowledgeGraph
from .oracle import check_interpretation
from .queries import (
    ALL_STRUCTURES,
    CHAIN_EXTENSIONS,
    EPFO_STRUCTURES,
    NEGATION_STRUCTURES,
    OOD_STRUCTURES,
    GeneratedQuery,
)
from .solver import backward, forward, predict_cardinality

INTERPRETABLE_STRUCTURES = ("2p", "3p", "pi", "ip", "up", "inp", "pin", "pni")
CARDINALITY_THRESHOLDS = tuple(round(0.1 * k, 1) for k in range(1, 10))

_KNOWN_STRUCTURES = set(ALL_STRUCTURES) | set(CHAIN_EXTENSIONS)


class EvalError(Exception):
    pass


def filtered_rank(values: np.ndarray, target: int, filter_out: set[int]) -> float:
    """1 + strictly-better competitors + half the ties, competitors being
    all entities outside filter_out and distinct from the target."""
    if target in filter_out:
        raise EvalError("target must not be in the filter set")
    mask = np.ones(len(values), dtype=bool)
    if filter_out:
        mask[list(filter_out)] = False
    mask[target] = False
    t = values[target]
    competitors = values[mask]
    greater = int(np.count_nonzero(competitors > t))
    ties = int(np.count_nonzero(competitors == t))
    return 1.0 + greater + ties / 2.0


@dataclass
class StructureMetrics:
    n_queries: int = 0
    mrr: float = 0.0
    hits: dict[int, float] = field(default_factory=dict)
    ms_per_query: float = 0.0
    max_support: int = 0


@dataclass
class EvalReport:
    per_structure: dict[str, StructureMetrics]
    ks: tuple[int, ...]
    avg_p: Optional[float] = None
    avg_ood: Optional[float] = None
    avg_n: Optional[float] = None
    cardinality: Optional[dict] = None
    interpretation: Optional[dict] = None
    metadata: dict = field(default_factory=dict)


def _query_metrics(adjacency, query: GeneratedQuery, ks, alpha, alpha_scope):
    start = time.perf_counter()
    result = forward(query.tree, adjacency, alpha=alpha, alpha_scope=alpha_scope)
    root = result.root_vector
    answers = query.easy | query.hard
    rr, hit = [], {k: [] for k in ks}
    for target in sorted(query.hard):
        rank = filtered_rank(root, target, answers - {target})
        rr.append(1.0 / rank)
        for k in ks:
            hit[k].append(1.0 if rank <= k else 0.0)
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    return (
        float(np.mean(rr)),
        {k: float(np.mean(hit[k])) for k in ks},
        elapsed_ms,
        result.max_support,
    )


def run_eval(
    adjacency: NeuralAdjacency,
    queries: Sequence[GeneratedQuery],
    ks: Sequence[int] = (1, 3, 10),
    alpha: float = 1.0,
    alpha_scope: str = "query",
    threads: int = 1,
) -> EvalReport:
    """Filtered MRR / Hits@K per structure: one forward pass per query, one
    filtered rank per hard answer, averaged within the query, then across
    queries of the structure."""
    ks = tuple(sorted(ks))
    by_structure: dict[str, list[GeneratedQuery]] = {}
    for q in queries:
        if q.structure not in _KNOWN_STRUCTURES:
            raise EvalError(f"unknown query structure {q.structure!r}")
        by_structure.setdefault(q.structure, []).append(q)

    per_structure: dict[str, StructureMetrics] = {}
    order = [s for s in ALL_STRUCTURES + CHAIN_EXTENSIONS if s in by_structure]
    for structure in order:
        qs = by_structure[structure]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(lambda q: _query_metrics(adjacency, q, ks, alpha, alpha_scope), qs))
        else:
            rows = [_query_metrics(adjacency, q, ks, alpha, alpha_scope) for q in qs]
        metrics = StructureMetrics(
            n_queries=len(qs),
            mrr=100.0 * float(np.mean([r[0] for r in rows])),
            hits={k: 100.0 * float(np.mean([r[1][k] for r in rows])) for k in ks},
            ms_per_query=float(np.mean([r[2] for r in rows])),
            max_support=max(r[3] for r in rows),
        )
        per_structure[structure] = metrics

    def group_avg(names):
        values = [per_structure[s].mrr for s in names if s in per_structure]
        return float(np.mean(values)) if values else None

    return EvalReport(
        per_structure=per_structure,
        ks=ks,
        avg_p=group_avg(EPFO_STRUCTURES),
        avg_ood=group_avg(OOD_STRUCTURES),
        avg_n=group_avg(NEGATION_STRUCTURES),
        metadata={
            "alpha": alpha,
            "alpha_scope": alpha_scope,
            "rank_convention": "mean rank over ties; easy and hard answers filtered",
        },
    )


def eval_cardinality(
    adjacency: NeuralAdjacency,
    valid_queries: Sequence[GeneratedQuery],
    test_queries: Sequence[GeneratedQuery],
    alpha: float = 1.0,
    alpha_scope: str = "query",
) -> dict:
    """Pick the threshold minimizing validation MAPE, report test MAPE.

    The error term is |predicted - truth| / truth with truth the size of
    the full (easy plus hard) answer set.
    """
    if not valid_queries or not test_queries:
        raise EvalError("cardinality evaluation needs non-empty valid and test query sets")

    def mape_terms(queries, threshold):
        terms = []
        for q in queries:
            root = forward(q.tree, adjacency, alpha=alpha, alpha_scope=alpha_scope).root_vector
            truth = len(q.easy | q.hard)
            pred = predict_cardinality(root, threshold)
            terms.append(abs(pred - truth) / truth)
        return terms

    valid_scores = {}
    for threshold in CARDINALITY_THRESHOLDS:
        valid_scores[threshold] = 100.0 * float(np.mean(mape_terms(valid_queries, threshold)))
    chosen = min(CARDINALITY_THRESHOLDS, key=lambda t: (valid_scores[t], t))

    per_structure: dict[str, list[float]] = {}
    for q in test_queries:
        root = forward(q.tree, adjacency, alpha=alpha, alpha_scope=alpha_scope).root_vector
        truth = len(q.easy | q.hard)
        pred = predict_cardinality(root, chosen)
        per_structure.setdefault(q.structure, []).append(abs(pred - truth) / truth)
    structure_mape = {
        s: 100.0 * float(np.mean(terms)) for s, terms in sorted(per_structure.items())
    }
    return {
        "threshold": chosen,
        "valid_mape": valid_scores[chosen],
        "test_mape": 100.0 * float(np.mean([t for terms in per_structure.values() for t in terms])),
        "per_structure": structure_mape,
    }


def eval_interpretation(
    adjacency: NeuralAdjacency,
    full_kg: KnowledgeGraph,
    queries: Sequence[GeneratedQuery],
    ks: Sequence[int] = (1, 3, 10),
    alpha: float = 1.0,
    alpha_scope: str = "query",
) -> dict:
    """Accuracy of backward-recovered assignments against the full graph,
    for hard answers predicted within each top-K cut and for all hard
    answers ("all"). Structures whose assignments are trivially true are
    rejected."""
    ks = tuple(sorted(ks))
    for q in queries:
        if q.structure not in INTERPRETABLE_STRUCTURES:
            raise EvalError(f"structure {q.structure!r} is trivially interpretable")

    levels = [str(k) for k in ks] + ["all"]
    counts: dict[str, dict[str, list[int]]] = {}
    for q in queries:
        result = forward(q.tree, adjacency, alpha=alpha, alpha_scope=alpha_scope)
        root = result.root_vector
        answers = q.easy | q.hard
        bucket = counts.setdefault(q.structure, {lvl: [0, 0] for lvl in levels})
        for target in sorted(q.hard):
            rank = filtered_rank(root, target, answers - {target})
            assignment = backward(q.tree, result, adjacency, target, alpha=alpha, alpha_scope=alpha_scope)
            valid = check_interpretation(q.tree, assignment, full_kg)
            for k in ks:
                if rank <= k:
                    bucket[str(k)][0] += int(valid)
                    bucket[str(k)][1] += 1
            bucket["all"][0] += int(valid)
            bucket["all"][1] += 1

    accuracy = {
        s: {
            lvl: (100.0 * good / total if total else None)
            for lvl, (good, total) in levels_map.items()
        }
        for s, levels_map in sorted(counts.items())
    }
    monotone = all(
        _non_increasing([v for v in (acc.get(str(k)) for k in ks) if v is not None])
        for acc in accuracy.values()
    )
    return {
        "accuracy": accuracy,
        "ks": list(ks) + ["all"],
        "monotone_in_k": monotone,
        "definition": "hard answers ranked within top-K after filtering; assignment "
        "checked as a boolean query against the full graph",
    }


def _non_increasing(xs) -> bool:
    return all(a >= b for a, b in zip(xs, xs[1:]))


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

TABLE_ORDER = ("avg_p", "avg_ood", "avg_n") + ALL_STRUCTURES + CHAIN_EXTENSIONS


def report_to_dict(report: EvalReport, include_timing: bool = True) -> dict:
    out = {
        "aggregates": {"avg_p": report.avg_p, "avg_ood": report.avg_ood, "avg_n": report.avg_n},
        "per_structure": {
            s: {
                "n_queries": m.n_queries,
                "mrr": m.mrr,
                **{f"hits@{k}": m.hits[k] for k in report.ks},
                "max_support": m.max_support,
            }
            for s, m in report.per_structure.items()
        },
        "metadata": report.metadata,
    }
    if include_timing:
        out["timing_ms_per_query"] = {
            s: m.ms_per_query for s, m in report.per_structure.items()
        }
    if report.cardinality is not None:
        out["cardinality"] = report.cardinality
    if report.interpretation is not None:
        out["interpretation"] = report.interpretation
    return out


def report_json(report: EvalReport, include_timing: bool = True) -> str:
    return json.dumps(report_to_dict(report, include_timing), indent=2, sort_keys=True) + "\n"


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.1f}"


def report_table(report: EvalReport, include_timing: bool = True) -> str:
    columns = [c for c in TABLE_ORDER if c in ("avg_p", "avg_ood", "avg_n") or c in report.per_structure]

    def cell(metric, col):
        if col == "avg_p":
            return report.avg_p if metric == "mrr" else None
        if col == "avg_ood":
            return report.avg_ood if metric == "mrr" else None
        if col == "avg_n":
            return report.avg_n if metric == "mrr" else None
        m = report.per_structure[col]
        if metric == "mrr":
            return m.mrr
        if metric.startswith("hits@"):
            return m.hits.get(int(metric.split("@")[1]))
        if metric == "ms/query":
            return m.ms_per_query
        return None

    metrics = ["mrr"] + [f"hits@{k}" for k in report.ks]
    if include_timing:
        metrics.append("ms/query")
    widths = [max(len(c), 7) for c in columns]
    head = "metric".ljust(10) + "  " + "  ".join(c.rjust(w) for c, w in zip(columns, widths))
    lines = [head, "-" * len(head)]
    for metric in metrics:
        row = metric.ljust(10) + "  " + "  ".join(
            _fmt(cell(metric, c)).rjust(w) for c, w in zip(columns, widths)
        )
        lines.append(row)
    return "\n".join(lines) + "\n"


def report_csv(report: EvalReport, include_timing: bool = True) -> str:
    header = ["structure", "n_queries", "mrr"] + [f"hits@{k}" for k in report.ks]
    if include_timing:
        header.append("ms_per_query")
    rows = [",".join(header)]
    for s, m in report.per_structure.items():
        row = [s, str(m.n_queries), f"{m.mrr:.6f}"] + [f"{m.hits[k]:.6f}" for k in report.ks]
        if include_timing:
            row.append(f"{m.ms_per_query:.3f}")
        rows.append(",".join(row))
    for name, value in (("avg_p", report.avg_p), ("avg_ood", report.avg_ood), ("avg_n", report.avg_n)):
        if value is not None:
            row = [name, "", f"{value:.6f}"] + ["" for _ in report.ks]
            if include_timing:
                row.append("")
            rows.append(",".join(row))
    return "\n".join(rows) + "\n"
