"""Retrieval metrics: Normalized Average Rank (NAR) and Recall@K."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Mapping, Sequence

RecallMode = Literal["hit", "fraction"]
MissingPolicy = Literal["error", "pessimistic"]


class EvaluationError(ValueError):
    pass


class MissingQueryError(EvaluationError):
    pass


class MissingRelevantError(EvaluationError):
    pass


class RunParseError(EvaluationError):
    pass


@dataclass(frozen=True)
class RankingRun:
    """Ranked documents per query.

    ``rankings[q]`` maps document id to its 1-based rank. ``n_total`` is
    the size of the whole retrieval set, which may exceed what is listed.
    """

    n_total: int
    rankings: Mapping[str, Mapping[str, int]]

    def __post_init__(self):
        if self.n_total < 1:
            raise ValueError("N must be positive")
        for q, docs in self.rankings.items():
            ranks = list(docs.values())
            if len(set(ranks)) != len(ranks):
                raise ValueError(f"query {q}: duplicate ranks")
            if len(ranks) > self.n_total:
                raise ValueError(f"query {q}: {len(ranks)} ranked documents exceed N={self.n_total}")
            if ranks and (min(ranks) < 1 or max(ranks) > self.n_total):
                raise ValueError(f"query {q}: rank outside [1, {self.n_total}]")

    @classmethod
    def from_lists(cls, n_total: int, lists: Mapping[str, Sequence[str]]) -> "RankingRun":
        rankings = {}
        for q, docs in lists.items():
            if len(set(docs)) != len(docs):
                raise ValueError(f"query {q}: duplicate document ids")
            rankings[q] = {d: i + 1 for i, d in enumerate(docs)}
        return cls(n_total, rankings)


@dataclass
class QueryResult:
    query: str
    nar: float
    recall: dict[int, float]
    n_rel: int
    missing: int


@dataclass
class EvalReport:
    queries: list[QueryResult]
    ks: tuple[int, ...]
    recall_mode: str
    mean_nar: float = 0.0
    mean_recall: dict[int, float] = field(default_factory=dict)
    missing: int = 0


def nar_single(ranks: Iterable[int], n_total: int, n_rel: int) -> float:
    """NAR = (sum(R_i) - n_rel(n_rel+1)/2) / (N * n_rel); 0 is perfect."""
    ranks = list(ranks)
    if n_rel < 1:
        raise EvaluationError("N_rel must be at least 1")
    if len(ranks) != n_rel:
        raise EvaluationError(f"expected {n_rel} ranks, got {len(ranks)}")
    if len(set(ranks)) != len(ranks):
        raise EvaluationError("duplicate ranks")
    for r in ranks:
        if not 1 <= r <= n_total:
            raise EvaluationError(f"rank {r} outside [1, {n_total}]")
    # integer numerator and denominator: one correctly rounded division
    return (2 * sum(ranks) - n_rel * (n_rel + 1)) / (2 * n_total * n_rel)


def _bottom_ranks(taken: set[int], n_total: int, count: int) -> list[int]:
    out = []
    r = n_total
    while len(out) < count:
        if r not in taken:
            out.append(r)
        r -= 1
    return out


def evaluate(
    run: RankingRun,
    relevance: Mapping[str, Iterable[str]],
    ks: Sequence[int] = (1, 8),
    missing_policy: MissingPolicy = "pessimistic",
    recall_mode: RecallMode = "hit",
) -> EvalReport:
    """Per-query NAR and Recall@K plus their unweighted means.

    Under the pessimistic policy, relevant documents absent from a query's
    ranking take the lowest unused ranks (N, N-1, ...) and are counted in
    ``missing``.
    """
    if recall_mode not in ("hit", "fraction"):
        raise ValueError(f"unknown recall mode {recall_mode!r}")
    if missing_policy not in ("error", "pessimistic"):
        raise ValueError(f"unknown missing policy {missing_policy!r}")
    ks = tuple(sorted(set(int(k) for k in ks)))
    if any(k < 1 for k in ks):
        raise ValueError("K must be positive")

    results = []
    for q in sorted(relevance):
        rel = set(relevance[q])
        if not rel:
            raise EvaluationError(f"query {q}: empty relevance set")
        if q not in run.rankings:
            raise MissingQueryError(f"query {q} not present in run")
        ranking = run.rankings[q]
        ranks = [ranking[d] for d in rel if d in ranking]
        n_missing = len(rel) - len(ranks)
        if n_missing:
            if missing_policy == "error":
                raise MissingRelevantError(
                    f"query {q}: {n_missing} relevant documents missing from ranking"
                )
            ranks += _bottom_ranks(set(ranking.values()), run.n_total, n_missing)
        nar = nar_single(ranks, run.n_total, len(rel))
        recall = {}
        for k in ks:
            hits = sum(r <= k for r in ranks)
            recall[k] = float(hits > 0) if recall_mode == "hit" else hits / len(rel)
        results.append(QueryResult(q, nar, recall, len(rel), n_missing))

    report = EvalReport(results, ks, recall_mode)
    if results:
        report.mean_nar = sum(r.nar for r in results) / len(results)
        report.mean_recall = {k: sum(r.recall[k] for r in results) / len(results) for k in ks}
    report.missing = sum(r.missing for r in results)
    return report


# file formats ---------------------------------------------------------------


def parse_run(text: str) -> RankingRun:
    """Parse ``#N=<int>`` followed by ``query<TAB>doc<TAB>rank`` lines."""
    n_total = None
    rankings: dict[str, dict[str, int]] = {}
    last_rank: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            if line.startswith("#N="):
                try:
                    n_total = int(line[3:])
                except ValueError:
                    raise RunParseError(f"line {lineno}: bad header {line!r}") from None
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise RunParseError(f"line {lineno}: expected query<TAB>doc<TAB>rank")
        q, d, r = parts
        try:
            rank = int(r)
        except ValueError:
            raise RunParseError(f"line {lineno}: rank {r!r} is not an integer") from None
        if not q or not d:
            raise RunParseError(f"line {lineno}: empty query or document id")
        if rank <= last_rank.get(q, 0):
            raise RunParseError(f"line {lineno}: ranks for query {q} must strictly increase")
        docs = rankings.setdefault(q, {})
        if d in docs:
            raise RunParseError(f"line {lineno}: document {d} listed twice for query {q}")
        docs[d] = rank
        last_rank[q] = rank
    if n_total is None:
        raise RunParseError("missing #N=<int> header")
    try:
        return RankingRun(n_total, rankings)
    except ValueError as exc:
        raise RunParseError(str(exc)) from None


def parse_relevance(text: str) -> dict[str, set[str]]:
    rel: dict[str, set[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not all(parts):
            raise RunParseError(f"line {lineno}: expected query<TAB>doc")
        rel.setdefault(parts[0], set()).add(parts[1])
    return rel


def load_run(path) -> RankingRun:
    return parse_run(Path(path).read_text(encoding="utf-8"))


def load_relevance(path) -> dict[str, set[str]]:
    return parse_relevance(Path(path).read_text(encoding="utf-8"))


def format_report(report: EvalReport) -> str:
    ks = report.ks
    header = f"{'query':<20} {'N_rel':>6} {'NAR':>10}" + "".join(f" {'R@' + str(k):>8}" for k in ks)
    lines = [header, "-" * len(header)]
    for r in report.queries:
        lines.append(
            f"{r.query:<20} {r.n_rel:>6} {r.nar:>10.6f}"
            + "".join(f" {r.recall[k]:>8.4f}" for k in ks)
        )
    lines.append("-" * len(header))
    lines.append(
        f"{'mean':<20} {'':>6} {report.mean_nar:>10.6f}"
        + "".join(f" {report.mean_recall.get(k, 0.0):>8.4f}" for k in ks)
    )
    lines.append("")
    for r in report.queries:
        kv = " ".join(f"r@{k}={r.recall[k]!r}" for k in ks)
        lines.append(f"query={r.query} n_rel={r.n_rel} missing={r.missing} nar={r.nar!r} {kv}")
    kv = " ".join(f"r@{k}={report.mean_recall.get(k, 0.0)!r}" for k in ks)
    lines.append(
        f"aggregate queries={len(report.queries)} missing={report.missing} "
        f"recall_mode={report.recall_mode} nar={report.mean_nar!r} {kv}"
    )
    return "\n".join(lines) + "\n"
