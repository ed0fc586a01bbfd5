"""
Benchmark Service - corpus generation, erasure, scenario runs and CSV reports.
"""
import csv
import hashlib
import io
import itertools
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from app.models.bench import RepetitionReport, RunReport, Scenario
from app.models.network import Message, NetworkShape, Probe
from app.models.retrieval import Accelerations, FillPolicy, RetrievalConfig, RetrievalOutcome, RetrievalRule
from app.services.encoding import encode_erasures, extract_messages, sample_message
from app.services.engine import run_rule
from app.services.storage import build

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "rule",
    "C",
    "L",
    "stored",
    "probes",
    "e",
    "gamma",
    "theta",
    "repetition",
    "seed",
    "retrieval_rate",
    "mean_iters",
    "oscillation_count",
    "wall_ms",
]

PRESETS: Dict[str, Scenario] = {
    "scenario1": Scenario(
        name="scenario1",
        shape=NetworkShape(clusters=8, cluster_size=128),
        stored=5000,
        probes=3000,
        erased=3,
        gamma=2,
        max_iters=20,
    ),
    "scenario2": Scenario(
        name="scenario2",
        shape=NetworkShape(clusters=16, cluster_size=512),
        stored=50000,
        probes=30000,
        erased=7,
        gamma=2,
        max_iters=20,
    ),
}


# ==================== CORPUS ====================

def corpus_array(shape: NetworkShape, count: int, rng: np.random.Generator) -> np.ndarray:
    """(count, C) array of i.i.d. uniform symbols in 1..L."""
    return rng.integers(1, shape.cluster_size + 1, size=(count, shape.clusters))


def generate_corpus(shape: NetworkShape, count: int, seed: int) -> List[Message]:
    """Uniform random messages; duplicates are allowed."""
    if count < 1:
        raise ValueError("corpus needs at least one message")
    symbols = corpus_array(shape, count, np.random.default_rng(seed))
    return [Message(symbols=tuple(int(s) for s in row)) for row in symbols]


def erasure_mask(clusters: int, count: int, erased: int, rng: np.random.Generator) -> np.ndarray:
    """(count, C) mask with exactly `erased` distinct clusters per row, uniform without replacement."""
    if not 0 <= erased <= clusters:
        raise ValueError(f"erased must be in 0..{clusters}")
    order = np.argsort(rng.random((count, clusters)), axis=1)
    mask = np.zeros((count, clusters), dtype=bool)
    np.put_along_axis(mask, order[:, :erased], True, axis=1)
    return mask


def erase(message: Message, erased: int, seed: int | np.random.Generator) -> Probe:
    """Erase `erased` distinct clusters of `message` chosen uniformly."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mask = erasure_mask(len(message.symbols), 1, erased, rng)[0]
    return Probe(slots=tuple(None if gone else s for s, gone in zip(message.symbols, mask)))


def corpus_hash(symbols: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(symbols, dtype=np.int64).tobytes()).hexdigest()[:16]


def repetition_seeds(seed: int, repetitions: int) -> List[int]:
    """Distinct, reproducible seeds derived from the scenario seed."""
    children = np.random.SeedSequence(seed).spawn(repetitions)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


# ==================== SCENARIOS ====================

def scenario_config(scenario: Scenario) -> RetrievalConfig:
    return RetrievalConfig(
        rule=scenario.rule,
        gamma=scenario.gamma,
        max_iters=scenario.max_iters,
        seed=scenario.seed,
        mode=scenario.mode,
        batch_size=scenario.batch_size,
        workers=scenario.workers,
        accelerations=scenario.accelerations,
        theta=scenario.theta,
        fixed_width=scenario.fixed_width,
    )


def count_successes(
    shape: NetworkShape,
    outcome: RetrievalOutcome,
    originals: np.ndarray,
    counting: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-probe success: unique match, or (random_choice) a seeded pick from an ensemble."""
    truth = encode_erasures(shape, originals, np.zeros(originals.shape, dtype=bool), FillPolicy.ERASED_OFF)
    success = ~np.any(outcome.final.bits != truth.bits, axis=0)
    if counting == "random_choice":
        for k in np.flatnonzero(~success):
            extraction = extract_messages(shape, outcome.final.column(int(k)))
            original = Message(symbols=tuple(int(s) for s in originals[k]))
            if extraction.kind == "ambiguous" and extraction.contains(original):
                success[k] = sample_message(extraction, rng) == original
    return success


def run_repetition(scenario: Scenario, repetition: int, seed: int) -> Tuple[RepetitionReport, RetrievalOutcome]:
    """Build the corpus, erase a probe sample and decode it once."""
    shape = scenario.shape
    rng = np.random.default_rng(seed)
    corpus = corpus_array(shape, scenario.stored, rng)
    W = build(shape, corpus)
    sample = rng.choice(scenario.stored, size=scenario.probes, replace=False)
    originals = corpus[sample]
    erased = erasure_mask(shape.clusters, scenario.probes, scenario.erased, rng)

    config = scenario_config(scenario)
    batch = encode_erasures(shape, originals, erased, config.fill)
    outcome = run_rule(W, batch, config)
    success = count_successes(shape, outcome, originals, scenario.success_counting, rng)

    report = RepetitionReport(
        repetition=repetition,
        seed=seed,
        corpus_hash=corpus_hash(corpus),
        successes=int(success.sum()),
        probes=scenario.probes,
        retrieval_rate=float(success.mean()),
        mean_iterations=outcome.mean_iterations,
        oscillation_count=outcome.oscillation_count,
        wall_ms=outcome.wall_ms,
        success_mask=success.tolist(),
        state_hash=hashlib.sha256(np.packbits(outcome.final.bits, axis=0).tobytes()).hexdigest()[:16],
        profile=outcome.profile,
    )
    logger.info(
        f"{scenario.name} rule={scenario.rule.value} e={scenario.erased} gamma={scenario.gamma} "
        f"rep={repetition}: rate={report.retrieval_rate:.4f} iters={report.mean_iterations:.2f} "
        f"osc={report.oscillation_count} {report.wall_ms:.0f} ms"
    )
    return report, outcome


def run_scenario(scenario: Scenario) -> RunReport:
    """
    Run every repetition of a scenario and aggregate them.

    Args:
        scenario: Network shape, corpus and probe sizes, rule and seed

    Returns:
        RunReport with the mean rate over repetitions and one
        RepetitionReport per derived seed
    """
    seeds = repetition_seeds(scenario.seed, scenario.repetitions)
    reports = [run_repetition(scenario, r, seed)[0] for r, seed in enumerate(seeds)]
    return aggregate(scenario, reports)


def aggregate(scenario: Scenario, reports: Sequence[RepetitionReport]) -> RunReport:
    """Deterministic fold of repetition reports."""
    rates = np.array([r.retrieval_rate for r in reports])
    stderr = float(rates.std(ddof=1) / np.sqrt(len(rates))) if len(rates) > 1 else 0.0
    return RunReport(
        scenario=scenario,
        retrieval_rate=float(rates.mean()),
        rate_stderr=stderr,
        mean_iterations=float(np.mean([r.mean_iterations for r in reports])),
        oscillation_count=sum(r.oscillation_count for r in reports),
        wall_ms=float(sum(r.wall_ms for r in reports)),
        repetitions=list(reports),
    )


def gamma_sweep(base: Scenario, gammas: Iterable[int]) -> List[RunReport]:
    """One sum-of-sum report per gamma over identical corpora and probes."""
    if base.rule != RetrievalRule.SUM_OF_SUM:
        raise ValueError("gamma sweeps apply to the sum-of-sum rule")
    return [run_scenario(base.model_copy(update={"gamma": g})) for g in gammas]


def sweep_erasure(
    base: Scenario,
    erased_values: Iterable[int],
    rules: Iterable[RetrievalRule],
) -> List[RunReport]:
    """Retrieval rate against the number of erased clusters for several rules."""
    rules = list(rules)
    reports = []
    for e in erased_values:
        for rule in rules:
            reports.append(run_scenario(base.model_copy(update={"erased": e, "rule": rule})))
    return reports


def compare_rules(base: Scenario, rules: Iterable[RetrievalRule]) -> Dict[RetrievalRule, RunReport]:
    """
    Run several rules on identical corpora and probes. For sum-of-max and
    joint, per-probe success sets are compared and state-level divergences
    logged.
    """
    results = {rule: run_scenario(base.model_copy(update={"rule": rule})) for rule in rules}
    som = results.get(RetrievalRule.SUM_OF_MAX)
    joint = results.get(RetrievalRule.JOINT)
    if som and joint:
        for a, b in zip(som.repetitions, joint.repetitions):
            if a.success_mask != b.success_mask:
                logger.error(f"joint and sum-of-max success sets differ in repetition {a.repetition}")
            elif a.state_hash != b.state_hash:
                logger.warning(
                    f"joint and sum-of-max final states differ in repetition {a.repetition} "
                    f"(success sets agree)"
                )
    return results


def acceleration_label(acc: Accelerations) -> str:
    """'+'-joined names of the enabled switches, 'none' if all are off."""
    names = [name for name, on in acc.model_dump().items() if on]
    return "+".join(names) or "none"


# Switches added one at a time, ending with every shortcut on
ACCELERATION_LADDER: List[Accelerations] = [
    Accelerations(sparse=False, skip_dead=False, freeze_sole=False, bail_out=False),
    Accelerations(sparse=True, skip_dead=False, freeze_sole=False, bail_out=False),
    Accelerations(sparse=True, skip_dead=True, freeze_sole=False, bail_out=False),
    Accelerations(sparse=True, skip_dead=True, freeze_sole=False, bail_out=True),
    Accelerations(sparse=True, skip_dead=True, freeze_sole=True, bail_out=True),
]


def all_accelerations() -> List[Accelerations]:
    fields = list(Accelerations.model_fields)
    return [Accelerations(**dict(zip(fields, flags))) for flags in itertools.product([False, True], repeat=len(fields))]


def sweep_accelerations(base: Scenario, variants: Optional[Iterable[Accelerations]] = None) -> List[RunReport]:
    """
    One report per acceleration setting over identical corpora and probes.
    Defaults to the cumulative ladder; rates must not move on erasure probes.
    """
    if base.rule not in (RetrievalRule.SUM_OF_MAX, RetrievalRule.JOINT):
        raise ValueError("acceleration sweeps apply to sum-of-max and joint")
    reports = [run_scenario(base.model_copy(update={"accelerations": acc})) for acc in (variants or ACCELERATION_LADDER)]
    for report in reports[1:]:
        if report.retrieval_rate != reports[0].retrieval_rate:
            logger.warning(
                f"{acceleration_label(report.scenario.accelerations)} changed the retrieval rate "
                f"({report.retrieval_rate:.4f} vs {reports[0].retrieval_rate:.4f})"
            )
    return reports


# ==================== CSV ====================

ACCELERATION_COLUMNS = [
    "rule",
    "e",
    "accelerations",
    "repetition",
    "seed",
    "retrieval_rate",
    "mean_iters",
    "wall_ms",
]

PROFILE_COLUMNS = [
    "rule",
    "e",
    "gamma",
    "mode",
    "accelerations",
    "repetition",
    "iteration",
    "iteration_ms",
    "settled",
    "settled_fraction",
]


def csv_rows(reports: Iterable[RunReport]) -> List[Dict[str, object]]:
    """One row per (scenario, repetition), sorted by (rule, e, gamma)."""
    rows = []
    for report in reports:
        s = report.scenario
        for rep in report.repetitions:
            rows.append({
                "rule": s.rule.value,
                "C": s.shape.clusters,
                "L": s.shape.cluster_size,
                "stored": s.stored,
                "probes": s.probes,
                "e": s.erased,
                "gamma": s.gamma,
                "theta": s.theta if s.theta is not None else "",
                "repetition": rep.repetition,
                "seed": rep.seed,
                "retrieval_rate": repr(rep.retrieval_rate),
                "mean_iters": repr(rep.mean_iterations),
                "oscillation_count": rep.oscillation_count,
                "wall_ms": f"{rep.wall_ms:.3f}",
            })
    rows.sort(key=lambda r: (r["rule"], r["e"], r["gamma"], r["repetition"]))
    return rows


def acceleration_rows(reports: Iterable[RunReport]) -> List[Dict[str, object]]:
    """One row per (acceleration setting, repetition), in sweep order."""
    rows = []
    for report in reports:
        s = report.scenario
        for rep in report.repetitions:
            rows.append({
                "rule": s.rule.value,
                "e": s.erased,
                "accelerations": acceleration_label(s.accelerations),
                "repetition": rep.repetition,
                "seed": rep.seed,
                "retrieval_rate": repr(rep.retrieval_rate),
                "mean_iters": repr(rep.mean_iterations),
                "wall_ms": f"{rep.wall_ms:.3f}",
            })
    return rows


def profile_rows(reports: Iterable[RunReport]) -> List[Dict[str, object]]:
    """Per-iteration time and cumulative settled probes for every repetition."""
    rows = []
    for report in reports:
        s = report.scenario
        for rep in report.repetitions:
            for step in rep.profile:
                rows.append({
                    "rule": s.rule.value,
                    "e": s.erased,
                    "gamma": s.gamma,
                    "mode": s.mode,
                    "accelerations": acceleration_label(s.accelerations),
                    "repetition": rep.repetition,
                    "iteration": step.iteration,
                    "iteration_ms": f"{step.wall_ms:.3f}",
                    "settled": step.settled,
                    "settled_fraction": repr(step.settled / rep.probes),
                })
    return rows


def _emit(rows: List[Dict[str, object]], columns: List[str], destination: str | Path | TextIO) -> None:
    if isinstance(destination, (str, Path)):
        with open(destination, "w", newline="") as handle:
            _write_rows(handle, rows, columns)
        logger.info(f"Wrote {len(rows)} rows to {destination}")
    else:
        _write_rows(destination, rows, columns)


def _write_rows(handle: TextIO, rows: List[Dict[str, object]], columns: List[str]) -> None:
    writer = csv.DictWriter(handle, fieldnames=columns)
    writer.writeheader()
    writer.writerows(rows)


def emit_csv(reports: Iterable[RunReport], destination: str | Path | TextIO) -> None:
    """Write the header and one row per (scenario, repetition)."""
    _emit(csv_rows(reports), CSV_COLUMNS, destination)


def emit_acceleration_csv(reports: Iterable[RunReport], destination: str | Path | TextIO) -> None:
    _emit(acceleration_rows(reports), ACCELERATION_COLUMNS, destination)


def emit_profile_csv(reports: Iterable[RunReport], destination: str | Path | TextIO) -> None:
    _emit(profile_rows(reports), PROFILE_COLUMNS, destination)


def csv_text(reports: Iterable[RunReport]) -> str:
    buffer = io.StringIO()
    emit_csv(reports, buffer)
    return buffer.getvalue()


# ==================== ACCEPTANCE ====================

SCENARIO1_SHAPE = (8, 128, 5000, 3000)
SCENARIO2_SHAPE = (16, 512, 50000)


def _is_scenario1(s: Scenario) -> bool:
    return (s.shape.clusters, s.shape.cluster_size, s.stored, s.probes) == SCENARIO1_SHAPE and s.max_iters == 20


def _rate_bands(reports: List[RunReport]) -> List[str]:
    """Scenario-1 bands at gamma = 2."""
    rates: Dict[Tuple[RetrievalRule, int], float] = {}
    for report in reports:
        s = report.scenario
        if not _is_scenario1(s) or s.gamma != 2:
            continue
        key = (s.rule, s.erased)
        if key in rates:
            logger.warning(f"several gamma=2 reports for {s.rule.value} e={s.erased}; using the last")
        rates[key] = report.retrieval_rate

    violations = []
    sos, som, joint = RetrievalRule.SUM_OF_SUM, RetrievalRule.SUM_OF_MAX, RetrievalRule.JOINT

    def need(key: Tuple[RetrievalRule, int], ok: bool, text: str) -> None:
        if key in rates and not ok:
            violations.append(f"{key[0].value} e={key[1]}: rate {rates[key]:.4f} {text}")

    for rule in (sos, som, joint):
        need((rule, 3), rates.get((rule, 3), 1.0) >= 0.95, "below 0.95")
    need((sos, 5), 0.45 <= rates.get((sos, 5), 0.5) <= 0.65, "outside [0.45, 0.65]")
    for rule in (som, joint):
        need((rule, 5), rates.get((rule, 5), 1.0) >= 0.87, "below 0.87")
        need((rule, 6), rates.get((rule, 6), 1.0) >= 0.17, "below 0.17")
        if (rule, 6) in rates and (sos, 6) in rates:
            need((rule, 6), rates[(rule, 6)] > rates[(sos, 6)], "not above sum-of-sum")
    for e in (3, 4, 5, 6):
        if (som, e) in rates and (joint, e) in rates:
            need((joint, e), rates[(joint, e)] == rates[(som, e)], "differs from sum-of-max")
    return violations


def _gamma_ordering(reports: List[RunReport]) -> List[str]:
    """Scenario-1 sum-of-sum at e = 5: rate(1) >= rate(2) >= rate(4), up to one standard error."""
    by_gamma: Dict[int, RunReport] = {}
    for report in reports:
        s = report.scenario
        if _is_scenario1(s) and s.rule == RetrievalRule.SUM_OF_SUM and s.erased == 5:
            by_gamma[s.gamma] = report

    violations = []
    for low, high in ((1, 2), (2, 4)):
        if low not in by_gamma or high not in by_gamma:
            continue
        a, b = by_gamma[low], by_gamma[high]
        slack = math.hypot(a.rate_stderr, b.rate_stderr)
        if a.retrieval_rate < b.retrieval_rate - slack:
            violations.append(
                f"sos e=5: rate {a.retrieval_rate:.4f} at gamma={low} below {b.retrieval_rate:.4f} "
                f"at gamma={high} (slack {slack:.4f})"
            )
    return violations


def _timing_ordering(reports: List[RunReport]) -> List[str]:
    """Scenario-2 shapes: joint faster than sum-of-max, batch no slower than serial."""
    walls: Dict[Tuple[RetrievalRule, int, int, str, str], float] = {}
    for report in reports:
        s = report.scenario
        if (s.shape.clusters, s.shape.cluster_size, s.stored) != SCENARIO2_SHAPE:
            continue
        walls[(s.rule, s.erased, s.probes, s.mode, acceleration_label(s.accelerations))] = report.wall_ms

    violations = []
    som, joint = RetrievalRule.SUM_OF_MAX, RetrievalRule.JOINT
    for (rule, e, probes, mode, acc), wall in walls.items():
        if rule == joint:
            other = walls.get((som, e, probes, mode, acc))
            if other is not None and not wall < other:
                violations.append(f"joint e={e} {mode}: {wall:.0f} ms not below sum-of-max {other:.0f} ms")
        if mode == "batch":
            serial = walls.get((rule, e, probes, "serial", acc))
            if serial is not None and wall > serial:
                violations.append(f"{rule.value} e={e}: batch {wall:.0f} ms slower than serial {serial:.0f} ms")
    return violations


def check_acceptance(reports: Iterable[RunReport]) -> List[str]:
    """
    Retrieval-rate bands and gamma ordering on Scenario 1, timing order on
    Scenario 2. Returns human-readable violations; other reports are ignored.
    """
    reports = list(reports)
    return _rate_bands(reports) + _gamma_ordering(reports) + _timing_ordering(reports)
