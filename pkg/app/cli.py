"""
Command-line entry point: store, retrieve, bench, sweep-gamma, sweep-erasure,
sweep-accelerations, bit-budget.

    python -m app.cli store --clusters 4 --cluster-size 16 --store corpus.txt --weights w.clqm
    python -m app.cli retrieve --weights w.clqm --rule som "9,4,?,10"
    python -m app.cli bench scenario1 --erase 5 --rule sos --rule som --out rates.csv --check
    python -m app.cli sweep-accelerations scenario1 --erase 5 --out acc.csv --profile-out iters.csv
"""
import argparse
import logging
import sys
from typing import List, Optional

from app.core.config import Settings, get_settings
from app.core.exceptions import AcceptanceError, CliqueMemoryError
from app.models.bench import Scenario
from app.models.network import NetworkShape
from app.models.retrieval import Accelerations, RetrievalRule
from app.services.bench import (
    PRESETS,
    all_accelerations,
    check_acceptance,
    compare_rules,
    emit_acceleration_csv,
    emit_csv,
    emit_profile_csv,
    gamma_sweep,
    generate_corpus,
    sweep_accelerations,
    sweep_erasure,
)
from app.services.emulation import bit_budget
from app.services.encoding import format_probe, read_messages, read_probes
from app.services.engine import MemoryEngine
from app.services.storage import build, load, save

logger = logging.getLogger(__name__)

RULES = [r.value for r in RetrievalRule]


# ==================== PARSER ====================

def _add_retrieval_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--gamma", type=int, help="Reinforcement factor")
    parser.add_argument("--max-iters", type=int, help="Iteration cap for sum-of-sum and emulation")
    parser.add_argument("--theta", type=int, help="Carrier basis for --rule emu (default L + 1)")
    parser.add_argument("--fixed-width", type=int, help="Emulated register width in bits")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--batch", type=int, dest="batch_size", help="Probes per worker chunk")
    parser.add_argument("--workers", type=int, help="Worker threads (default CLIQUE_WORKERS)")
    parser.add_argument("--serial", action="store_true", help="Decode one probe at a time")
    parser.add_argument("--dense", action="store_true", help="Use dense W instead of the sparse view")
    parser.add_argument("--no-skip-dead", action="store_true")
    parser.add_argument("--freeze-sole", action="store_true", help="Skip clusters with one active neuron")
    parser.add_argument("--no-bail-out", action="store_true", help="Compute full sum-of-max scores")


def _add_bench_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--repetitions", type=int, help="Repetitions per setting (default CLIQUE_REPETITIONS)")
    parser.add_argument("--out", help="CSV destination (default stdout)")
    parser.add_argument("--profile-out", help="Per-iteration time and settled-probe CSV")
    parser.add_argument("--clusters", type=int, help="C for custom scenarios")
    parser.add_argument("--cluster-size", type=int, help="L for custom scenarios")
    parser.add_argument("--stored", type=int)
    parser.add_argument("--probes", type=int)
    parser.add_argument(
        "--success-counting",
        choices=["unique", "random_choice"],
        help="Count ambiguous results by a seeded random pick",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clique-memory", description="Clustered binary associative memory")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    store = sub.add_parser("store", help="Build a weight file from a corpus")
    store.add_argument("--clusters", type=int, required=True)
    store.add_argument("--cluster-size", type=int, required=True)
    store.add_argument("--store", dest="corpus", help="Corpus file, one message per line")
    store.add_argument("--random", type=int, help="Store this many random messages instead")
    store.add_argument("--seed", type=int, default=0)
    store.add_argument("--weights", required=True, help="Output weight file")

    retrieve = sub.add_parser("retrieve", help="Decode probes against a weight file")
    retrieve.add_argument("--weights", required=True)
    retrieve.add_argument("--rule", choices=RULES, default=RetrievalRule.SUM_OF_MAX.value)
    retrieve.add_argument("--probes-file", help="File with one probe per line")
    retrieve.add_argument("probes", nargs="*", help="Probes such as 9,4,?,10")
    retrieve.add_argument("--sample", action="store_true", help="Also print one seeded pick from ambiguous results")
    _add_retrieval_options(retrieve)

    bench = sub.add_parser("bench", help="Run a benchmark scenario")
    bench.add_argument("scenario", choices=["scenario1", "scenario2", "custom"])
    bench.add_argument("--rule", action="append", choices=RULES, help="Repeatable; default som")
    bench.add_argument("--erase", type=int, action="append", help="Repeatable erased-cluster count")
    bench.add_argument("--check", action="store_true", help="Exit 1 on acceptance-band violations")
    _add_retrieval_options(bench)
    _add_bench_options(bench)

    sweep_g = sub.add_parser("sweep-gamma", help="Sum-of-sum retrieval rate against gamma")
    sweep_g.add_argument("scenario", choices=["scenario1", "scenario2", "custom"])
    sweep_g.add_argument("--gammas", default="0,1,2,3,5,10", help="Comma-separated gamma values")
    sweep_g.add_argument("--erase", type=int, action="append")
    sweep_g.add_argument("--check", action="store_true", help="Exit 1 if the gamma ordering or bands fail")
    _add_retrieval_options(sweep_g)
    _add_bench_options(sweep_g)

    sweep_e = sub.add_parser("sweep-erasure", help="Retrieval rate against erased clusters")
    sweep_e.add_argument("scenario", choices=["scenario1", "scenario2", "custom"])
    sweep_e.add_argument("--rule", action="append", choices=RULES)
    sweep_e.add_argument("--erased", default="1,2,3,4,5,6,7", help="Comma-separated erased counts")
    sweep_e.add_argument("--check", action="store_true")
    _add_retrieval_options(sweep_e)
    _add_bench_options(sweep_e)

    sweep_a = sub.add_parser("sweep-accelerations", help="Sum-of-max or joint timing per acceleration setting")
    sweep_a.add_argument("scenario", choices=["scenario1", "scenario2", "custom"])
    sweep_a.add_argument("--rule", choices=[RetrievalRule.SUM_OF_MAX.value, RetrievalRule.JOINT.value],
                         default=RetrievalRule.SUM_OF_MAX.value)
    sweep_a.add_argument("--erase", type=int)
    sweep_a.add_argument("--all", action="store_true", help="Every switch combination instead of the ladder")
    _add_retrieval_options(sweep_a)
    _add_bench_options(sweep_a)

    budget = sub.add_parser("bit-budget", help="Register width needed by the carrier emulation")
    budget.add_argument("--clusters", type=int, required=True)
    budget.add_argument("--cluster-size", type=int, required=True)
    budget.add_argument("--theta", type=int, help="Default L + 1")

    return parser


# ==================== HELPERS ====================

def _accelerations(args: argparse.Namespace) -> Accelerations:
    return Accelerations(
        sparse=not args.dense,
        skip_dead=not args.no_skip_dead,
        freeze_sole=args.freeze_sole,
        bail_out=not args.no_bail_out,
    )


def _int_list(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _base_scenario(args: argparse.Namespace, settings: Settings) -> Scenario:
    """Preset or custom scenario with command-line overrides applied."""
    if args.scenario == "custom":
        missing = [f for f in ("clusters", "cluster_size", "stored", "probes") if getattr(args, f) is None]
        if missing:
            raise CliqueMemoryError(f"custom scenario needs --{', --'.join(m.replace('_', '-') for m in missing)}")
        base = Scenario(
            name="custom",
            shape=NetworkShape(clusters=args.clusters, cluster_size=args.cluster_size),
            stored=args.stored,
            probes=args.probes,
        )
    else:
        base = PRESETS[args.scenario]

    updates = {
        "seed": args.seed,
        "repetitions": args.repetitions or settings.repetitions,
        "mode": "serial" if args.serial else "batch",
        "workers": args.workers or settings.workers,
        "batch_size": args.batch_size or settings.batch_size,
        "accelerations": _accelerations(args),
        "success_counting": args.success_counting or settings.success_counting,
        "theta": args.theta if args.theta is not None else settings.default_theta,
        "fixed_width": args.fixed_width if args.fixed_width is not None else settings.fixed_width_bits,
    }
    if args.scenario != "custom":
        for field in ("stored", "probes"):
            if getattr(args, field) is not None:
                updates[field] = getattr(args, field)
    if args.gamma is not None:
        updates["gamma"] = args.gamma
    if args.max_iters is not None:
        updates["max_iters"] = args.max_iters
    return Scenario.model_validate({**base.model_dump(), **updates})


def _write_reports(reports, args: argparse.Namespace) -> None:
    emit_csv(reports, args.out if args.out else sys.stdout)
    if args.profile_out:
        emit_profile_csv(reports, args.profile_out)


def _enforce(reports, check: bool) -> None:
    if not check:
        return
    violations = check_acceptance(reports)
    for line in violations:
        logger.error(f"Acceptance violation: {line}")
    if violations:
        raise AcceptanceError(f"{len(violations)} acceptance band(s) violated")


# ==================== COMMANDS ====================

def cmd_store(args: argparse.Namespace, settings: Settings) -> None:
    shape = NetworkShape(clusters=args.clusters, cluster_size=args.cluster_size)
    if args.corpus:
        messages = read_messages(args.corpus)
    elif args.random:
        messages = generate_corpus(shape, args.random, args.seed)
    else:
        raise CliqueMemoryError("store needs --store <corpus-file> or --random <count>")
    W = build(shape, messages)
    save(W, args.weights)
    print(f"stored {W.stored_count} messages, {W.edge_count()} edges -> {args.weights}")


def cmd_retrieve(args: argparse.Namespace, settings: Settings) -> None:
    lines = list(args.probes)
    if args.probes_file:
        with open(args.probes_file) as handle:
            lines += handle.read().splitlines()
    probes = read_probes(lines)
    if not probes:
        raise CliqueMemoryError("no probes given")

    engine = MemoryEngine(load(args.weights), settings)
    config = engine.make_config(
        rule=RetrievalRule(args.rule),
        gamma=args.gamma,
        max_iters=args.max_iters,
        theta=args.theta,
        fixed_width=args.fixed_width,
        seed=args.seed,
        batch_size=args.batch_size,
        workers=args.workers,
        mode="serial" if args.serial else "batch",
        accelerations=_accelerations(args),
    )
    outcome, extractions = engine.decode(probes, config)
    picks = engine.sample(extractions, config) if args.sample else [None] * len(probes)
    for k, (probe, extraction, pick) in enumerate(zip(probes, extractions, picks)):
        if extraction.kind == "unique":
            result = str(extraction.message)
        elif extraction.kind == "ambiguous":
            result = "ambiguous " + " ".join("{" + ",".join(map(str, c)) + "}" for c in extraction.candidates)
        else:
            result = "empty"
        flag = " oscillating" if outcome.oscillating[k] else ""
        if pick is not None and extraction.kind == "ambiguous":
            result += f" pick={pick}"
        print(f"{format_probe(probe)}\t{result}\t{outcome.statuses[k]}{flag}\titers={outcome.iterations[k]}")


def cmd_bench(args: argparse.Namespace, settings: Settings) -> None:
    base = _base_scenario(args, settings)
    rules = [RetrievalRule(r) for r in (args.rule or [RetrievalRule.SUM_OF_MAX.value])]
    erased_values = args.erase or [base.erased]
    reports = []
    for e in erased_values:
        results = compare_rules(base.model_copy(update={"erased": e}), rules)
        reports += list(results.values())
    _write_reports(reports, args)
    _enforce(reports, args.check)


def cmd_sweep_gamma(args: argparse.Namespace, settings: Settings) -> None:
    base = _base_scenario(args, settings).model_copy(update={"rule": RetrievalRule.SUM_OF_SUM})
    reports = []
    for e in args.erase or [base.erased]:
        reports += gamma_sweep(base.model_copy(update={"erased": e}), _int_list(args.gammas))
    _write_reports(reports, args)
    _enforce(reports, args.check)


def cmd_sweep_erasure(args: argparse.Namespace, settings: Settings) -> None:
    base = _base_scenario(args, settings)
    rules = [RetrievalRule(r) for r in (args.rule or ["sos", "som", "joint"])]
    reports = sweep_erasure(base, _int_list(args.erased), rules)
    _write_reports(reports, args)
    _enforce(reports, args.check)


def cmd_sweep_accelerations(args: argparse.Namespace, settings: Settings) -> None:
    base = _base_scenario(args, settings).model_copy(update={"rule": RetrievalRule(args.rule)})
    if args.erase is not None:
        base = base.model_copy(update={"erased": args.erase})
    reports = sweep_accelerations(base, all_accelerations() if args.all else None)
    emit_acceleration_csv(reports, args.out if args.out else sys.stdout)
    if args.profile_out:
        emit_profile_csv(reports, args.profile_out)


def cmd_bit_budget(args: argparse.Namespace, settings: Settings) -> None:
    theta = args.theta or args.cluster_size + 1
    budget = bit_budget(args.clusters, args.cluster_size, theta)
    print(f"C={budget.clusters} L={budget.cluster_size} theta={budget.theta}")
    print(f"worst case:    {budget.worst_case_bits} bits (log2 {budget.worst_case_log2:.2f}, ~{budget.worst_case_quoted})")
    print(f"single signal: {budget.single_signal_bits} bits (log2 {budget.single_signal_log2:.2f}, ~{budget.single_signal_quoted})")


COMMANDS = {
    "store": cmd_store,
    "retrieve": cmd_retrieve,
    "bench": cmd_bench,
    "sweep-gamma": cmd_sweep_gamma,
    "sweep-erasure": cmd_sweep_erasure,
    "sweep-accelerations": cmd_sweep_accelerations,
    "bit-budget": cmd_bit_budget,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command. Exit codes: 0 ok, 1 acceptance violation, 2 engine or input error."""
    args = build_parser().parse_args(argv)
    settings = get_settings()
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else settings.log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    try:
        COMMANDS[args.command](args, settings)
    except AcceptanceError as e:
        logger.error(str(e))
        return 1
    except (CliqueMemoryError, ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
