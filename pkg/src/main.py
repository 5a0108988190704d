import logging
import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv

from src.audit import AuditLogger
from src.config_manager import ConfigManager, RunConfig
from src.duel import ALPHA, run_duel, stage, train_shared_tm
from src.errors import ConfigError, QeiiError, StageError
from src.experiments import ablation_study, candidate_count_trend, candidate_source_trend, feature_profile
from src.fixtures import fixture_pair
from src.kg_store import ablate_triples, common_subgraph, load_kg, shallow_metrics, write_kg
from src.manifest import build_manifest, write_manifest
from src.party import Party, run_first_subgame
from src.protocol import inspect_message

logger = logging.getLogger("MainOrchestrator")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _load_run_config(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "tuner", None):
        overrides.append(f"duel.tuning.tuner={args.tuner}")
    if getattr(args, "format", None):
        overrides.append(f"output_format={args.format}")
    config = ConfigManager(args.config, overrides).get_config()
    if args.workdir:
        config.paths.workdir = args.workdir
    return config


def _print_table(rows: List[List[str]]) -> None:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())


def cmd_duel(args) -> int:
    config = _load_run_config(args)
    workdir = config.paths.workdir
    audit = AuditLogger.in_workdir(workdir)
    write_manifest(workdir, build_manifest("duel", sys.argv, config, config.duel.seeds.model_dump()))

    with stage("load", audit):
        kg_a = load_kg(config.paths.kg_alpha, name=ALPHA)
        kg_b = load_kg(config.paths.kg_beta, name="beta")
    result = run_duel(kg_a, kg_b, config.duel, workdir, audit, common_knowledge=args.common_knowledge)

    report = result.as_dict()
    for party in (result.alpha, result.beta):
        report.setdefault("first_subgame", {})[party.name] = {
            "rounds": len(party.rounds),
            "final_accuracy": party.final_accuracy,
            "round_cap_reached": party.round_cap_reached,
        }
    with open(os.path.join(workdir, "scores.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)

    if config.output_format == "json":
        print(json.dumps(report, indent=2))
        return EXIT_OK

    rows = [["set", "alpha_cross", "beta_cross", "alpha_self", "beta_self"]]
    for s in result.sets:
        rows.append([str(s.set_idx), f"{s.alpha_cross:.2f}", f"{s.beta_cross:.2f}",
                     f"{s.alpha_self:.2f}", f"{s.beta_self:.2f}"])
    a_self, b_self = result.self_means
    rows.append(["mean", f"{result.score_alpha:.2f}", f"{result.score_beta:.2f}", f"{a_self:.2f}", f"{b_self:.2f}"])
    _print_table(rows)
    if result.common:
        print(f"common knowledge: alpha {result.common['alpha']:.2f}  beta {result.common['beta']:.2f}")
    print(f"verdict: {result.verdict}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    with stage("metrics"):
        metrics = shallow_metrics(load_kg(args.kg))
    for name, value in metrics.items():
        print(f"{name}\t{value:.6f}")
    return EXIT_OK


def cmd_common(args) -> int:
    with stage("common-kg"):
        common = common_subgraph(load_kg(args.kg_a), load_kg(args.kg_b))
        write_kg(common, args.out)
    logger.info(f"Common KG with {common.num_triples} triples written to {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    with stage("ablate"):
        kg_a, kg_b = load_kg(args.kg_a), load_kg(args.kg_b)
        ablated = ablate_triples(kg_a, kg_b, args.n, args.ratio, np.random.default_rng(args.seed))
        write_kg(ablated, args.out)
    logger.info(f"Ablated KG with {ablated.num_triples} triples written to {args.out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    with stage("inspect"):
        summary = inspect_message(args.message)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_fixture(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    intact, degraded = fixture_pair(seed=args.seed, n_entities=args.entities, removal=args.removal, ratio=args.ratio)
    for kg, filename in ((intact, "alpha.tsv"), (degraded, "beta.tsv")):
        write_kg(kg, os.path.join(args.out_dir, filename))
        logger.info(f"Wrote {filename}: {kg.num_entities} entities, {kg.num_triples} triples")
    return EXIT_OK


def cmd_analyze_difficulty(args) -> int:
    config = _load_run_config(args)
    duel = config.duel
    workdir = config.paths.workdir
    audit = AuditLogger.in_workdir(workdir)
    write_manifest(workdir, build_manifest("analyze-difficulty", sys.argv, config, duel.seeds.model_dump()))
    salt = duel.embedding.vocab_salt.encode("utf-8")

    with stage("load", audit):
        alpha = Party.create(ALPHA, load_kg(config.paths.kg_alpha, name=ALPHA), salt, duel.seeds.alpha)
        beta = Party.create("beta", load_kg(config.paths.kg_beta, name="beta"), salt, duel.seeds.beta)
    with stage("tm-training", audit):
        tm = train_shared_tm(alpha, beta, duel)
    party = alpha if args.party == ALPHA else beta
    with stage(f"first-subgame-{party.name}", audit):
        run_first_subgame(party, tm, duel, audit)
    with stage("analysis", audit):
        rng = np.random.default_rng(duel.seeds.tm + 1)
        report = {
            "feature_profile": feature_profile(party.history.rounds[0], party.history),
            "candidate_count": candidate_count_trend(party, tm, args.probe, sorted(duel.questions.candidate_counts),
                                                     duel, rng),
            "candidate_source": candidate_source_trend(party, tm, args.probe, duel, rng),
        }
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_ablation_study(args) -> int:
    config = _load_run_config(args)
    workdir = config.paths.workdir
    write_manifest(workdir, build_manifest("ablation-study", sys.argv, config, config.duel.seeds.model_dump()))
    removals = [int(x) for x in args.removals.split(",") if x.strip()]
    with stage("load"):
        kg_a = load_kg(config.paths.kg_alpha, name=ALPHA)
        kg_b = load_kg(config.paths.kg_beta, name="beta")
    with stage("ablation-study"):
        rows = ablation_study(kg_a, kg_b, removals, args.ratio, args.repetitions, config.duel, workdir, seed=args.seed)
    if config.output_format == "json":
        print(json.dumps(rows, indent=2))
    else:
        table = [["removed", "alpha_mean", "alpha_std", "beta_mean", "beta_std"]]
        table += [[str(r["removed"]), f"{r['alpha_mean']:.2f}", f"{r['alpha_std']:.2f}",
                   f"{r['beta_mean']:.2f}", f"{r['beta_std']:.2f}"] for r in rows]
        _print_table(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Adversarial knowledge graph quality evaluation")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_options(p):
        p.add_argument("--config", default="config/duel.yaml", help="YAML run configuration")
        p.add_argument("--workdir", help="Override paths.workdir")
        p.add_argument("--tuner", choices=["rule", "bayes", "retrieval"], help="Override tuning.tuner")
        p.add_argument("--format", choices=["table", "json"], help="Report format")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override any config field (repeatable)")

    p = sub.add_parser("duel", help="Run the full evaluation game")
    add_run_options(p)
    p.add_argument("--common-knowledge", action="store_true", help="Also answer questions from the shared triples")
    p.set_defaults(func=cmd_duel)

    p = sub.add_parser("metrics", help="Shallow metrics of one KG")
    p.add_argument("kg")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("common-kg", help="Write the triples two KGs share")
    p.add_argument("kg_a")
    p.add_argument("kg_b")
    p.add_argument("out")
    p.set_defaults(func=cmd_common)

    p = sub.add_parser("ablate", help="Remove triples from kg_a with a unique:common ratio relative to kg_b")
    p.add_argument("kg_a")
    p.add_argument("kg_b")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="Validate an exchange message file")
    p.add_argument("message")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("fixture", help="Write a synthetic intact/degraded KG pair")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entities", type=int, default=300)
    p.add_argument("--removal", type=float, default=0.3)
    p.add_argument("--ratio", type=float, default=4.0)
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("analyze-difficulty", help="Difficulty-feature analyses on one trained party")
    add_run_options(p)
    p.add_argument("--party", choices=["alpha", "beta"], default="alpha")
    p.add_argument("--probe", type=int, default=200)
    p.set_defaults(func=cmd_analyze_difficulty)

    p = sub.add_parser("ablation-study", help="Duel kg_alpha against increasingly ablated kg_beta")
    add_run_options(p)
    p.add_argument("--removals", required=True, help="Comma-separated triple counts")
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ablation_study)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    # Configure Logging
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        return args.func(args)
    except ConfigError as e:
        logger.critical(f"Config load failed: {e}")
        return EXIT_CONFIG
    except StageError as e:
        logger.critical(f"Stage failed: {e}")
        return EXIT_STAGE
    except QeiiError as e:
        logger.critical(f"Fatal Error: {e}")
        return EXIT_STAGE
    except KeyboardInterrupt:
        logger.info("Stopped by user.")
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
