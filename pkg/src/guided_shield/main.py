"""Main entry point for the guided-shield pipeline."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from collections import defaultdict
from pathlib import Path

from dotenv import load_dotenv

from .artifacts import (
    CLUSTERED_FILE,
    METRICS_FILE,
    REGIONS_FILE,
    REPORT_FILE,
    SMT_FILE,
    VERDICTS_FILE,
    read_metrics_csv,
    write_json,
    write_metrics_csv,
    write_report_csv,
)
from .box import Box, RegionFileError
from .compress import build_index, cluster, emit_smt, simplify_boxes
from .config_loader import ConfigError, PipelineConfig, load_config, resolve_properties
from .env import EpisodeMetrics, MapFormatError
from .policy import (
    DimensionMismatchError,
    Network,
    NetworkFormatError,
    TrainingBudgetExceeded,
    load_network,
    save_network,
    train_policy,
)
from .regions import (
    LabeledBox,
    LabeledRegionSet,
    Provenance,
    is_tiling,
    load_regions,
    refine_regions,
    save_regions,
    split_domain,
)
from .shield import Mode, RunReport, ShieldSpec, format_one_decimal, report, run_guided
from .verifier import VerdictKind, VerificationQuery, verify_many

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SAFETY = 2
EXIT_BUDGET = 3

# Episode seeds are `run_seed * EPISODE_SEED_STRIDE + episode`.
EPISODE_SEED_STRIDE = 1_000_000


class StageError(Exception):
    """Raised by a stage to stop the CLI with a specific exit code."""

    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _load_policy(config: PipelineConfig) -> Network:
    path = Path(config.network)
    if not path.exists():
        raise StageError(f"network file not found: {path}")
    return load_network(path)


def _print_timings(columns: dict[str, float]) -> None:
    header = "  ".join(f"{name:>18}" for name in columns)
    values = "  ".join(f"{value:>18.4f}" for value in columns.values())
    print(header)
    print(values)


# === Stages ===

def cmd_train(config: PipelineConfig) -> int:
    trainer = config.train.trainer_config(tuple(config.run.maps))
    print(f"Training policy (seed {config.train.seed}, floor {trainer.success_floor:.2f})...")
    net = train_policy(config.run.env_config(), trainer, config.train.seed)
    save_network(net, config.network)
    print(f"Policy written to {config.network}")
    return EXIT_OK


def cmd_verify_model(config: PipelineConfig) -> int:
    net = _load_policy(config)
    props = resolve_properties(config)
    domain = Box.unit(net.input_dim)
    verdicts = verify_many(
        [VerificationQuery(net, domain, p) for p in props],
        config.verifier.budget(),
        workers=config.verifier.workers,
    )

    unknown = False
    for prop, verdict in zip(props, verdicts):
        line = f"{prop.name}: {verdict.kind.value}"
        if verdict.witness is not None:
            line += f"  x={list(verdict.witness.input)}  y={list(verdict.witness.output)}"
        if verdict.reason:
            line += f"  ({verdict.reason})"
        print(line)
        unknown |= verdict.kind is VerdictKind.UNKNOWN

    write_json(
        {
            "network": config.network,
            "verdicts": [
                {"property": p.name, **v.to_dict()} for p, v in zip(props, verdicts)
            ],
        },
        config.output_path(VERDICTS_FILE),
    )
    return EXIT_BUDGET if unknown else EXIT_OK


def cmd_analyze(config: PipelineConfig, skip_refine: bool = False) -> int:
    net = _load_policy(config)
    props = resolve_properties(config)

    started = time.perf_counter()
    regions = split_domain(net, props, config.splitter.splitter_config())
    splitting_s = time.perf_counter() - started

    verification_hr = 0.0
    if not skip_refine:
        refinement = refine_regions(
            net, props, regions, config.verifier.budget(), workers=config.verifier.workers
        )
        regions = refinement.regions
        verification_hr = refinement.wall_time_s / 3600.0
        if refinement.inconclusive:
            logger.warning(
                "%d boxes inconclusive under the verifier budget; kept as unsafe",
                refinement.inconclusive,
            )

    if not is_tiling(regions):
        raise StageError("region set does not tile the input domain")
    save_regions(regions, config.output_path(REGIONS_FILE))

    print(f"Regions: {len(regions.safe)} safe, {len(regions.unsafe)} unsafe")
    for tag, count in sorted(regions.provenance_counts().items()):
        print(f"  {tag}: {count}")
    _print_timings({"Splitting (s)": splitting_s, "Verification (hr)": verification_hr})
    return EXIT_OK


def cmd_compress(config: PipelineConfig) -> int:
    regions = load_regions(config.output_path(REGIONS_FILE))
    before = len(regions.unsafe)

    started = time.perf_counter()
    clustered = cluster(regions.unsafe_boxes, config.cluster.cluster_config())
    clustering_s = time.perf_counter() - started

    started = time.perf_counter()
    simplified = simplify_boxes(clustered)
    names = [f"x{k}" for k in range(regions.domain.dim)]
    formula = emit_smt(simplified, names)
    reduction_s = time.perf_counter() - started

    compressed = LabeledRegionSet(
        domain=regions.domain,
        safe=list(regions.safe),
        unsafe=[LabeledBox(b, Provenance.CLUSTERED) for b in simplified],
        refined=regions.refined,
    )
    save_regions(compressed, config.output_path(CLUSTERED_FILE))
    smt_path = config.output_path(SMT_FILE)
    smt_path.parent.mkdir(parents=True, exist_ok=True)
    smt_path.write_text(formula, encoding="utf-8")

    print(f"Unsafe boxes: {before} -> {len(clustered)} clustered -> {len(simplified)} simplified")
    _print_timings({"Clustering (s)": clustering_s, "Reduction (s)": reduction_s})
    return EXIT_OK


def _load_unsafe_regions(config: PipelineConfig) -> LabeledRegionSet:
    clustered = config.output_path(CLUSTERED_FILE)
    if clustered.exists():
        return load_regions(clustered)
    logger.info("%s missing, indexing unclustered regions", clustered)
    return load_regions(config.output_path(REGIONS_FILE))


def build_reports(runs: list[EpisodeMetrics]) -> list[RunReport]:
    """Per-seed and overall report rows; every mode is compared with the noshield runs."""
    by_seed: dict[int, dict[str, list[EpisodeMetrics]]] = defaultdict(lambda: defaultdict(list))
    for m in runs:
        by_seed[m.seed // EPISODE_SEED_STRIDE][m.mode].append(m)

    groups: list[tuple[int | None, dict[str, list[EpisodeMetrics]]]] = sorted(
        by_seed.items(), key=lambda item: item[0]
    )
    overall: dict[str, list[EpisodeMetrics]] = defaultdict(list)
    for m in runs:
        overall[m.mode].append(m)
    groups.append((None, overall))

    reports = []
    for seed, modes in groups:
        baseline = modes.get(Mode.NOSHIELD.value)
        if not baseline:
            raise StageError("metrics contain no noshield baseline episodes")
        full = modes.get(Mode.FULL.value)
        for mode in Mode:
            episodes = modes.get(mode.value)
            if not episodes:
                continue
            reports.append(
                report(
                    episodes,
                    baseline,
                    full_runs=full if mode is Mode.GUIDED else None,
                    seed=seed,
                )
            )
    return reports


def _print_reports(reports: list[RunReport]) -> None:
    print(f"{'seed':>6} {'mode':>9} {'active%':>8} {'interv%':>8} {'coll%':>6} "
          f"{'succ%':>6} {'overhead':>9} {'gain%':>6}")
    for r in reports:
        seed = "all" if r.seed is None else str(r.seed)
        gain = "" if r.gain_pct is None else format_one_decimal(r.gain_pct)
        print(
            f"{seed:>6} {r.mode:>9} {format_one_decimal(r.active_time_pct):>8} "
            f"{format_one_decimal(r.interventions_pct):>8} {format_one_decimal(r.collisions_pct):>6} "
            f"{format_one_decimal(r.success_pct):>6} {format_one_decimal(r.overhead) + 'x':>9} {gain:>6}"
        )


def cmd_run(config: PipelineConfig) -> int:
    net = _load_policy(config)
    props = resolve_properties(config)
    run_cfg = config.run
    env_config = run_cfg.env_config()
    spec = ShieldSpec(tuple(props), formula_multiplier=run_cfg.formula_multiplier)

    modes = [Mode(m) for m in run_cfg.modes]
    if Mode.NOSHIELD not in modes:
        modes.insert(0, Mode.NOSHIELD)

    regions: LabeledRegionSet | None = None
    index = None
    if Mode.GUIDED in modes:
        regions = _load_unsafe_regions(config)
        index = build_index(
            regions.unsafe_boxes,
            regions.domain,
            resolution=config.cluster.index_resolution,
            max_dims=config.cluster.index_dims,
        )

    if run_cfg.episodes >= EPISODE_SEED_STRIDE:
        raise StageError(f"episodes must be below {EPISODE_SEED_STRIDE}")

    runs: list[EpisodeMetrics] = []
    for run_seed in run_cfg.seeds:
        for k in range(run_cfg.episodes):
            episode_seed = run_seed * EPISODE_SEED_STRIDE + k
            map_id = run_cfg.maps[k % len(run_cfg.maps)]
            baseline_ns = None
            for mode in modes:
                m = run_guided(net, spec, index, map_id, episode_seed, mode, config=env_config)
                if mode is Mode.NOSHIELD:
                    baseline_ns = m.wall_time_ns
                else:
                    m.unshielded_baseline_time_ns = baseline_ns
                runs.append(m)

    write_metrics_csv(runs, config.output_path(METRICS_FILE))
    reports = build_reports(runs)
    write_report_csv(reports, config.output_path(REPORT_FILE))
    _print_reports(reports)

    guided_collisions = sum(m.collisions for m in runs if m.mode == Mode.GUIDED.value)
    if guided_collisions and regions is not None and regions.refined:
        print(f"Safety violation: {guided_collisions} collisions in guided mode")
        return EXIT_SAFETY
    return EXIT_OK


def cmd_report(config: PipelineConfig) -> int:
    path = config.output_path(METRICS_FILE)
    if not path.exists():
        raise StageError(f"metrics file not found: {path}")
    reports = build_reports(read_metrics_csv(path))
    write_report_csv(reports, config.output_path(REPORT_FILE))
    _print_reports(reports)
    return EXIT_OK


# === CLI ===

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guided-shield",
        description="Verification-guided shielding for Particle World policies",
    )
    parser.add_argument("--config", "-c", type=str, help="Path to the pipeline config JSON")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", help="Train a policy and write its weight file")
    sub.add_parser("verify-model", help="Verify every property over the whole input domain")
    analyze = sub.add_parser("analyze", help="Split the input domain and verify the safe regions")
    analyze.add_argument(
        "--skip-refine",
        action="store_true",
        help="Keep the sampled labels without formal verification",
    )
    sub.add_parser("compress", help="Cluster unsafe regions and emit the SMT-LIB formula")

    run = sub.add_parser("run", help="Run episodes with and without the shield")
    run.add_argument(
        "--mode",
        action="append",
        choices=[m.value for m in Mode],
        help="Mode to run (repeatable); defaults to the config's modes",
    )
    run.add_argument("--episodes", type=int, help="Episodes per seed")
    run.add_argument("--seeds", type=str, help="Comma-separated run seeds, e.g. 12,66,99")
    run.add_argument("--formula-multiplier", type=int, help="Formula evaluations per shield check")

    sub.add_parser("report", help="Rebuild the report CSV from the metrics CSV")
    return parser


def _apply_run_overrides(config: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    updates: dict[str, object] = {}
    if args.mode:
        updates["modes"] = args.mode
    if args.episodes is not None:
        updates["episodes"] = args.episodes
    if args.seeds:
        try:
            updates["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError as e:
            raise ConfigError(f"--seeds: {e}") from e
    if args.formula_multiplier is not None:
        updates["formula_multiplier"] = args.formula_multiplier
    if not updates:
        return config
    try:
        run = type(config.run).model_validate({**config.run.model_dump(), **updates})
    except ValueError as e:
        raise ConfigError(f"run options: {e}") from e
    return config.model_copy(update={"run": run})


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="[%(levelname)s] %(name)s: %(message)s",
    )

    try:
        config, config_path = load_config(args.config)
        logger.debug("loaded config from %s", config_path)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "verify-model":
            return cmd_verify_model(config)
        if args.command == "analyze":
            return cmd_analyze(config, skip_refine=args.skip_refine)
        if args.command == "compress":
            return cmd_compress(config)
        if args.command == "run":
            return cmd_run(_apply_run_overrides(config, args))
        return cmd_report(config)
    except TrainingBudgetExceeded as e:
        print(f"Error: {e}")
        return EXIT_BUDGET
    except StageError as e:
        print(f"Error: {e}")
        return e.code
    except (
        ConfigError,
        NetworkFormatError,
        DimensionMismatchError,
        RegionFileError,
        MapFormatError,
        FileNotFoundError,
    ) as e:
        print(f"Error: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
