"""
mocr command line

  mocr arena run       pairwise OCR battles judged twice with swapped order
  mocr arena report    bootstrap Elo leaderboard from a battle log
  mocr svg pipeline    canonicalize, dedup and sample an SVG corpus
  mocr score           render-and-compare a predicted SVG against a reference image
  mocr parse validate  check a parsed-document file

Exit codes: 0 ok, 1 partial failure or violations, 2 configuration error,
3 I/O error, 4 data error.
"""

# =========================
# Standard & third-party
# =========================
import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from mocr import __version__, arena, config, corpus, parse_model, prompting, render_compare
from mocr.errors import ConfigError, DataError, MocrError
from mocr.services.battle_log import BattleLog
from mocr.services.judge_client import HttpJudge
from mocr.services.mock_judge import MockJudge

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4

logger = logging.getLogger("mocr")


# =========================
# Bootstrap / Logging
# =========================
def setup_logging(level: str, quiet: bool) -> None:
    logging.basicConfig(
        level=logging.WARNING if quiet else getattr(logging, level),
        format="[%(name)s] %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _progress(args: argparse.Namespace) -> bool:
    return not args.quiet and sys.stderr.isatty()


def _flags(args: argparse.Namespace, **extra: Any) -> Dict[str, Any]:
    flags = {"seed": args.seed, "jobs": args.jobs, "log_level": args.log_level}
    flags.update(extra)
    return flags


def resolve_config(args: argparse.Namespace, **extra: Any) -> config.RunConfig:
    return config.resolve(_flags(args, **extra), config_file=args.config)


# =========================
# arena
# =========================
def read_models(path: Path) -> List[str]:
    """One model id per line; '#' starts a comment."""
    models = []
    for line in path.read_text(encoding="utf-8").splitlines():
        name = line.split("#", 1)[0].strip()
        if name:
            models.append(name)
    return models


def build_judge(spec: str, cfg: config.RunConfig, template: prompting.PromptTemplate):
    if spec.startswith("mock:"):
        return MockJudge.from_policy(spec[len("mock:"):])
    if spec != "http":
        raise ConfigError(f"unknown judge '{spec}' (http | mock:<policy>)")
    if not cfg.judge.token():
        raise ConfigError(f"judge credentials missing: set {cfg.judge.api_key_env}")
    return HttpJudge(cfg.judge, template)


def cmd_arena_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, pairing=args.pairing, prompt_path=args.prompt)
    template = prompting.load_template(cfg.prompt_path)
    models_path = Path(args.models)
    models = read_models(models_path)
    store = arena.TranscriptStore(args.transcripts or models_path.parent)
    documents = arena.scan_documents(args.documents)
    plan = arena.schedule_pairs(models, documents, arena.PairingStrategy.parse(cfg.pairing, cfg.seed))
    logger.info("%d models, %d documents, %d tasks (%s)", len(set(models)), len(documents), len(plan), cfg.pairing)
    judge = build_judge(args.judge, cfg, template)
    log = BattleLog(args.log)

    async def go() -> arena.ArenaSummary:
        try:
            return await arena.run_arena(
                plan, judge, log, store,
                template_id=template.identifier, jobs=cfg.jobs, progress=_progress(args),
            )
        finally:
            await judge.aclose()

    summary = asyncio.run(go())
    for line in summary.lines():
        print(line)
    return EXIT_OK if summary.ok else EXIT_PARTIAL


def cmd_arena_report(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, iterations=args.iterations)
    log_path = Path(args.log)
    if not log_path.is_file():
        raise FileNotFoundError(f"battle log not found: {log_path}")
    records = BattleLog(log_path).load()
    board = arena.leaderboard(records, cfg.elo, cfg.iterations, cfg.seed, progress=_progress(args))
    print(board.format_table(), end="")

    export = board.to_dict()
    if args.by_benchmark:
        boards = arena.leaderboard_by_benchmark(records, cfg.elo, cfg.iterations, cfg.seed)
        export["benchmarks"] = {name: b.to_dict() for name, b in boards.items()}
        for name, b in boards.items():
            print(f"\n== {name} ==")
            print(b.format_table(), end="")

    out = Path(args.out) if args.out else log_path.with_name(log_path.stem + ".leaderboard.json")
    out.write_text(json.dumps(export, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {out}")
    return EXIT_OK


# =========================
# svg pipeline
# =========================
def cmd_svg_pipeline(args: argparse.Namespace) -> int:
    cfg = resolve_config(
        args,
        sample_target=args.target,
        sample_domain_cap=args.domain_cap,
        sample_domain_caps=args.domain_caps,
        sample_quantiles=args.quantiles,
        sample_proportions=args.proportions,
        hash_size=args.hash_size,
        phash_threshold=args.threshold,
    )
    report = corpus.run_pipeline(
        args.input,
        cfg.sampling,
        domain_map=corpus.load_domain_map(args.domains),
        hash_size=cfg.hash_size,
        threshold=cfg.phash_threshold,
        jobs=cfg.jobs,
        progress=_progress(args),
    )
    out_dir = Path(args.out)
    manifest = out_dir / "manifest.jsonl"
    corpus.write_manifest(report, manifest)
    for line in report.lines():
        print(line)
    print(f"wrote {manifest}")
    if not args.no_pairs:
        pairs = corpus.export_pairs(report, out_dir, size=cfg.hash_size)
        print(f"wrote {pairs}")
    return EXIT_OK


# =========================
# score
# =========================
def _print_score(label: str, s: render_compare.ScoreBreakdown) -> None:
    flag = f"  FAILED ({s.error})" if s.failed else ""
    fonts = "  (font fallback)" if s.font_fallback else ""
    print(f"{label}pixel {s.pixel:.4f}  structural {s.structural:.4f}  composite {s.composite:.4f}{flag}{fonts}")


def cmd_score(args: argparse.Namespace) -> int:
    reference, predicted = Path(args.reference), Path(args.predicted)
    if reference.is_dir() and predicted.is_dir():
        pairs = corpus.score_directories(reference, predicted, progress=_progress(args))
        for p in pairs:
            if p.score is None:
                print(f"{p.pair_id}: missing prediction")
            else:
                _print_score(f"{p.pair_id}: ", p.score)
        for domain, mean in corpus.domain_means(pairs).items():
            print(f"mean composite [{domain}] {mean:.4f}")
        if args.out:
            Path(args.out).write_text(
                "".join(json.dumps(p.to_record(), sort_keys=True) + "\n" for p in pairs), encoding="utf-8"
            )
            print(f"wrote {args.out}")
        return EXIT_OK

    bitmap = render_compare.Bitmap.load(reference)
    svg_text = predicted.read_text(encoding="utf-8", errors="replace")
    result = render_compare.reconstruction_score(bitmap, svg_text)
    _print_score("", result)
    if args.out:
        Path(args.out).write_text(json.dumps(result.to_record(predicted.stem), sort_keys=True) + "\n",
                                  encoding="utf-8")
    return EXIT_OK


# =========================
# parse validate
# =========================
def cmd_parse_validate(args: argparse.Namespace) -> int:
    docs = parse_model.load_documents(args.file)
    bad = 0
    for n, doc in enumerate(docs, start=1):
        for v in parse_model.validate_document(doc):
            bad += 1
            print(f"document {n}: {v}")
    if bad:
        print(f"{bad} violation(s) in {len(docs)} document(s)")
        return EXIT_PARTIAL
    print("OK")
    return EXIT_OK


# =========================
# Argument parsing
# =========================
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mocr", description="MOCR evaluation and data toolkit")
    p.add_argument("--version", action="version", version=f"mocr {__version__}")
    p.add_argument("--config", help="dotenv-style file of MOCR_* settings")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    p.add_argument("--jobs", type=int, help="parallel battles / assets")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--log-level", choices=config.LOG_LEVELS)
    p.add_argument("-q", "--quiet", action="store_true", help="warnings only, no progress bars")
    sub = p.add_subparsers(dest="command")

    ar = sub.add_parser("arena", help="OCR Arena battles and leaderboards").add_subparsers(dest="action")
    run = ar.add_parser("run", help="run (or resume) pairwise battles")
    run.add_argument("--models", required=True, help="file listing model ids, one per line")
    run.add_argument("--transcripts", help="root of <model>/<doc-id>.md (default: the models file's directory)")
    run.add_argument("--documents", required=True, help="directory of page images")
    run.add_argument("--log", required=True, help="battle log (appended)")
    run.add_argument("--judge", default="http", help="http | mock:<tie|first|second|marker:TEXT|fail>")
    run.add_argument("--pairing", help="all-pairs | sampled:N")
    run.add_argument("--prompt", help="judge prompt template")
    run.set_defaults(func=cmd_arena_run)

    rep = ar.add_parser("report", help="bootstrap Elo leaderboard")
    rep.add_argument("--log", required=True)
    rep.add_argument("--iterations", type=int)
    rep.add_argument("--out", help="JSON export (default: <log>.leaderboard.json)")
    rep.add_argument("--by-benchmark", action="store_true", help="also rank within each benchmark")
    rep.set_defaults(func=cmd_arena_report)

    svg = sub.add_parser("svg", help="SVG data engine").add_subparsers(dest="action")
    pipe = svg.add_parser("pipeline", help="canonicalize, dedup, sample and export pairs")
    pipe.add_argument("--input", required=True, help="directory of .svg files")
    pipe.add_argument("--out", required=True, help="output directory")
    pipe.add_argument("--domains", help="JSON map of glob pattern -> domain label")
    pipe.add_argument("--target", type=int)
    pipe.add_argument("--domain-cap", type=float, help="default per-domain max share")
    pipe.add_argument("--domain-caps", help="per-domain shares, e.g. icons=0.3,charts=0.5")
    pipe.add_argument("--quantiles", help="complexity strata boundaries, e.g. 0.5")
    pipe.add_argument("--proportions", help="stratum proportions, e.g. 0.5,0.5")
    pipe.add_argument("--hash-size", type=int)
    pipe.add_argument("--threshold", type=int, help="pHash Hamming threshold")
    pipe.add_argument("--no-pairs", action="store_true", help="skip the image-SVG pair export")
    pipe.set_defaults(func=cmd_svg_pipeline)

    sc = sub.add_parser("score", help="render-and-compare score")
    sc.add_argument("reference", help="reference image (or directory)")
    sc.add_argument("predicted", help="predicted SVG (or directory)")
    sc.add_argument("--out", help="write mocr-score/1 records")
    sc.set_defaults(func=cmd_score)

    pm = sub.add_parser("parse", help="parsed-document tools").add_subparsers(dest="action")
    val = pm.add_parser("validate", help="check document invariants")
    val.add_argument("file")
    val.set_defaults(func=cmd_parse_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config.load_environment()
    setup_logging(args.log_level or "INFO", args.quiet)

    try:
        if args.print_config:
            print(resolve_config(args).to_json())
            return EXIT_OK
        if not hasattr(args, "func"):
            parser.print_help(sys.stderr)
            return EXIT_CONFIG
        if args.log_level is None:
            setup_logging(resolve_config(args).log_level, args.quiet)
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except MocrError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARTIAL
