"""Command-line entry point: ``apf <stage> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 provider error.
Payloads go to stdout; logs and the resolved configuration go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from apf.config import PROVIDERS, PipelineConfig, dumps_config, resolve_config
from apf.errors import DataError, OutputExists, ProviderError
from apf.formulation import feasibility, parse_formulation
from apf.pipeline import workflow
from apf.ranking import Ranking, induced_ranking
from apf.scoring import alignment_report

log = logging.getLogger("apf")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROVIDER = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag dest -> PipelineConfig field
_CONFIG_FLAGS = {
    "seed": "seed",
    "provider": "provider",
    "threshold": "threshold",
    "alpha": "alpha",
    "variants": "variants",
    "samples": "samples",
    "designs": "n_designs",
    "family_size": "family_size",
    "sets": "n_sets",
    "mock_p": "mock_p",
    "augment_first": "augment_first",
    "empty_band": "empty_band",
}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", metavar="PATH", help="YAML config file")
    g.add_argument("--seed", type=int)
    g.add_argument("--provider", choices=PROVIDERS)
    g.add_argument("--threshold", type=float, help="selection threshold on the quality score")
    g.add_argument("--alpha", type=float, help="objective weight in the alignment score")
    g.add_argument("--variants", type=int, help="paraphrases per requirement (v)")
    g.add_argument("--samples", type=int, help="augmented samples per record (l)")
    g.add_argument("--designs", type=int, help="number of synthetic design families")
    g.add_argument("--family-size", type=int)
    g.add_argument("--sets", type=int, help="number of requirement sets to derive")
    g.add_argument("--mock-p", type=float, help="corruption probability for mock-corrupt")
    g.add_argument("--augment-first", action="store_true", default=None, help="augment before scoring")
    g.add_argument("--empty-band", choices=("error", "zero"))
    g.add_argument("--out", metavar="PATH", default="apf-run", help="run directory (default: apf-run)")
    g.add_argument("--force", action="store_true", help="overwrite existing outputs")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="apf", description="Build and score requirement-to-formulation datasets.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, help, **kw):
        return sub.add_parser(name, parents=[common], help=help, description=help, **kw)

    add("synth", "write synthetic test instances (instances.jsonl)")
    add("derive-reqs", "derive requirement sets and test-instance lists (reqsets.jsonl)")
    add("gen-formulations", "generate one formulation per requirement set (base.jsonl)")
    add("annotate", "collect reference rankings (rankings.jsonl)")
    add("score", "score records against reference rankings (scored.jsonl)").add_argument(
        "--input", help="records file, relative to --out (default: base.jsonl)"
    )
    add("select", "keep records scoring at least the threshold (hq.jsonl)").add_argument(
        "--input", help="scored records file, relative to --out (default: scored.jsonl)"
    )
    add("augment", "paraphrase and permute retained records (train.jsonl)").add_argument(
        "--input", help="records file, relative to --out (default: hq.jsonl)"
    )
    add("export-sft", "write fine-tuning rows (sft.jsonl)").add_argument(
        "--input", help="records file, relative to --out (default: train.jsonl)"
    )
    ev = add("eval", "alignment metrics of one formulation against ground truth")
    ev.add_argument("--formulation", required=True, metavar="PATH", help="formulation text file")
    ev.add_argument("--instances", required=True, metavar="PATH", help="test instances (JSON lines)")
    truth = ev.add_mutually_exclusive_group(required=True)
    truth.add_argument("--truth", metavar="PATH", help="ground-truth formulation text file")
    truth.add_argument("--reference", metavar="PATH", help='JSON {"ranking": {...}, "feasible": [0|1, ...]}')
    rp = add("report", "score histogram and run report (report.json)")
    rp.add_argument("--json", action="store_true", help="print histogram rows as JSON")
    add("run-all", "run every stage in order")
    return parser


def resolve(args) -> PipelineConfig:
    flags = {field: getattr(args, dest, None) for dest, field in _CONFIG_FLAGS.items()}
    return resolve_config(args.config, flags)


def _eval(args, cfg: PipelineConfig) -> dict:
    def read(path):
        try:
            return Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from None

    f = parse_formulation(read(args.formulation), id=Path(args.formulation).stem)
    insts = workflow.load_instances(args.instances)
    kw = {"tol": cfg.tol, "empty_band": cfg.empty_band}
    if args.truth:
        truth = parse_formulation(read(args.truth), id=Path(args.truth).stem)
        ranking = induced_ranking(truth, insts, **kw)
        feasible = [int(feasibility(truth, inst, **kw)[0]) for inst in insts]
    else:
        try:
            ref = json.loads(read(args.reference))
            ranking, feasible = Ranking.from_dict(ref["ranking"]), [int(y) for y in ref["feasible"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"bad reference file {args.reference}: {exc}") from None
    return alignment_report(f, insts, ranking, feasible, cfg.alpha, **kw).to_dict()


def _dispatch(args, cfg: PipelineConfig, out) -> None:
    run = workflow.RunDir(Path(args.out), force=args.force)
    cmd = args.command
    inp = getattr(args, "input", None)
    if cmd == "synth":
        n = workflow.run_synth(cfg, run)
    elif cmd == "derive-reqs":
        n = workflow.run_derive(cfg, run)
    elif cmd == "gen-formulations":
        n = workflow.run_generate(cfg, run)
    elif cmd == "annotate":
        n = workflow.run_annotate(cfg, run)
    elif cmd == "score":
        n = workflow.run_score(cfg, run, inp)
    elif cmd == "select":
        n = workflow.run_select(cfg, run, inp)
    elif cmd == "augment":
        n = workflow.run_augment(cfg, run, inp)
    elif cmd == "export-sft":
        n = workflow.run_export(cfg, run, inp or workflow.TRAIN)
    elif cmd == "eval":
        out.write(json.dumps(_eval(args, cfg), indent=2, sort_keys=True) + "\n")
        return
    elif cmd == "report":
        report = workflow.run_report(cfg, run)
        if args.json:
            out.write(json.dumps(report["histogram"], indent=2) + "\n")
        else:
            out.write(report["histogram_text"] + "\n")
        return
    elif cmd == "run-all":
        report = workflow.run_all(cfg, run)
        out.write(report["histogram_text"] + "\n")
        return
    else:  # pragma: no cover - argparse rejects unknown commands
        raise AssertionError(cmd)
    log.info("%s: wrote %d rows to %s", cmd, n, run.root)


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve(args)
        # The resolved configuration is always echoed so runs can be reproduced.
        print(f"apf {args.command}: config {dumps_config(cfg)}", file=sys.stderr)
        _dispatch(args, cfg, out)
    except OutputExists as exc:
        print(f"apf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"apf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ProviderError as exc:
        print(f"apf: provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except KeyboardInterrupt:
        print("apf: interrupted; unfinished outputs were left as *.partial", file=sys.stderr)
        return 130
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
