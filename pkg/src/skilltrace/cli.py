"""Command-line pipeline: simulate, run, report.

`simulate` writes a synthetic cohort; `run` executes the full protocol
(filter first attempts, fit every selected model on all the data, score
the same data, build knowledge tables, correlate against the posttest,
test all estimator pairs under FDR control) and writes correlations.csv,
comparisons.csv, report.json plus fitted-parameter files and model
checkpoints; `report` renders the two result tables as text.
"""

import argparse
import datetime
import hashlib
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from . import ESTIMATOR_NAMES, bkt, dkt, dkvmn, estimator, pfa, simulator, stats
from .dataset import (
    PosttestScores,
    SkillCatalog,
    StudentSequence,
    build_sequences,
    first_attempts,
    interactions_to_csv,
    parse_interactions,
    parse_posttest,
    posttest_to_csv,
    skill_subsequence,
)
from .simulator import ground_truth_to_csv


class CliError(Exception):
    def __init__(self, module: str, stage: str, message: str):
        super().__init__(f"[{module}/{stage}] {message}")
        self.module = module
        self.stage = stage


class MalformedReport(Exception):
    pass


_SCENARIOS = {"mastery-saturation": simulator.mastery_saturation_scenario}

_DEFAULT_CONFIG = {
    "estimators": list(ESTIMATOR_NAMES),
    "seed": 42,
    "dkt": {},
    "dkvmn": {},
    "stats": {"q": 0.05, "fdr_family": "global", "fdr_method": "bh"},
}


def load_config(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        user = json.load(fh)
    config = json.loads(json.dumps(_DEFAULT_CONFIG))  # deep copy
    for key, value in user.items():
        if isinstance(value, dict) and isinstance(config.get(key), dict):
            config[key].update(value)
        else:
            config[key] = value
    if not config.get("estimators"):
        raise CliError("cli", "config", "selected estimator list is empty")
    unknown = set(config["estimators"]) - set(ESTIMATOR_NAMES)
    if unknown:
        raise CliError("cli", "config", f"unknown estimators: {sorted(unknown)}")
    for key in ("interactions", "posttest", "output_dir"):
        if key not in config:
            raise CliError("cli", "config", f"missing required key {key!r}")
    paths = [config["interactions"], config["posttest"], config["output_dir"]]
    if len(set(paths)) != len(paths):
        raise CliError("cli", "config", "referenced paths must be distinct")
    return config


def _config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True).encode("utf-8")
    return hashlib.sha256(canonical).hexdigest()


def _per_skill_sequences(
    sequences: List[StudentSequence], catalog: SkillCatalog
) -> Dict[str, List[List[bool]]]:
    out: Dict[str, List[List[bool]]] = {s: [] for s in catalog}
    for seq in sequences:
        for skill_id in catalog:
            sub = skill_subsequence(seq, skill_id)
            if sub:
                out[skill_id].append(sub)
    return {s: seqs for s, seqs in out.items() if seqs}


def _pair_sequences(
    sequences: List[StudentSequence], catalog: SkillCatalog
) -> Dict[Tuple[str, str], List[bool]]:
    out: Dict[Tuple[str, str], List[bool]] = {}
    for seq in sequences:
        for skill_id in catalog:
            sub = skill_subsequence(seq, skill_id)
            if sub:
                out[(seq.student_id, skill_id)] = sub
    return out


def run_pipeline(config: dict, seed_override: Optional[int] = None) -> dict:
    """Execute the full protocol and return the report document.

    Training and evaluation intentionally use the same first-attempt data;
    the external posttest is the held-out criterion.
    """
    if seed_override is not None:
        config = dict(config)
        config["seed"] = seed_override
    seed = int(config["seed"])
    selected = list(config["estimators"])

    try:
        with open(config["interactions"], "rb") as fh:
            records = parse_interactions(fh)
        with open(config["posttest"], "rb") as fh:
            posttest = parse_posttest(fh)
    except OSError as exc:
        raise CliError("dataset", "load", str(exc)) from exc
    except Exception as exc:
        raise CliError("dataset", "parse", str(exc)) from exc

    firsts = first_attempts(records)
    catalog = SkillCatalog.from_records(firsts)
    sequences = build_sequences(firsts, catalog)
    pair_seqs = _pair_sequences(sequences, catalog)

    tables: List[estimator.KnowledgeTable] = []
    invalid_counts: Dict[str, int] = {}
    artifacts: Dict[str, bytes] = {}

    if {"BKT", "mean-BKT"} & set(selected):
        try:
            fitted = bkt.fit_all_skills(_per_skill_sequences(sequences, catalog))
        except bkt.BktError as exc:
            raise CliError("bkt", "fit", str(exc)) from exc
        artifacts["bkt_params.csv"] = bkt.params_to_csv(fitted)
        traces = {
            key: bkt.trace_student(seq, fitted[key[1]])
            for key, seq in pair_seqs.items()
        }
        if "BKT" in selected:
            tables.append(estimator.final_estimate_bkt(traces))
        if "mean-BKT" in selected:
            tables.append(estimator.mean_estimate_bkt(traces))

    if {"PFA", "mean-PFA"} & set(selected):
        try:
            pfa_params = pfa.fit(_per_skill_sequences(sequences, catalog))
        except pfa.PfaError as exc:
            raise CliError("pfa", "fit", str(exc)) from exc
        artifacts["pfa_params.csv"] = pfa.params_to_csv(pfa_params)
        if "PFA" in selected:
            tables.append(estimator.final_estimate_pfa(pair_seqs, pfa_params))
        if "mean-PFA" in selected:
            tables.append(estimator.mean_estimate_pfa(pair_seqs, pfa_params))

    if "mean-DKT" in selected:
        try:
            dkt_config = dkt.DktConfig(**{"seed": seed, **config.get("dkt", {})})
        except (TypeError, ValueError) as exc:
            raise CliError("dkt", "config", str(exc)) from exc
        try:
            model = dkt.train(sequences, catalog, dkt_config)
        except dkt.DktError as exc:
            raise CliError("dkt", "train", str(exc)) from exc
        artifacts["dkt_checkpoint.json"] = dkt.save_checkpoint(model)
        preds = [p for seq in sequences for p in dkt.predict_attempts(model, seq)]
        invalid_counts["mean-DKT"] = estimator.count_invalid(preds)
        tables.append(estimator.mean_aggregate(preds, "mean-DKT"))

    if "mean-DKVMN" in selected:
        try:
            dkvmn_config = dkvmn.DkvmnConfig(**{"seed": seed, **config.get("dkvmn", {})})
        except (TypeError, ValueError) as exc:
            raise CliError("dkvmn", "config", str(exc)) from exc
        try:
            model = dkvmn.train(sequences, catalog, dkvmn_config)
        except dkvmn.DkvmnError as exc:
            raise CliError("dkvmn", "train", str(exc)) from exc
        artifacts["dkvmn_checkpoint.json"] = dkvmn.save_checkpoint(model)
        preds = [p for seq in sequences for p in dkvmn.predict_attempts(model, seq)]
        invalid_counts["mean-DKVMN"] = estimator.count_invalid(preds)
        tables.append(estimator.mean_aggregate(preds, "mean-DKVMN"))

    stats_cfg = config.get("stats", {})
    try:
        report = stats.compare_all(
            tables,
            posttest,
            q=stats_cfg.get("q", 0.05),
            fdr_family=stats_cfg.get("fdr_family", "global"),
            fdr_method=stats_cfg.get("fdr_method", "bh"),
        )
    except (stats.StatsError, ValueError) as exc:
        raise CliError("stats", "compare", str(exc)) from exc

    doc = {
        "seed": seed,
        "config_hash": _config_hash({k: v for k, v in config.items() if k != "seed"}),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "estimators": [t.estimator_name for t in tables],
        "skills": sorted({c.skill_id for c in report.correlations}),
        "q": stats_cfg.get("q", 0.05),
        "fdr_family": stats_cfg.get("fdr_family", "global"),
        "fdr_method": stats_cfg.get("fdr_method", "bh"),
        "invalid_predictions": invalid_counts,
        "correlations": [
            {"estimator": c.estimator_name, "skill": c.skill_id, "r": c.r, "n": c.n}
            for c in report.correlations
        ],
        "comparisons": [
            {
                "skill": c.skill_id,
                "estimator_a": c.estimator_a,
                "estimator_b": c.estimator_b,
                "t": c.t,
                "df": c.df,
                "p": c.p,
                "significant": c.significant_after_fdr,
            }
            for c in report.comparisons
        ],
        "skipped": report.skipped,
    }
    doc["_artifacts"] = artifacts  # written by cmd_run, not serialized
    return doc


def _correlations_csv(doc: dict) -> bytes:
    lines = ["skill,estimator,r,n"]
    for c in doc["correlations"]:
        lines.append(f"{c['skill']},{c['estimator']},{c['r']!r},{c['n']}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _comparisons_csv(doc: dict) -> bytes:
    lines = ["skill,estimator_a,estimator_b,t,df,p,significant"]
    for c in doc["comparisons"]:
        lines.append(
            f"{c['skill']},{c['estimator_a']},{c['estimator_b']},"
            f"{c['t']!r},{c['df']},{c['p']!r},{int(c['significant'])}"
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def cmd_simulate(args) -> int:
    spec = _SCENARIOS[args.scenario](args.seed)
    records, posttest, truth = simulator.generate_cohort(spec)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "interactions.csv").write_bytes(interactions_to_csv(records))
        (out / "posttest.csv").write_bytes(posttest_to_csv(posttest))
        (out / "ground_truth.csv").write_bytes(ground_truth_to_csv(truth))
    except OSError as exc:
        print(f"error: [simulator/write] {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(records)} interactions for {spec.num_students} students to {out}")
    return 0


def cmd_run(args) -> int:
    written: List[Path] = []
    try:
        config = load_config(Path(args.config))
        doc = run_pipeline(config, seed_override=args.seed)
        out = Path(config["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        artifacts = doc.pop("_artifacts")
        for name, blob in sorted(artifacts.items()):
            path = out / name
            path.write_bytes(blob)
            written.append(path)
        for name, blob in (
            ("correlations.csv", _correlations_csv(doc)),
            ("comparisons.csv", _comparisons_csv(doc)),
            ("report.json", json.dumps(doc, indent=2, sort_keys=True).encode("utf-8")),
        ):
            path = out / name
            path.write_bytes(blob)
            written.append(path)
    except (CliError, OSError, json.JSONDecodeError) as exc:
        for path in written:  # no partial outputs on failure
            path.unlink(missing_ok=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(written)} files to {out}")
    return 0


def _load_report(path: Path) -> dict:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedReport(str(exc)) from exc
    for key in ("estimators", "skills", "correlations", "comparisons"):
        if key not in doc:
            raise MalformedReport(f"missing key {key!r}")
    if not doc["estimators"]:
        raise MalformedReport("empty estimator selection")
    return doc


def render_report(doc: dict, table2_signs: bool = False) -> str:
    """Text rendering of the correlation matrix and the per-skill
    comparison triangles; `*` marks FDR-significant cells."""
    estimators = doc["estimators"]
    skills = doc["skills"]
    corr = {(c["estimator"], c["skill"]): c["r"] for c in doc["correlations"]}
    width = max(12, max(len(e) for e in estimators) + 2)
    lines = ["Correlations with posttest scores", ""]
    lines.append("".ljust(width) + "".join(s.rjust(12) for s in skills))
    for e in estimators:
        row = e.ljust(width)
        for s in skills:
            r = corr.get((e, s))
            row += (f"{r:.2f}" if r is not None else "--").rjust(12)
        lines.append(row)

    comp = {
        (c["skill"], c["estimator_a"], c["estimator_b"]): c
        for c in doc["comparisons"]
    }
    for skill in skills:
        lines += ["", f"Pairwise comparison t-scores: {skill}", ""]
        header = "".ljust(width) + "".join(e.rjust(12) for e in estimators[1:])
        lines.append(header)
        for i, ea in enumerate(estimators[:-1]):
            row = ea.ljust(width)
            for eb in estimators[1:]:
                j = estimators.index(eb)
                cell = comp.get((skill, ea, eb))
                if j <= i or cell is None:
                    row += "".rjust(12)
                    continue
                t = -cell["t"] if table2_signs else cell["t"]
                mark = "*" if cell["significant"] else ""
                row += f"{t:.2f}{mark}".rjust(12)
            lines.append(row)
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    try:
        doc = _load_report(Path(args.report))
    except MalformedReport as exc:
        print(f"error: malformed report: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(render_report(doc, table2_signs=args.table2_signs))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skilltrace",
        description="Fit knowledge-tracing models and compare knowledge "
        "estimators against posttest scores.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic cohort")
    p_sim.add_argument("--scenario", choices=sorted(_SCENARIOS), default="mastery-saturation")
    p_sim.add_argument("--seed", type=int, default=42)
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_run = sub.add_parser("run", help="run the full fit/estimate/compare pipeline")
    p_run.add_argument("--config", required=True, help="JSON run configuration")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.set_defaults(func=cmd_run)

    p_rep = sub.add_parser("report", help="render result tables from report.json")
    p_rep.add_argument("--report", required=True, help="path to report.json")
    p_rep.add_argument(
        "--table2-signs",
        action="store_true",
        help="negate displayed t-scores (second-listed estimator positive)",
    )
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
