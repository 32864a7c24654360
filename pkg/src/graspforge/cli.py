"""Command-line interface.

    graspforge <subcommand> --config <path> [--seed N] [--jobs N] [--output DIR]

Subcommands mirror the pipeline stages so any stage can be re-run from its
predecessor's files. Log level comes from the GRASPFORGE_LOG_LEVEL
environment variable (default WARNING).
"""

from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .dro import load_distance_matrix, recover_grasp
from .errors import GraspForgeError
from .hand import Grasp, load_hand_model
from .losses import ContactAssignment
from .objects import load_object_model
from .pipeline import (
    chain_record,
    derived_seed,
    emit_summary,
    list_object_ids,
    load_config,
    run_adapt_stage,
    run_pipeline,
    run_transfer_stage,
    validate_inputs,
    STAGE_ADAPT,
)
from .transfer import load_candidates, save_candidates
from .verify import VerificationReport, verify


def _setup_logging() -> None:
    level = os.environ.get("GRASPFORGE_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _config(path: str, seed: int | None, output: str | None):
    return load_config(path, {"seed": seed, "output_dir": output})


config_opt = click.option("--config", "config_path", required=True,
                          type=click.Path(exists=True, dir_okay=False),
                          help="Pipeline configuration (TOML or JSON).")
seed_opt = click.option("--seed", type=int, default=None, help="Override the root seed.")
output_opt = click.option("--output", type=click.Path(file_okay=False), default=None,
                          help="Override the output directory.")


@click.group()
def main() -> None:
    """Grasp-label data engine: contact transfer, adaptation, recovery,
    verification, and dataset emission."""
    _setup_logging()


@main.command()
@config_opt
def validate(config_path: str) -> None:
    """Check every input file, schema, and invariant; list all problems."""
    config = _config(config_path, None, None)
    problems = validate_inputs(config)
    if problems:
        for p in problems:
            click.echo(f"PROBLEM: {p}")
        click.echo(f"{len(problems)} problem(s) found")
        sys.exit(1)
    click.echo("configuration valid")


@main.command()
@config_opt
@seed_opt
@output_opt
@click.option("--object", "object_id", default=None, help="Only this object id.")
def transfer(config_path: str, seed: int | None, output: str | None, object_id: str | None) -> None:
    """Transfer demo contacts onto each object; write candidate files."""
    config = _config(config_path, seed, output)
    ids = [object_id] if object_id else list_object_ids(config)
    (config.output_dir / "candidates").mkdir(parents=True, exist_ok=True)
    failures = 0
    for oid in ids:
        try:
            obj = load_object_model(config.objects_dir / f"{oid}.json", oid)
            candidates = run_transfer_stage(config, oid, obj)
            out = config.output_dir / "candidates" / f"{oid}.json"
            save_candidates(out, candidates)
            click.echo(f"{oid}: {sum(len(candidates.per_finger[f]) for f in candidates.fingers)} "
                       f"candidate(s) over {len(candidates.fingers)} finger(s) -> {out}")
        except GraspForgeError as e:
            click.echo(f"{oid}: transfer failed: {e}", err=True)
            failures += 1
    sys.exit(1 if failures == len(ids) else 0)


@main.command()
@config_opt
@seed_opt
@output_opt
@click.option("--object", "object_id", default=None, help="Only this object id.")
def adapt(config_path: str, seed: int | None, output: str | None, object_id: str | None) -> None:
    """Optimize grasps from previously written candidate files."""
    config = _config(config_path, seed, output)
    model = load_hand_model(config.hand_model)
    ids = [object_id] if object_id else list_object_ids(config)
    (config.output_dir / "grasps").mkdir(parents=True, exist_ok=True)
    ranks = {oid: rank for rank, oid in enumerate(list_object_ids(config))}
    failures = 0
    for oid in ids:
        cpath = config.output_dir / "candidates" / f"{oid}.json"
        try:
            candidates = load_candidates(cpath)
            obj = load_object_model(config.objects_dir / f"{oid}.json", oid)
            results = run_adapt_stage(config, ranks.get(oid, 0), model, obj, candidates)
            adapt_seed = derived_seed(config.seed, STAGE_ADAPT, ranks.get(oid, 0))
            out = config.output_dir / "grasps" / f"{oid}.jsonl"
            with out.open("w", encoding="utf-8") as fh:
                for r in sorted(results, key=lambda r: r.chain):
                    fh.write(json.dumps(chain_record(oid, r, adapt_seed), sort_keys=True) + "\n")
            click.echo(f"{oid}: best loss {results[0].loss:.6g} over {len(results)} chain(s) -> {out}")
        except (GraspForgeError, OSError) as e:
            click.echo(f"{oid}: adaptation failed: {e}", err=True)
            failures += 1
    sys.exit(1 if failures == len(ids) else 0)


@main.command(name="verify")
@config_opt
@output_opt
@click.option("--grasps", "grasps_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Grasp JSONL to verify (default: every grasps/<object>.jsonl).")
@click.option("--invert-exit", is_flag=True, default=False,
              help="Exit 0 when at least one grasp FAILS instead.")
def verify_cmd(config_path: str, output: str | None, grasps_path: str | None,
               invert_exit: bool) -> None:
    """Verify stored grasps; exit 0 iff all pass (invertible)."""
    config = _config(config_path, None, output)
    model = load_hand_model(config.hand_model)
    paths = ([Path(grasps_path)] if grasps_path
             else sorted((config.output_dir / "grasps").glob("*.jsonl")))
    if not paths:
        click.echo("no grasp files to verify", err=True)
        sys.exit(1)
    all_pass = True
    for path in paths:
        object_id = path.stem
        obj = load_object_model(config.objects_dir / f"{object_id}.json", object_id)
        out_lines = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            rec = json.loads(line)
            grasp = Grasp.from_dict(rec)
            report = verify(grasp, model, obj, config.verify)
            rec["verification"] = report.to_dict()
            out_lines.append(json.dumps(rec, sort_keys=True))
            status = "PASS" if report.passed else "FAIL"
            all_pass &= report.passed
            click.echo(f"{object_id} chain {rec['chain']}: {status} "
                       f"(stable={report.stable} functional={report.functional} "
                       f"avoidance={report.avoidance_clear} quality={report.quality:.4f})")
        verified_path = path.with_name(path.stem + "_verified.jsonl")
        verified_path.write_text("\n".join(out_lines) + "\n", encoding="utf-8")
    ok = not all_pass if invert_exit else all_pass
    sys.exit(0 if ok else 1)


@main.command()
@config_opt
@click.option("--matrix", "matrix_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Distance-matrix (.drom) file with its .json companion.")
@click.option("--object", "object_id", required=True, help="Object id for the anchor points.")
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False),
              help="Write the recovered grasp JSON here (default stdout).")
def recover(config_path: str, matrix_path: str, object_id: str, out_path: str | None) -> None:
    """Recover a grasp from a stored distance matrix."""
    config = _config(config_path, None, None)
    model = load_hand_model(config.hand_model)
    obj = load_object_model(config.objects_dir / f"{object_id}.json", object_id)
    matrix = load_distance_matrix(matrix_path)
    init = Grasp(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3),
                 0.5 * (model.lower_limits + model.upper_limits))
    result = recover_grasp(matrix, obj.surface.points, model, init,
                           anchors_per_point=config.dro.anchors_per_point)
    doc = {
        **result.grasp.to_dict(),
        "multilateration_rms": float(np.sqrt(np.mean(result.multilateration_residuals**2))),
        "ik_rms": result.fit.rms,
        "converged": result.fit.converged,
        "max_point_error": float(result.ik_point_errors.max()),
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
        click.echo(f"recovered grasp -> {out_path}")
    else:
        click.echo(text)


@main.command()
@config_opt
@seed_opt
@output_opt
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Objects processed in parallel.")
def run(config_path: str, seed: int | None, output: str | None, jobs: int) -> None:
    """Full pipeline: validate, transfer, adapt, verify, emit records."""
    overrides = {"seed": seed, "output_dir": output}
    config = load_config(config_path, overrides)
    problems = validate_inputs(config)
    if problems:
        for p in problems:
            click.echo(f"PROBLEM: {p}", err=True)
        sys.exit(1)
    result = run_pipeline(config, jobs=jobs, config_path=config_path, overrides=overrides)
    for oc in result.outcomes:
        if oc.error:
            click.echo(f"{oc.object_id}: no records ({oc.error})", err=True)
        else:
            click.echo(f"{oc.object_id}: {len(oc.records)} record(s) "
                       f"from {oc.passing}/{oc.chains} passing chain(s)")
    click.echo(f"total records: {result.record_count}; manifest: {result.manifest_path}")
    sys.exit(0 if result.record_count > 0 else 1)


@main.command()
@config_opt
@output_opt
def summary(config_path: str, output: str | None) -> None:
    """Summarize an emitted dataset."""
    config = _config(config_path, None, output)
    click.echo(json.dumps(emit_summary(config.output_dir), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
