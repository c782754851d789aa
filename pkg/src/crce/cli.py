"""Command-line entry point wiring dataset generation, curation, embedding
analysis, erasure training, evaluation, and ablation sweeps.

Config precedence is built-in defaults < --config file < command-line
flags; the effective configuration is dumped into every run manifest.
Sweep cells run as isolated subprocesses of this same CLI.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

from . import coref_gen, curation, evaluator, toy, trainer
from .dataset import (
    CorefConceptDataset,
    DatasetParseError,
    dataset_digest,
    load_dataset,
    save_dataset,
    validate_record,
)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_ERROR = 2

MN_GRID = (1, 3, 5, 10)

CERTAINTY_SWEEP = (
    ("nocert", {"certainty_mode": "uniform_one"}),
    ("coref-0", {"certainty_mode": "noise", "noise_side": "coref", "noise_sigma": 0.0}),
    ("coref-0.2", {"certainty_mode": "noise", "noise_side": "coref", "noise_sigma": 0.2}),
    ("coref-0.4", {"certainty_mode": "noise", "noise_side": "coref", "noise_sigma": 0.4}),
    ("retain-0", {"certainty_mode": "noise", "noise_side": "retain", "noise_sigma": 0.0}),
    ("retain-0.2", {"certainty_mode": "noise", "noise_side": "retain", "noise_sigma": 0.2}),
    ("retain-0.4", {"certainty_mode": "noise", "noise_side": "retain", "noise_sigma": 0.4}),
    ("both-0.2", {"certainty_mode": "noise", "noise_side": "both", "noise_sigma": 0.2}),
    ("both-0.4", {"certainty_mode": "noise", "noise_side": "both", "noise_sigma": 0.4}),
)


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = EXIT_ERROR):
        self.exit_code = exit_code
        super().__init__(message)


@dataclass
class RunManifest:
    run_id: str
    command: str
    config_digest: str
    dataset_digest: str
    started: str
    finished: str = ""
    artifacts: dict[str, str] = field(default_factory=dict)
    effective_config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _digest_dict(obj: dict) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def start_manifest(command: str, effective_config: dict, ds_digest: str = "") -> RunManifest:
    config_digest = _digest_dict(effective_config)
    return RunManifest(
        run_id=f"{command}-{datetime.now(timezone.utc).strftime('%Y%m%dT%H%M%S%f')}-{config_digest[:8]}",
        command=command,
        config_digest=config_digest,
        dataset_digest=ds_digest,
        started=_now(),
        effective_config=effective_config,
    )


def write_manifest(manifest: RunManifest, path: str) -> None:
    """Manifests are immutable: refuse to overwrite an existing one."""
    if os.path.exists(path):
        raise CliError(f"manifest already exists at {path}; choose a fresh output location")
    manifest.finished = _now()
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest.to_dict(), handle, indent=2)


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(f"config file is not valid JSON: {exc}")


def _load_dataset_or_fail(path: str) -> CorefConceptDataset:
    if not os.path.exists(path):
        raise CliError(f"dataset file not found: {path}")
    try:
        return load_dataset(path)
    except DatasetParseError as exc:
        raise CliError(f"could not parse dataset: {exc}")


def _find_record(dataset: CorefConceptDataset, target: str):
    record = dataset.find(target)
    if record is None:
        keys = ", ".join(r.key() for r in dataset.concepts)
        raise CliError(f"no record {target!r} in dataset (known: {keys})")
    return record


def build_chat_client(config: dict):
    llm = config.get("llm", {})
    if "mock_fixtures" in llm:
        return coref_gen.MockChatClient.from_file(llm["mock_fixtures"])
    return coref_gen.HttpChatClient(coref_gen.LlmClientConfig.from_dict(llm))


def build_encoder(kind: str, config: dict):
    if kind == "hash":
        enc = config.get("encoder", {})
        from .embedding import HashEncoder

        return HashEncoder(dim=enc.get("dim", 64), seed=enc.get("seed", 0))
    if kind == "toy":
        backend, encoder = _toy_world(config)
        return encoder
    if kind == "clip":
        from .embedding import load_clip_encoder

        enc = config.get("encoder", {})
        return load_clip_encoder(
            model_id=enc.get("model_id", "openai/clip-vit-large-patch14"),
            device=enc.get("device", "cpu"),
            pooling=enc.get("pooling", "eos"),
        )
    raise CliError(f"unknown encoder {kind!r} (choose hash, toy, or clip)")


def _toy_world(config: dict):
    backend_cfg = config.get("backend", {})
    return toy.pretrained_toy_world(
        seed=backend_cfg.get("seed", 0),
        n_components=backend_cfg.get("n_components", toy.DEFAULT_COMPONENTS),
        n_aliases=backend_cfg.get("n_aliases", toy.DEFAULT_ALIASES),
        timesteps=backend_cfg.get("timesteps", toy.DEFAULT_TIMESTEPS),
        pretrain_steps=backend_cfg.get("pretrain_steps", 2500),
    )


def _build_backend(kind: str, config: dict):
    if kind == "toy":
        backend, encoder = _toy_world(config)
        spec = dict(backend.spec())
        spec["pretrain_steps"] = config.get("backend", {}).get("pretrain_steps", 2500)
        return backend, encoder, spec
    raise CliError(
        f"unknown backend {kind!r}; this build ships the toy backend only — "
        "larger diffusion backends plug in through the same contract"
    )


# --- generate ------------------------------------------------------------------


def _split_seed(base_seed: int, target: str, sense_index: int) -> int:
    digest = hashlib.sha256(f"{base_seed}:{target}:{sense_index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def cmd_generate(args) -> int:
    config = load_config_file(args.config)
    if not os.path.exists(args.targets):
        raise CliError(f"targets file not found: {args.targets}")
    with open(args.targets, "r", encoding="utf-8") as handle:
        targets = [line.strip() for line in handle if line.strip()]
    if not targets:
        raise CliError("targets file is empty")
    client = build_chat_client(config)

    records = []
    failures = []
    for target in targets:
        try:
            session = coref_gen.open_session(target, args.category, client)
            proposals = session.proposals[-1]
            for sense_index, proposal in enumerate(proposals):
                violations = coref_gen.validate_pools(
                    proposal.coref_pool, proposal.retain_pool, target
                )
                seed = _split_seed(args.seed, target, sense_index)
                record_kwargs = dict(
                    target=target,
                    category=args.category,
                    state="draft",
                    revision=0,
                    disambiguation=proposal.sense if len(proposals) > 1 else None,
                )
                if (
                    len(proposal.coref_pool) == coref_gen.POOL_SIZE
                    and len(proposal.retain_pool) == coref_gen.POOL_SIZE
                ):
                    coref_train, coref_test = coref_gen.split_train_test(proposal.coref_pool, seed)
                    retain_train, retain_test = coref_gen.split_train_test(
                        proposal.retain_pool, seed + 1
                    )
                    record_kwargs.update(
                        coref_train=coref_train,
                        coref_test=coref_test,
                        retain_train=retain_train,
                        retain_test=retain_test,
                    )
                else:
                    # pool shape is off: keep the raw pools for curation
                    record_kwargs.update(
                        coref_train=proposal.coref_pool, retain_train=proposal.retain_pool
                    )
                from .dataset import ConceptRecord

                record = ConceptRecord(**record_kwargs)
                records.append(record)
                for violation in proposal.violations + violations:
                    print(
                        f"[{target}] {violation.severity}: {violation.code} at {violation.path}",
                        file=sys.stderr,
                    )
        except (coref_gen.LlmClientError, coref_gen.ResponseParseError, ValueError) as exc:
            failures.append({"target": target, "error": str(exc)})
            print(f"[{target}] FAILED: {exc}", file=sys.stderr)

    dataset = CorefConceptDataset(concepts=records)
    save_dataset(dataset, args.out)
    manifest = start_manifest(
        "generate",
        {"targets": targets, "category": args.category, "seed": args.seed},
        dataset_digest(dataset),
    )
    manifest.artifacts["dataset"] = args.out
    if failures:
        failures_path = args.out + ".failures.json"
        with open(failures_path, "w", encoding="utf-8") as handle:
            json.dump(failures, handle, indent=2)
        manifest.artifacts["failures"] = failures_path
    write_manifest(manifest, args.out + ".manifest.json")
    print(f"wrote {len(records)} record(s) to {args.out}; {len(failures)} failure(s)")
    return EXIT_PARTIAL if failures else EXIT_OK


# --- curate-serve -----------------------------------------------------------------


def cmd_curate_serve(args) -> int:
    config = load_config_file(args.config)
    dataset = _load_dataset_or_fail(args.dataset)
    store = curation.CurationStore(dataset, persist_path=args.dataset)
    client = None
    if config.get("llm"):
        client = build_chat_client(config)
    encoder = None
    if args.encoder:
        encoder = build_encoder(args.encoder, config)
    app = curation.build_app(store, client=client, ui_origin=args.ui_origin, encoder=encoder)

    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


# --- analyze-embeddings --------------------------------------------------------------


def cmd_analyze_embeddings(args) -> int:
    from .embedding import EmbeddingCache, distance_report

    config = load_config_file(args.config)
    dataset = _load_dataset_or_fail(args.dataset)
    record = _find_record(dataset, args.target)
    encoder = build_encoder(args.encoder, config)

    if args.cache:
        cache = EmbeddingCache.load(args.cache)

        class _CachedEncoder:
            encoder_id = encoder.encoder_id
            pooling = getattr(encoder, "pooling", "")

            def encode_pooled(self, text):
                return cache.get_or_encode(encoder, text)

            def encode_sequence(self, text):
                return encoder.encode_sequence(text)

        report = distance_report(record.target, record, _CachedEncoder())
        cache.save()
    else:
        report = distance_report(record.target, record, encoder)

    csv_text = report.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(csv_text)
        manifest = start_manifest(
            "analyze-embeddings",
            {"target": args.target, "encoder": args.encoder},
            dataset_digest(dataset),
        )
        manifest.artifacts["report_csv"] = args.out
        write_manifest(manifest, args.out + ".manifest.json")
        print(f"wrote distance report to {args.out}")
    else:
        print(csv_text, end="")
    return EXIT_OK


# --- train ------------------------------------------------------------------------


_TRAIN_FLAG_FIELDS = {
    "eta": "eta",
    "iterations": "iterations",
    "learning_rate": "learning_rate",
    "m_corefs": "M",
    "n_retains": "N",
    "variant": "variant",
    "certainty_mode": "certainty_mode",
    "noise_sigma": "noise_sigma",
    "noise_side": "noise_side",
    "param_scope": "param_scope",
    "sphere_radius": "sphere_radius",
    "optimizer": "optimizer",
    "seed": "seed",
}


def assemble_erasure_config(args, config_file: dict) -> trainer.ErasureConfig:
    values = trainer.ErasureConfig().to_dict()
    values.update(config_file.get("erasure", {}))
    for flag, field_name in _TRAIN_FLAG_FIELDS.items():
        flag_value = getattr(args, flag, None)
        if flag_value is not None:
            values[field_name] = flag_value
    config = trainer.ErasureConfig.from_dict(values)
    try:
        config.validate()
    except trainer.ConfigError as exc:
        raise CliError(f"invalid erasure config: {exc}")
    return config


def cmd_train(args) -> int:
    config_file = load_config_file(args.config)
    erasure = assemble_erasure_config(args, config_file)
    dataset = _load_dataset_or_fail(args.dataset)
    record = _find_record(dataset, args.target)
    if record.state != "approved":
        raise CliError(f"record {args.target!r} is not approved; curate it first")
    errors = [v for v in validate_record(record) if v.severity == "error"]
    if errors:
        raise CliError(f"record {args.target!r} fails validation: {errors[0].code} at {errors[0].path}")

    backend, encoder, backend_spec = _build_backend(args.backend, config_file)
    prompts = trainer.ErasurePromptSet.from_record(record)

    os.makedirs(args.out, exist_ok=True)
    manifest = start_manifest("train", erasure.to_dict(), dataset_digest(dataset))

    try:
        checkpoint, log = trainer.run_training(prompts, erasure, backend, encoder)
    except trainer.NonFiniteLossError as exc:
        raise CliError(f"training aborted: {exc}")

    checkpoint_path = os.path.join(args.out, "checkpoint.pt")
    log_path = os.path.join(args.out, "training_log.jsonl")
    trainer.save_checkpoint(
        checkpoint_path,
        checkpoint,
        backend,
        {
            "config": erasure.to_dict(),
            "dataset_digest": dataset_digest(dataset),
            "target": record.key(),
            "final_loss": log.final_loss,
            "step_count": len(log.steps),
            "rng_digest": log.rng_digest,
            "checkpoint_digest": trainer.checkpoint_digest(checkpoint),
            "backend": backend_spec,
        },
    )
    log.to_jsonl(log_path)

    manifest.artifacts["checkpoint"] = checkpoint_path
    manifest.artifacts["training_log"] = log_path
    manifest.extra["checkpoint_digest"] = trainer.checkpoint_digest(checkpoint)
    manifest.extra["rng_digest"] = log.rng_digest
    manifest.extra["final_loss"] = log.final_loss
    write_manifest(manifest, os.path.join(args.out, "manifest.json"))
    print(f"trained {erasure.iterations} step(s); checkpoint at {checkpoint_path}")
    return EXIT_OK


# --- evaluate -----------------------------------------------------------------------


def build_judge(kind: str, backend, args):
    if kind == "toy":
        return toy.ToyComponentJudge(backend)
    if kind == "fixtures":
        if not args.judge_fixtures:
            raise CliError("--judge fixtures requires --judge-fixtures FILE")
        return evaluator.FixtureJudge.from_file(args.judge_fixtures)
    raise CliError(f"unknown judge {kind!r} (choose toy or fixtures)")


def cmd_evaluate(args) -> int:
    config_file = load_config_file(args.config)
    if not os.path.exists(args.checkpoint):
        raise CliError(f"checkpoint not found: {args.checkpoint}")
    try:
        sidecar = trainer.load_checkpoint_manifest(args.checkpoint)
    except FileNotFoundError:
        raise CliError(f"checkpoint manifest not found beside {args.checkpoint}")

    backend, encoder = toy.backend_from_spec(sidecar.get("backend", {}))
    params = backend.load_checkpoint(args.checkpoint)
    dataset = _load_dataset_or_fail(args.dataset)
    record = _find_record(dataset, args.target)

    generator = toy.ToyPromptSampler(backend, params)
    judge = build_judge(args.judge, backend, args)
    groups = evaluator.EvalGroups.from_record(record)
    seeds = list(range(args.n_images))
    report, records = evaluator.evaluate_model(
        generator,
        groups,
        judge,
        n_images=args.n_images,
        seeds=seeds,
        workers=args.workers,
    )

    if args.json and not args.out:
        print(json.dumps(report.to_dict(), indent=2))
        return EXIT_OK
    if not args.out:
        raise CliError("evaluate needs --out DIR (or --json for stdout only)")

    os.makedirs(args.out, exist_ok=True)
    report_json = os.path.join(args.out, "report.json")
    report_md = os.path.join(args.out, "report.md")
    verdicts_path = os.path.join(args.out, "verdicts.jsonl")
    with open(report_json, "w", encoding="utf-8") as handle:
        json.dump(report.to_dict(), handle, indent=2)
    markdown, _ = evaluator.compare_reports([report], names=[record.key()])
    with open(report_md, "w", encoding="utf-8") as handle:
        handle.write(markdown)
    evaluator.write_verdict_log(records, verdicts_path)

    manifest = start_manifest(
        "evaluate",
        {"checkpoint": args.checkpoint, "judge": args.judge, "n_images": args.n_images},
        dataset_digest(dataset),
    )
    manifest.artifacts.update(
        {"report_json": report_json, "report_md": report_md, "verdicts": verdicts_path}
    )
    write_manifest(manifest, os.path.join(args.out, "manifest.json"))
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(markdown)
    return EXIT_OK


# --- ablate --------------------------------------------------------------------------


def _sweep_cells(sweep: str, base_seed: int):
    if sweep == "mn_grid":
        return [
            (f"M{m}-N{n}", {"M": m, "N": n})
            for m in MN_GRID
            for n in MN_GRID
        ]
    if sweep == "certainty":
        return [(name, dict(overrides)) for name, overrides in CERTAINTY_SWEEP]
    raise CliError(f"unknown sweep {sweep!r} (choose mn_grid or certainty)")


def _cell_commands(args, name: str, overrides: dict, cell_dir: str) -> tuple[list[str], list[str]]:
    train_cmd = [
        sys.executable,
        "-m",
        "crce",
        "train",
        "--dataset",
        args.dataset,
        "--target",
        args.target,
        "--out",
        os.path.join(cell_dir, "train"),
        "--backend",
        "toy",
        "--seed",
        str(args.seed),
        "--iterations",
        str(args.iterations),
    ]
    if args.config:
        train_cmd += ["--config", args.config]
    flag_names = {
        "M": "--m-corefs",
        "N": "--n-retains",
        "variant": "--variant",
        "certainty_mode": "--certainty-mode",
        "noise_sigma": "--noise-sigma",
        "noise_side": "--noise-side",
    }
    for key, value in overrides.items():
        train_cmd += [flag_names[key], str(value)]
    eval_cmd = [
        sys.executable,
        "-m",
        "crce",
        "evaluate",
        "--checkpoint",
        os.path.join(cell_dir, "train", "checkpoint.pt"),
        "--dataset",
        args.dataset,
        "--target",
        args.target,
        "--out",
        os.path.join(cell_dir, "eval"),
        "--judge",
        "toy",
        "--n-images",
        str(args.n_images),
    ]
    if args.config:
        eval_cmd += ["--config", args.config]
    return train_cmd, eval_cmd


def _run_cell(args, name: str, overrides: dict, out_dir: str):
    cell_dir = os.path.join(out_dir, "cells", name)
    os.makedirs(cell_dir, exist_ok=True)
    train_cmd, eval_cmd = _cell_commands(args, name, overrides, cell_dir)
    log_path = os.path.join(cell_dir, "cell.log")
    with open(log_path, "w", encoding="utf-8") as log:
        for cmd in (train_cmd, eval_cmd):
            proc = subprocess.run(cmd, stdout=log, stderr=subprocess.STDOUT)
            if proc.returncode != 0:
                return name, None, f"command failed ({proc.returncode}): {' '.join(cmd)}"
    report_path = os.path.join(cell_dir, "eval", "report.json")
    try:
        with open(report_path, "r", encoding="utf-8") as handle:
            report = evaluator.EvalReport.from_dict(json.load(handle))
    except (OSError, json.JSONDecodeError) as exc:
        return name, None, f"missing cell report: {exc}"
    return name, report, None


def _render_mn_grid(results: dict[str, evaluator.EvalReport | None]) -> str:
    lines = []
    for key, header, _ in evaluator.METRIC_COLUMNS:
        lines.append(f"### {header}\n")
        lines.append("| M \\ N | " + " | ".join(str(n) for n in MN_GRID) + " |")
        lines.append("|" + "---|" * (len(MN_GRID) + 1))
        for m in MN_GRID:
            cells = []
            for n in MN_GRID:
                report = results.get(f"M{m}-N{n}")
                cells.append(f"{100.0 * getattr(report, key):.2f}" if report else "failed")
            lines.append(f"| {m} | " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    if not args.sweep:
        raise CliError("--sweep is required (mn_grid or certainty)")
    cells = _sweep_cells(args.sweep, args.seed)
    dataset = _load_dataset_or_fail(args.dataset)
    _find_record(dataset, args.target)
    os.makedirs(args.out, exist_ok=True)

    results: dict[str, evaluator.EvalReport | None] = {}
    errors: dict[str, str] = {}
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        futures = [
            pool.submit(_run_cell, args, name, overrides, args.out)
            for name, overrides in cells
        ]
        for future in futures:
            name, report, error = future.result()
            results[name] = report
            if error:
                errors[name] = error
                print(f"[{name}] {error}", file=sys.stderr)

    if args.sweep == "mn_grid":
        table_md = _render_mn_grid(results)
        csv_lines = ["cell,M,N,acc_u,acc_c_train,acc_c_test,acc_r_train,acc_r_test"]
        for name, _ in cells:
            report = results.get(name)
            m, n = name[1:].split("-N")
            if report:
                csv_lines.append(
                    f"{name},{m},{n},"
                    + ",".join(
                        f"{100.0 * getattr(report, key):.2f}"
                        for key, _, _ in evaluator.METRIC_COLUMNS
                    )
                )
            else:
                csv_lines.append(f"{name},{m},{n},failed,failed,failed,failed,failed")
        table_csv = "\n".join(csv_lines) + "\n"
    else:
        ok_names = [name for name, _ in cells if results.get(name)]
        reports = [results[name] for name in ok_names]
        if reports:
            table_md, table_csv = evaluator.compare_reports(reports, names=ok_names)
        else:
            table_md, table_csv = "no completed cells\n", "method\n"
        for name in (n for n, _ in cells if n not in ok_names):
            table_md += f"\n(cell {name} failed)\n"

    md_path = os.path.join(args.out, "ablation.md")
    csv_path = os.path.join(args.out, "ablation.csv")
    with open(md_path, "w", encoding="utf-8") as handle:
        handle.write(table_md)
    with open(csv_path, "w", encoding="utf-8") as handle:
        handle.write(table_csv)

    manifest = start_manifest(
        "ablate",
        {"sweep": args.sweep, "seed": args.seed, "iterations": args.iterations, "n_images": args.n_images},
        dataset_digest(dataset),
    )
    manifest.artifacts.update({"table_md": md_path, "table_csv": csv_path})
    manifest.extra["failed_cells"] = sorted(errors)
    write_manifest(manifest, os.path.join(args.out, "manifest.json"))
    print(f"sweep complete: {len(cells) - len(errors)}/{len(cells)} cells ok; tables in {args.out}")
    return EXIT_PARTIAL if errors else EXIT_OK


# --- report ---------------------------------------------------------------------------


def cmd_report(args) -> int:
    if not args.inputs:
        raise CliError("report needs at least one report.json input")
    reports = []
    names = []
    for path in args.inputs:
        if not os.path.exists(path):
            raise CliError(f"report file not found: {path}")
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
        reports.append(evaluator.EvalReport.from_dict(payload))
        names.append(payload.get("target", os.path.basename(path)))
    if args.names:
        if len(args.names) != len(reports):
            raise CliError("--names must match the number of inputs")
        names = args.names
    markdown, csv_text = evaluator.compare_reports(reports, names=names)
    if args.json:
        print(json.dumps([r.to_dict() for r in reports], indent=2))
    elif args.out:
        os.makedirs(args.out, exist_ok=True)
        md_path = os.path.join(args.out, "comparison.md")
        csv_path = os.path.join(args.out, "comparison.csv")
        with open(md_path, "w", encoding="utf-8") as handle:
            handle.write(markdown)
        with open(csv_path, "w", encoding="utf-8") as handle:
            handle.write(csv_text)
        manifest = start_manifest("report", {"inputs": args.inputs})
        manifest.artifacts.update({"comparison_md": md_path, "comparison_csv": csv_path})
        write_manifest(manifest, os.path.join(args.out, "manifest.json"))
        print(f"wrote comparison to {args.out}")
    else:
        print(markdown)
    return EXIT_OK


# --- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crce",
        description="Coreference-retention concept erasure toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("generate", help="generate draft coref/retain records with an LLM")
    common(p)
    p.add_argument("--targets", required=True, help="file with one target concept per line")
    p.add_argument("--category", required=True, choices=["object", "ip", "celebrity"])
    p.add_argument("--out", required=True, help="output dataset JSON path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("curate-serve", help="serve the curation API for the browser UI")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--ui-origin", default="http://localhost:5173")
    p.add_argument("--encoder", default=None, choices=["hash", "toy", "clip"],
                   help="optional encoder for distance context")
    p.set_defaults(func=cmd_curate_serve)

    p = sub.add_parser("analyze-embeddings", help="cosine/Euclidean distance report")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--encoder", default="hash", choices=["hash", "toy", "clip"])
    p.add_argument("--out", default=None, help="CSV output path (default: stdout)")
    p.add_argument("--cache", default=None, help="embedding cache JSON path")
    p.set_defaults(func=cmd_analyze_embeddings)

    p = sub.add_parser("train", help="run erasure fine-tuning for one target")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True, help="output run directory")
    p.add_argument("--backend", default="toy")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--m-corefs", type=int, default=None, dest="m_corefs",
                   help="corefs sampled per step (M)")
    p.add_argument("--n-retains", type=int, default=None, dest="n_retains",
                   help="retains sampled per step (N)")
    p.add_argument("--variant", default=None, choices=list(trainer.VARIANTS))
    p.add_argument("--certainty-mode", default=None, choices=list(trainer.CERTAINTY_MODES))
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("--noise-side", default=None, choices=list(trainer.NOISE_SIDES))
    p.add_argument("--param-scope", default=None, choices=list(trainer.PARAM_SCOPES))
    p.add_argument("--sphere-radius", type=float, default=None,
                   help="ball radius for the sphere variant (0.5 is a reasonable start)")
    p.add_argument("--optimizer", default=None, choices=list(trainer.OPTIMIZERS))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="five-metric judge evaluation of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", default=None, help="output directory (omit with --json for stdout)")
    p.add_argument("--judge", default="toy", choices=["toy", "fixtures"])
    p.add_argument("--judge-fixtures", default=None)
    p.add_argument("--n-images", type=int, default=10, dest="n_images")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="M/N grid or certainty-perturbation sweep")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--sweep", default=None, help="mn_grid or certainty")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--n-images", type=int, default=10, dest="n_images")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render a comparison table from report JSONs")
    common(p)
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--names", nargs="*", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
