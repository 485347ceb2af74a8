"""Command-line surface: prepare splits, train variants, evaluate, compare.

Every command reads one declarative YAML config (nested sections) whose
values can be overridden by flags; ``--show-config`` prints the effective
configuration and exits.  All outputs are deterministic under a fixed
config and seed, and reports embed a fingerprint of the split manifest so
results from different splits cannot be compared by accident.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import click
import yaml

from .data import (
    leave_out_split,
    parse_conll,
    read_split_manifest,
    write_split_manifest,
)
from .estimator import variant_to_config
from .evaluation import (
    build_report,
    read_predictions,
    read_report,
    render_report_text,
    write_predictions,
    write_report,
    SentencePrediction,
)
from .training import (
    TrainingConfig,
    load_checkpoint,
    mc_dropout_predict,
    predict_batch,
    save_checkpoint,
    train,
)

CLI_VARIANTS = ("token_pn", "slpn", "slpn-no-softplus", "dropout-baseline")

_VARIANT_ALIASES = {
    "token_pn": "token_pn",
    "slpn": "slpn",
    "slpn-no-softplus": "slpn_no_softplus",
    "dropout-baseline": "dropout",
}

DEFAULT_CONFIG: dict = {
    "corpus": None,
    "workdir": ".",
    "split": {"m": 1, "seed": 0},
    "training": {
        "variant": "slpn",
        "lambda_reg": 1e-5,
        "learning_rate": 1e-3,
        "epochs": 15,
        "batch_size": 32,
        "seed": 0,
        "dropout_rate": 0.0,
        "mc_passes": 10,
        "embed_dim": 24,
        "rnn_hidden": 24,
        "proj_hidden": 32,
        "latent_dim": 8,
        "flow_depth": 6,
        "proj_width": None,
        "gamma": None,
    },
    "evaluation": {"aggregation": "mean"},
}


def _deep_merge(base: dict, extra: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _load_config(config_path) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if config_path:
        loaded = yaml.safe_load(Path(config_path).read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise click.ClickException(f"config {config_path} must be a mapping")
        config = _deep_merge(config, loaded)
    return config


def _show_config(config: dict) -> None:
    click.echo(yaml.safe_dump(config, default_flow_style=False, sort_keys=True), nl=False)


def _require(config: dict, key: str):
    value = config.get(key)
    if value is None:
        raise click.ClickException(f"missing required setting {key!r} (flag or config)")
    return value


def _manifest_fingerprint(manifest_path: Path) -> str:
    return hashlib.sha256(manifest_path.read_bytes()).hexdigest()


def _read_corpus(path) -> list:
    try:
        return parse_conll(path)
    except FileNotFoundError:
        raise click.ClickException(f"corpus file not found: {path}") from None
    except ValueError as err:
        raise click.ClickException(f"{path}: {err}") from None


def _workdir(config: dict) -> Path:
    workdir = Path(config["workdir"])
    workdir.mkdir(parents=True, exist_ok=True)
    return workdir


def _training_config(config: dict, variant: str) -> TrainingConfig:
    section = dict(config["training"])
    section.pop("variant", None)
    model_variant, softplus_on = variant_to_config(_VARIANT_ALIASES[variant])
    try:
        return TrainingConfig(model_variant=model_variant, softplus_on=softplus_on, **section)
    except (TypeError, ValueError) as err:
        raise click.ClickException(f"bad training config: {err}") from None


@click.group()
def main():
    """Evidential sequence labeling: prepare, train, eval, report-compare."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--corpus", type=click.Path(), default=None)
@click.option("--workdir", type=click.Path(), default=None)
@click.option("--m", "m_labels", type=int, default=None, help="How many rare labels to hold out.")
@click.option("--seed", type=int, default=None, help="Split shuffle seed.")
@click.option("--show-config", is_flag=True, default=False)
def prepare(config_path, corpus, workdir, m_labels, seed, show_config):
    """Build the leave-out split manifest and its summary."""
    config = _load_config(config_path)
    if corpus:
        config["corpus"] = corpus
    if workdir:
        config["workdir"] = workdir
    if m_labels is not None:
        config["split"]["m"] = m_labels
    if seed is not None:
        config["split"]["seed"] = seed
    if show_config:
        _show_config(config)
        return
    sentences = _read_corpus(_require(config, "corpus"))
    try:
        split = leave_out_split(sentences, config["split"]["m"], config["split"]["seed"])
    except ValueError as err:
        raise click.ClickException(str(err)) from None
    out = _workdir(config)
    manifest_path = out / "manifest.txt"
    write_split_manifest(split, manifest_path)
    fingerprint = _manifest_fingerprint(manifest_path)
    from .data import entity_label_counts

    summary = {
        "format": "slpn-split-summary",
        "version": 1,
        "m": config["split"]["m"],
        "seed": config["split"]["seed"],
        "in_labels": split.in_labels,
        "out_labels": split.out_labels,
        "label_counts": dict(sorted(entity_label_counts(sentences).items())),
        "sizes": {
            "train": len(split.train),
            "val": len(split.val),
            "test_in": len(split.test_in),
            "test_out": len(split.test_out),
            "d_in": len(split.train) + len(split.val) + len(split.test_in),
            "d_out": len(split.test_out),
        },
        "fingerprint": fingerprint,
    }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(
        f"split ready: held-out labels {split.out_labels}, "
        f"train/val/test_in/test_out = {len(split.train)}/{len(split.val)}/"
        f"{len(split.test_in)}/{len(split.test_out)}"
    )


def _load_split(workdir: Path):
    manifest_path = workdir / "manifest.txt"
    summary_path = workdir / "summary.json"
    if not manifest_path.exists() or not summary_path.exists():
        raise click.ClickException(
            f"no split manifest in {workdir}; run 'prepare' first"
        )
    sections = read_split_manifest(manifest_path)
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    return sections, summary, _manifest_fingerprint(manifest_path)


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--corpus", type=click.Path(), default=None)
@click.option("--workdir", type=click.Path(), default=None)
@click.option("--variant", type=click.Choice(CLI_VARIANTS), default=None)
@click.option("--seed", type=int, default=None, help="Training seed.")
@click.option("--show-config", is_flag=True, default=False)
def train_command(config_path, corpus, workdir, variant, seed, show_config):
    """Train the selected variant on the prepared split."""
    config = _load_config(config_path)
    if corpus:
        config["corpus"] = corpus
    if workdir:
        config["workdir"] = workdir
    if variant:
        config["training"]["variant"] = variant
    if seed is not None:
        config["training"]["seed"] = seed
    if show_config:
        _show_config(config)
        return
    variant_name = config["training"]["variant"]
    if variant_name not in CLI_VARIANTS:
        raise click.ClickException(
            f"variant must be one of {CLI_VARIANTS}, got {variant_name!r}"
        )
    sentences = _read_corpus(_require(config, "corpus"))
    out = _workdir(config)
    sections, _summary, fingerprint = _load_split(out)
    train_sentences = [sentences[i] for i in sections["train"]]
    val_sentences = [sentences[i] for i in sections["val"]]
    training_config = _training_config(config, variant_name)
    try:
        state = train(training_config, train_sentences, val_sentences)
    except (ValueError, RuntimeError) as err:
        raise click.ClickException(f"training failed: {err}") from None
    state.fingerprint = fingerprint
    checkpoint_path = out / f"checkpoint_{variant_name}.pt"
    save_checkpoint(state, checkpoint_path)
    curve_path = out / f"loss_{variant_name}.csv"
    rows = ["epoch,loss,val_accuracy"]
    for epoch, (loss, acc) in enumerate(zip(state.loss_history, state.val_history)):
        rows.append(f"{epoch},{loss!r},{acc!r}")
    curve_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    click.echo(
        f"trained {variant_name}: best epoch {state.best_epoch}, "
        f"val accuracy {state.val_accuracy:.4f}, checkpoint {checkpoint_path}"
    )


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--corpus", type=click.Path(), default=None)
@click.option("--workdir", type=click.Path(), default=None)
@click.option("--variant", type=click.Choice(CLI_VARIANTS), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), default=None)
@click.option("--aggregation", type=click.Choice(("mean", "max")), default=None)
@click.option("--show-config", is_flag=True, default=False)
def eval_command(config_path, corpus, workdir, variant, checkpoint_path, aggregation, show_config):
    """Dump test predictions and build the evaluation report."""
    config = _load_config(config_path)
    if corpus:
        config["corpus"] = corpus
    if workdir:
        config["workdir"] = workdir
    if variant:
        config["training"]["variant"] = variant
    if aggregation:
        config["evaluation"]["aggregation"] = aggregation
    if show_config:
        _show_config(config)
        return
    variant_name = config["training"]["variant"]
    sentences = _read_corpus(_require(config, "corpus"))
    out = _workdir(config)
    sections, summary, fingerprint = _load_split(out)
    path = Path(checkpoint_path) if checkpoint_path else out / f"checkpoint_{variant_name}.pt"
    if not path.exists():
        raise click.ClickException(f"checkpoint not found: {path}")
    try:
        state = load_checkpoint(path)
    except ValueError as err:
        raise click.ClickException(str(err)) from None
    if state.fingerprint is not None and state.fingerprint != fingerprint:
        raise click.ClickException(
            "checkpoint was trained on a different split "
            f"(fingerprint {state.fingerprint[:12]}... != {fingerprint[:12]}...)"
        )

    records = []
    test_items = [(i, "test_in") for i in sections["test_in"]] + [
        (i, "test_out") for i in sections["test_out"]
    ]
    if state.config.model_variant == "dropout":
        for idx, section in test_items:
            sentence = sentences[idx]
            mc = mc_dropout_predict(state, sentence.tokens)
            records.append(
                SentencePrediction(
                    tokens=list(sentence.tokens),
                    gold_tags=list(sentence.tags),
                    pred_tags=mc.tags,
                    measures=mc.measure_lists(),
                    section=section,
                )
            )
    else:
        predictions = predict_batch(state, [sentences[i].tokens for i, _ in test_items])
        for (idx, section), prediction in zip(test_items, predictions):
            records.append(
                SentencePrediction(
                    tokens=list(sentences[idx].tokens),
                    gold_tags=list(sentences[idx].tags),
                    pred_tags=prediction.tags,
                    measures=prediction.measure_lists(),
                    section=section,
                )
            )

    dump_path = out / f"predictions_{variant_name}.jsonl"
    write_predictions(dump_path, records, fingerprint=fingerprint, variant=variant_name)
    loaded_records, header = read_predictions(dump_path)
    try:
        report = build_report(
            loaded_records,
            out_labels=summary["out_labels"],
            aggregation=config["evaluation"]["aggregation"],
            fingerprint=header["fingerprint"],
            variant=variant_name,
        )
    except ValueError as err:
        raise click.ClickException(f"evaluation failed: {err}") from None
    write_report(
        report,
        out / f"report_{variant_name}.json",
        out / f"report_{variant_name}.txt",
    )
    click.echo(render_report_text(report), nl=False)


@main.command("report-compare")
@click.argument("reports", nargs=-1, type=click.Path(exists=True))
def report_compare(reports):
    """Side-by-side comparison of evaluation reports from one split."""
    if len(reports) < 2:
        raise click.UsageError("need at least two report files to compare")
    try:
        loaded = [read_report(p) for p in reports]
    except ValueError as err:
        raise click.ClickException(str(err)) from None
    fingerprints = {r.get("fingerprint") for r in loaded}
    if len(fingerprints) > 1:
        raise click.ClickException(
            "reports come from different split manifests; refusing to compare"
        )
    measures = loaded[0]["measures"]
    for report in loaded[1:]:
        if report["measures"] != measures:
            measures = [m for m in measures if m in report["measures"]]

    def row_values(report: dict) -> list[float]:
        values = [report["weighted"]["auroc"][m] for m in measures]
        values += [report["weighted"]["aupr"][m] for m in measures]
        values.append(report["f1"])
        return values

    headers = [f"wAUROC:{m}" for m in measures] + [f"wAUPR:{m}" for m in measures] + ["F1"]
    table: list[tuple[str, list[float]]] = []
    by_variant: dict[str, list[list[float]]] = {}
    for path, report in zip(reports, loaded):
        name = report.get("variant") or Path(path).stem
        values = row_values(report)
        table.append((f"{name} ({Path(path).name})", values))
        by_variant.setdefault(name, []).append(values)
    for name, rows in sorted(by_variant.items()):
        if len(rows) > 1:
            mean = [sum(col) / len(col) for col in zip(*rows)]
            table.append((f"{name} (mean of {len(rows)})", mean))

    best = [max(vals) for vals in zip(*(values for _, values in table))]
    width = max(len(label) for label, _ in table)
    lines = [" " * width + "".join(f"{h:>16}" for h in headers)]
    for label, values in table:
        cells = "".join(
            f"{value:>15.2f}{'*' if value == best[i] else ' '}"
            for i, value in enumerate(values)
        )
        lines.append(f"{label:<{width}}{cells}")
    if len(loaded) == 2:
        first, second = row_values(loaded[0]), row_values(loaded[1])
        delta = [a - b for a, b in zip(first, second)]
        lines.append(
            f"{'delta (first - second)':<{width}}"
            + "".join(f"{value:>15.2f} " for value in delta)
        )
    click.echo("\n".join(lines))


if __name__ == "__main__":
    main()
