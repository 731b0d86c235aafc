"""Command-line entry point: ``clinnum <subcommand> ...``.

Results go to stdout (or ``--output``) as JSONL by default; ``--format``
switches to a text table or CSV.  Failures print one JSON object to stderr
and exit with 2 (configuration), 3 (input data) or 4 (runtime).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Optional

from . import config as config_mod
from .blinding import PLACEHOLDER, blind_text
from .corpus import AnnotatedNote, to_jsonl, validate_corpus
from .criticality import PatientContext, RangePolicy, ThresholdTables
from .errors import ClinnumError, ConfigError, DivergedLoss, NumericalError
from .labels import DEFAULT_KEYWORDS, ClassLabel, load_keywords
from .metrics import f1_per_class, macro_f1, report_csv, report_json, report_rows
from .model import TokenClassifier
from .pipeline import assess_values, classify, gold_values, render_table, with_labels
from .synth import GenSpec, generate
from .tokenizer import tokenize
from .training import encode, evaluate, run_experiment, write_history_csv

log = logging.getLogger("clinnum")

EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 2, 3, 4


class DataError(ClinnumError):
    """Unreadable or malformed input file."""


# -- input helpers -----------------------------------------------------------


def _read_lines(path: str) -> list[str]:
    if path == "-":
        return sys.stdin.read().splitlines()
    p = Path(path)
    if not p.is_file():
        raise DataError(f"input file not found: {path}")
    return p.read_text(encoding="utf-8").splitlines()


def read_records(path: str) -> list[dict]:
    """JSONL records, or one ``{"text": line}`` record per line of plain text."""
    lines = [ln for ln in _read_lines(path) if ln.strip()]
    if lines and lines[0].lstrip().startswith("{"):
        out = []
        for n, ln in enumerate(lines, 1):
            try:
                rec = json.loads(ln)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{n}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or "text" not in rec:
                raise DataError(f"{path}:{n}: record has no 'text' field")
            out.append(rec)
        return out
    return [{"text": ln} for ln in lines]


def read_notes(path: str) -> list[AnnotatedNote]:
    try:
        return [AnnotatedNote.from_json(r) for r in read_records(path)]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ClinnumError):
            raise
        raise DataError(f"{path}: malformed note record ({exc})") from exc


def patient_context(note: AnnotatedNote, args) -> PatientContext:
    meta = note.meta or PatientContext()
    age, weight = meta.age_months, meta.weight_kg
    if args.age_months is not None:
        if age is not None and age != args.age_months:
            log.warning("--age-months %s overrides note age %s", args.age_months, age)
        age = args.age_months
    if args.weight_kg is not None:
        if weight is not None and weight != args.weight_kg:
            log.warning("--weight-kg %s overrides note weight %s", args.weight_kg, weight)
        weight = args.weight_kg
    return PatientContext(age, weight)


def load_model(path: str) -> TokenClassifier:
    if not Path(path).is_file():
        raise DataError(f"checkpoint not found: {path}")
    try:
        return TokenClassifier.load(path)
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, ClinnumError):
            raise
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc


# -- output helpers ----------------------------------------------------------


class Output:
    def __init__(self, path: Optional[str]):
        self.path = path
        self.buf = io.StringIO()

    def write(self, text: str) -> None:
        self.buf.write(text)

    def close(self) -> None:
        if self.path:
            Path(self.path).parent.mkdir(parents=True, exist_ok=True)
            Path(self.path).write_text(self.buf.getvalue(), encoding="utf-8")
        else:
            sys.stdout.write(self.buf.getvalue())


def emit_rows(out: Output, rows: list[dict], fmt: str, columns: list[str]) -> None:
    if fmt == "jsonl":
        for r in rows:
            out.write(json.dumps(r, ensure_ascii=False) + "\n")
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in r.items()})
        out.write(buf.getvalue())
    else:
        out.write(render_table(rows, columns))


# -- subcommands -------------------------------------------------------------


def gen_spec(cfg: dict) -> GenSpec:
    return GenSpec(**cfg["corpus"])


def cmd_gen_corpus(args, cfg, out: Output) -> None:
    notes = generate(gen_spec(cfg))
    report = validate_corpus(notes)
    log.info("generated %d notes, %d entities; class counts %s", report.notes, report.entities, report.class_counts)
    out.write(to_jsonl(notes))


def cmd_validate(args, cfg, out: Output) -> int:
    report = validate_corpus(read_notes(args.input))
    out.write(json.dumps(report.to_json(), ensure_ascii=False, indent=2) + "\n")
    return 0 if report.ok else EXIT_DATA


def cmd_tokenize(args, cfg, out: Output) -> None:
    rows = []
    records = read_records(args.input)
    for i, rec in enumerate(records):
        for j, t in enumerate(tokenize(rec["text"])):
            rows.append({"note_index": i, "index": j, "text": t.text, "start": t.span[0], "end": t.span[1], "kind": t.kind.value})
    if args.format == "jsonl":
        by_note: dict = {}
        for r in rows:
            by_note.setdefault(r["note_index"], []).append({"text": r["text"], "span": [r["start"], r["end"]], "kind": r["kind"]})
        for i in range(len(records)):
            out.write(json.dumps({"note_index": i, "tokens": by_note.get(i, [])}, ensure_ascii=False) + "\n")
    else:
        emit_rows(out, rows, args.format, ["note_index", "index", "text", "start", "end", "kind"])


def cmd_blind(args, cfg, out: Output) -> None:
    for rec in read_records(args.input):
        text, values = blind_text(rec["text"], args.placeholder)
        result = {"text": text, **{k: v for k, v in rec.items() if k not in ("text", "entities", "values")}}
        if not values and rec.get("values"):
            values = rec["values"]  # already blinded: keep the original record of values
        else:
            labels = {tuple(e[:2]): e[2] for e in rec.get("entities", [])}
            for v in values:
                if tuple(v["source_span"]) in labels:
                    v["label"] = labels[tuple(v["source_span"])]
        result["values"] = values
        if args.format == "jsonl":
            out.write(json.dumps(result, ensure_ascii=False) + "\n")
        else:
            out.write(text + "\n")


def cmd_predict(args, cfg, out: Output) -> None:
    model = load_model(args.model)
    rows = []
    for i, note in enumerate(read_notes(args.input)):
        _, values = classify(model, note.text)
        if args.format == "jsonl":
            rec = with_labels(note, values).to_json()
            out.write(json.dumps(rec, ensure_ascii=False) + "\n")
        for v in values:
            rows.append({"note_index": i, "value": v.lexeme.raw, "span": list(v.span), "label": v.label.name,
                         "unit": v.lexeme.unit_hint})
    if args.format != "jsonl":
        emit_rows(out, rows, args.format, ["note_index", "value", "label", "unit"])


def cmd_criticality(args, cfg, out: Output) -> None:
    tables = ThresholdTables.load(cfg["thresholds"])
    policy = RangePolicy(args.range_policy or cfg["range_policy"])
    model = load_model(args.model) if args.model else None
    rows = []
    for i, note in enumerate(read_notes(args.input)):
        tokens, values = classify(model, note.text) if model else gold_values(note)
        for a in assess_values(tokens, values, patient_context(note, args), tables, policy):
            rows.append({"note_index": i, **a.to_json()})
    emit_rows(out, rows, args.format, ["note_index", "value", "attribute", "unit", "status", "note"]
              if args.format != "jsonl" else [])


def cmd_eval(args, cfg, out: Output) -> None:
    model = load_model(args.model)
    data = encode(read_notes(args.input), model.vocab, model.config.blinded)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        per_class = f1_per_class(evaluate(model, data))
    row = {c.name: round(float(per_class[c]), 6) for c in ClassLabel}
    row["macro_f1"] = round(macro_f1(per_class), 6)
    emit_rows(out, [row], args.format, [*(c.name for c in ClassLabel), "macro_f1"])


def cmd_train(args, cfg, out: Output) -> None:
    notes = read_notes(args.corpus) if args.corpus else generate(gen_spec(cfg))
    t = cfg["train"]
    seeds = list(range(args.seeds)) if args.seeds is not None else list(t["seeds"])
    variants = args.variant or cfg["variants"]
    tc = replace(config_mod.train_config(cfg), seeds=seeds)
    keywords = load_keywords(cfg["keywords"]) if cfg["keywords"] else DEFAULT_KEYWORDS
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    records = []
    for variant in variants:
        for seed in seeds:
            log.info("training %s seed %d", variant, seed)
            res = run_experiment(notes, variant, seed, tc, cfg["model"], t["split_seed"], keywords)
            stem = f"{variant}-seed{seed}"
            res.train.model.save(outdir / f"{stem}.npz")
            write_history_csv(res.train.history, outdir / f"{stem}-history.csv")
            rec = {
                "variant": variant, "seed": seed,
                "test_f1": [round(float(x), 6) for x in res.test_f1],
                "test_macro_f1": round(res.test_macro_f1, 6),
                "best_epoch": res.train.best_epoch, "epochs": len(res.train.history),
                "checkpoint": f"{stem}.npz", "history": f"{stem}-history.csv",
            }
            records.append(rec)
            out.write(json.dumps(rec) + "\n")
    (outdir / "metrics.jsonl").write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    (outdir / "config.json").write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")


def _metrics_path(path: str) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / "metrics.jsonl"
    if not p.is_file():
        raise DataError(f"metrics file not found: {p}")
    return p


def cmd_report(args, cfg, out: Output) -> None:
    path = _metrics_path(args.runs)
    runs: dict[str, list] = {}
    histories: dict[str, list] = {}
    per_seed = []
    for n, ln in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not ln.strip():
            continue
        try:
            rec = json.loads(ln)
            runs.setdefault(rec["variant"], []).append(rec["test_f1"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path}:{n}: malformed metrics record ({exc})") from exc
        per_seed.append({"variant": rec["variant"], "seed": rec.get("seed"), "macro_f1": macro_f1(rec["test_f1"])})
        hist = path.parent / rec.get("history", "")
        if args.figures and rec.get("history") and hist.is_file():
            with open(hist, encoding="utf-8") as fh:
                histories[f"{rec['variant']} s{rec.get('seed')}"] = [
                    (int(r["epoch"]), float(r["train_loss"]), float(r["val_macro_f1"])) for r in csv.DictReader(fh)
                ]
    if not runs:
        raise DataError(f"{path}: no runs recorded")
    if args.format == "json":
        out.write(report_json(runs) + "\n")
    else:
        out.write(report_csv(report_rows(runs)))
    if args.per_seed:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["variant", "seed", "macro_f1"], lineterminator="\n")
        w.writeheader()
        for r in per_seed:
            w.writerow(r | {"macro_f1": f"{r['macro_f1']:.4f}"})
        Path(args.per_seed).write_text(buf.getvalue(), encoding="utf-8")
    if args.figures:
        from .plotting import f1_bars, training_curves

        fig_dir = Path(args.figures)
        f1_bars(runs, fig_dir / "f1_per_class.png")
        if histories:
            training_curves(histories, fig_dir / "training_curves.png")


def cmd_attn_dump(args, cfg, out: Output) -> None:
    from .attention import export_attention

    model = load_model(args.model)
    if args.text is None and args.input is None:
        raise ConfigError("attn-dump needs --text or an input file")
    text = args.text if args.text is not None else read_records(args.input)[0]["text"]
    layer = model.config.layers - 1 if args.layer is None else args.layer
    try:
        dump = export_attention(model, text, layer, args.head)
    except IndexError as exc:
        raise ConfigError(str(exc)) from exc
    out.write(dump.to_long_csv() if args.long else dump.to_csv())
    if args.png:
        from .plotting import attention_heatmap

        attention_heatmap(dump.matrix, dump.tokens, args.png, f"layer {layer}, head {args.head}")


# -- parser ------------------------------------------------------------------


def _global_options(p: argparse.ArgumentParser, prefix: str) -> None:
    p.add_argument("--config", dest=prefix + "config", default=None,
                   help=f"JSON run configuration (default: ${config_mod.ENV_VAR})")
    p.add_argument("--set", dest=prefix + "overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. train.learning_rate=1e-3 (repeatable)")
    p.add_argument("--print-config", dest=prefix + "print_config", action="store_true",
                   help="print the resolved configuration and exit")
    p.add_argument("-v", "--verbose", dest=prefix + "verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clinnum", description="Numeric value classification in French clinical notes.")
    _global_options(p, "")
    # the same options are accepted after the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, "sub_")
    sub = p.add_subparsers(dest="command")

    def add(name, func, help_, input_arg=True, formats=("jsonl", "table", "csv")):
        sp = sub.add_parser(name, help=help_, parents=[common])
        if input_arg:
            sp.add_argument("input", help="JSONL notes or plain text (one note per line); '-' for stdin")
        sp.add_argument("-o", "--output", help="write to this file instead of stdout")
        sp.add_argument("--format", choices=formats, default=formats[0])
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-corpus", cmd_gen_corpus, "generate a synthetic annotated corpus", input_arg=False, formats=("jsonl",))
    sp.add_argument("--notes", type=int, help="number of notes (corpus.note_count)")
    sp.add_argument("--seed", type=int, help="generator seed (corpus.seed)")

    add("validate", cmd_validate, "check corpus annotations against the tokenizer", formats=("json",))
    add("tokenize", cmd_tokenize, "tokenize notes")
    sp = add("blind", cmd_blind, "replace quantitative numbers by a placeholder word", formats=("jsonl", "text"))
    sp.add_argument("--placeholder", default=PLACEHOLDER)

    sp = add("train", cmd_train, "train one or more variants over seeds", input_arg=False, formats=("jsonl",))
    sp.add_argument("--corpus", help="training corpus JSONL (default: generate from the corpus config)")
    sp.add_argument("--seeds", type=int, help="train seeds 0..N-1 (default: train.seeds)")
    sp.add_argument("--variant", action="append", choices=sorted(config_mod.VARIANTS),
                    help="model variant (repeatable; default: config variants)")
    sp.add_argument("--out-dir", default="runs", help="directory for checkpoints, logs and metrics.jsonl")

    sp = add("predict", cmd_predict, "classify every numeric value in each note")
    sp.add_argument("--model", required=True, help="checkpoint file")

    sp = add("eval", cmd_eval, "per-class and macro F1 of a checkpoint on annotated notes", formats=("jsonl", "csv", "table"))
    sp.add_argument("--model", required=True)

    sp = add("criticality", cmd_criticality, "judge each value against its standard range", formats=("table", "jsonl", "csv"))
    sp.add_argument("--model", help="classify with this checkpoint instead of using the note's annotations")
    sp.add_argument("--age-months", type=float)
    sp.add_argument("--weight-kg", type=float)
    sp.add_argument("--range-policy", choices=[r.value for r in RangePolicy])

    sp = add("attn-dump", cmd_attn_dump, "export one head's attention matrix as CSV", input_arg=False, formats=("csv",))
    sp.add_argument("--model", required=True)
    sp.add_argument("--text", help="sentence to encode")
    sp.add_argument("--input", help="take the first note of this file instead of --text")
    sp.add_argument("--layer", type=int, help="layer index (default: last)")
    sp.add_argument("--head", type=int, default=0)
    sp.add_argument("--long", action="store_true", help="row,col,value lines instead of a square matrix")
    sp.add_argument("--png", help="also render a heatmap to this file")

    sp = add("report", cmd_report, "aggregate multi-seed test F1 into a mean ± std table", input_arg=False, formats=("csv", "json"))
    sp.add_argument("runs", help="metrics.jsonl written by train, or its directory")
    sp.add_argument("--figures", help="directory for F1 bar chart and training curves")
    sp.add_argument("--per-seed", help="also write per-seed macro F1 CSV to this file")
    return p


def _error(code: int, kind: str, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}, ensure_ascii=False) + "\n")
    return code


def main(argv: Optional[Iterable[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(None if argv is None else list(argv))
    for name in ("config", "print_config", "verbose"):
        setattr(args, name, getattr(args, "sub_" + name, None) or getattr(args, name))
    args.overrides = list(args.overrides) + list(getattr(args, "sub_overrides", []))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        overrides = list(args.overrides)
        if getattr(args, "notes", None) is not None:
            overrides.append(f"corpus.note_count={args.notes}")
        if getattr(args, "seed", None) is not None:
            overrides.append(f"corpus.seed={args.seed}")
        cfg = config_mod.resolve(args.config, overrides)
        if args.print_config:
            sys.stdout.write(json.dumps(cfg, indent=2) + "\n")
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            return _error(EXIT_CONFIG, "config", ConfigError("no subcommand given"))
        out = Output(args.output)
        code = args.func(args, cfg, out) or 0
        out.close()
        return code
    except ConfigError as exc:
        return _error(EXIT_CONFIG, "config", exc)
    except (DivergedLoss, NumericalError) as exc:
        return _error(EXIT_RUNTIME, "runtime", exc)
    except ClinnumError as exc:
        return _error(EXIT_DATA, "data", exc)
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        return _error(EXIT_RUNTIME, "runtime", exc)


if __name__ == "__main__":
    sys.exit(main())
