"""Command-line surface.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal
error. All errors go to stderr as one line of JSON ({"code", "message",
"detail"?}) so scripts can parse failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .corpus import SplitSpec, parse_conll, split_dataset, write_conll
from .errors import TaglabError
from .tagset import default_tagset, load_tagset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_text(path: str) -> str:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise TaglabError(f"{path}: not valid UTF-8: {e}")


def _write_text(path: str, text: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_tagset_arg(path: str | None):
    if path is None:
        return default_tagset()
    return load_tagset(_read_text(path))


def _read_input(args) -> str:
    if getattr(args, "input", None):
        return _read_text(args.input)
    return sys.stdin.read()


def _load_dataset(path: str, tagset, mode: str = "strict", name: str = ""):
    return parse_conll(_read_text(path), tagset, mode=mode,
                       name=name or os.path.basename(path))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    from .evaluation import (
        compute_confusion,
        compute_report,
        confusion_to_csv,
        emit_report,
    )
    from .trainer import (
        TrainingConfig,
        curve_to_csv,
        predict_dataset,
        save_checkpoint,
        train,
    )

    config = TrainingConfig.from_json(_read_text(args.config))
    tagset = _load_tagset_arg(args.tagset)
    train_ds = _load_dataset(args.train, tagset, name="train")
    dev_ds = _load_dataset(args.dev, tagset, name="dev")
    test_ds = _load_dataset(args.test, tagset, name="test")

    checkpoint, curve = train(train_ds, dev_ds, config, tagset)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(checkpoint, os.path.join(args.out, "checkpoint.json"))
    _write_text(os.path.join(args.out, "learning_curve.csv"), curve_to_csv(curve))

    model = checkpoint.build_model()
    predicted = predict_dataset(model, test_ds)
    confusion = compute_confusion(test_ds, predicted)
    report = compute_report(confusion)
    _write_text(os.path.join(args.out, "test_report.json"),
                emit_report(report, "json"))
    _write_text(os.path.join(args.out, "test_report.txt"),
                emit_report(report, "text"))
    _write_text(os.path.join(args.out, "test_confusion.csv"),
                confusion_to_csv(confusion))
    print(json.dumps({
        "best_dev_f1": checkpoint.best_dev_f1,
        "test_micro_f1": report.micro.f1,
        "epochs": len(curve),
        "out": args.out,
    }))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import (
        collapse_and_compare,
        compute_confusion,
        compute_report,
        confusion_to_csv,
        emit_report,
    )
    from .trainer import load_model, predict_dataset

    model = load_model(args.model)
    gold = _load_dataset(args.data, model.tagset, name="gold")
    predicted = predict_dataset(model, gold)
    confusion = compute_confusion(gold, predicted)
    report = compute_report(confusion)
    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, "report.json"), emit_report(report, "json"))
    _write_text(os.path.join(args.out, "report.txt"), emit_report(report, "text"))
    _write_text(os.path.join(args.out, "confusion.csv"), confusion_to_csv(confusion))
    summary = {"micro_f1": report.micro.f1, "out": args.out}
    if args.collapse:
        _, collapsed = collapse_and_compare(gold, predicted, model.tagset)
        _write_text(os.path.join(args.out, "report_collapsed.json"),
                    emit_report(collapsed, "json"))
        _write_text(os.path.join(args.out, "report_collapsed.txt"),
                    emit_report(collapsed, "text"))
        summary["collapsed_micro_f1"] = collapsed.micro.f1
    print(json.dumps(summary))
    return EXIT_OK


def cmd_tag(args) -> int:
    from .service import tokenize_text
    from .tagger import tag_sentence
    from .trainer import load_model

    model = load_model(args.model)
    lines = [l for l in _read_input(args).split("\n") if l.strip()]
    blocks = []
    for line in lines:
        tokens = tokenize_text(line)
        tagged = tag_sentence(model, tokens)
        if args.format == "json":
            blocks.append(json.dumps({
                "tokens": tokens,
                "tags": [t for t, _ in tagged],
                "confidences": [c for _, c in tagged],
            }, ensure_ascii=False))
        else:
            blocks.append("".join(
                f"{tok}\t{tag}\n" for tok, (tag, _) in zip(tokens, tagged)
            ))
    if args.format == "json":
        sys.stdout.write("\n".join(blocks) + ("\n" if blocks else ""))
    else:
        sys.stdout.write("\n".join(blocks))
    return EXIT_OK


def cmd_split(args) -> int:
    ratios = args.ratios.split(",")
    if len(ratios) != 3:
        raise UsageError("--ratios needs three comma-separated numbers")
    text = _read_text(args.data)
    # tag validity is not split's concern: accept whatever tags the file has
    observed = {
        line.split("\t")[1]
        for line in text.split("\n")
        if line.strip("\r") and "\t" in line
    }
    tagset = load_tagset({"ALL": sorted(observed)}) if observed else default_tagset()
    dataset = parse_conll(text, tagset, name=os.path.basename(args.data))
    spec = SplitSpec(ratios[0], ratios[1], ratios[2], seed=args.seed)
    train_ds, dev_ds, test_ds = split_dataset(dataset, spec)
    os.makedirs(args.out, exist_ok=True)
    sizes = {}
    for label, part in (("train", train_ds), ("dev", dev_ds), ("test", test_ds)):
        _write_text(os.path.join(args.out, f"{label}.conll"), write_conll(part))
        sizes[label] = len(part)
    print(json.dumps({"sizes": sizes, "seed": args.seed, "out": args.out}))
    return EXIT_OK


def cmd_bpe_learn(args) -> int:
    from .subword import learn_bpe, save_vocab

    words = _read_text(args.corpus).split()
    vocab = learn_bpe(words, args.vocab)
    _write_text(args.out, save_vocab(vocab))
    print(json.dumps({
        "merges": len(vocab.merges),
        "pieces": len(vocab.pieces),
        "out": args.out,
    }))
    return EXIT_OK


def cmd_bpe_apply(args) -> int:
    from .subword import load_vocab, segment_word

    vocab = load_vocab(_read_text(args.vocab))
    for line in _read_input(args).split("\n"):
        if not line.strip():
            continue
        segmented = [" ".join(segment_word(w, vocab)) for w in line.split()]
        sys.stdout.write("\t".join(segmented) + "\n")
    return EXIT_OK


def cmd_charlm_train(args) -> int:
    from .embeddings import CharLmConfig, train_char_lm
    from .trainer import save_char_lm_pair

    options = json.loads(_read_text(args.config)) if args.config else {}
    sentences = [
        line.split() for line in _read_text(args.corpus).split("\n") if line.strip()
    ]
    pair = []
    for direction in ("forward", "backward"):
        config = CharLmConfig(
            direction=direction,
            hidden_dim=int(options.get("hidden_dim", 128)),
            char_dim=int(options.get("char_dim", 24)),
            epochs=int(options.get("epochs", 5)),
            learning_rate=float(options.get("learning_rate", 0.005)),
            chunk_len=int(options.get("chunk_len", 64)),
            seed=int(options.get("seed", 0)),
        )
        pair.append(train_char_lm(sentences, config))
    _write_text(args.out, save_char_lm_pair(pair[0], pair[1]))
    print(json.dumps({
        "forward_loss": pair[0].epoch_losses[-1] if pair[0].epoch_losses else None,
        "backward_loss": pair[1].epoch_losses[-1] if pair[1].epoch_losses else None,
        "out": args.out,
    }))
    return EXIT_OK


def cmd_augment_annotate(args) -> int:
    from .augment import auto_annotate, save_queue
    from .service import tokenize_text
    from .trainer import load_model

    model = load_model(args.model)
    lines = [l for l in _read_text(args.input).split("\n") if l.strip()]
    if args.raw:
        sentences = [tokenize_text(line) for line in lines]
    else:
        sentences = [line.split() for line in lines]
    queue = auto_annotate(model, sentences, provenance=args.provenance)
    save_queue(queue, args.queue)
    print(json.dumps({"items": len(queue.items), "queue": args.queue}))
    return EXIT_OK


def cmd_augment_merge(args) -> int:
    from .augment import load_queue, merge_corrections

    queue = load_queue(args.queue)
    tagset = _load_tagset_arg(args.tagset)
    train_ds = _load_dataset(args.train, tagset, name="train")
    merged = merge_corrections(queue, train_ds)
    # merged output must survive a strict re-parse before it is written
    parse_conll(write_conll(merged), tagset, mode="strict")
    _write_text(args.out, write_conll(merged))
    counters = queue.counters()
    print(json.dumps({
        "before": len(train_ds),
        "added": counters["corrected"] + counters["approved"],
        "after": len(merged),
        "out": args.out,
    }))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app, default_port
    from .trainer import load_model

    model = load_model(args.model)
    app = create_app(model, args.queue, static_dir=args.static)
    port = args.port if args.port is not None else default_port()
    uvicorn.run(app, host=args.host, port=port, log_level="info")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="taglab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a tagger and evaluate on test data")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tagset", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model on gold data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--collapse", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tag", help="tag raw text (one sentence per line)")
    p.add_argument("--model", required=True)
    p.add_argument("--input", default=None, help="default: stdin")
    p.add_argument("--format", choices=("conll", "json"), default="conll")
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("split", help="shuffle and split a corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("bpe-learn", help="learn a BPE merge vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", type=int, required=True, help="max piece count")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bpe_learn)

    p = sub.add_parser("bpe-apply", help="segment words with a learned vocab")
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", default=None, help="default: stdin")
    p.set_defaults(func=cmd_bpe_apply)

    p = sub.add_parser("charlm-train",
                       help="train a forward+backward character LM pair")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_charlm_train)

    p = sub.add_parser("augment", help="annotation-review workflow")
    aug = p.add_subparsers(dest="augment_command", required=True)
    a = aug.add_parser("annotate", help="tag raw sentences into a review queue")
    a.add_argument("--model", required=True)
    a.add_argument("--input", required=True)
    a.add_argument("--queue", required=True)
    a.add_argument("--provenance", default="")
    a.add_argument("--raw", action="store_true",
                   help="tokenize lines instead of splitting on whitespace")
    a.set_defaults(func=cmd_augment_annotate)
    m = aug.add_parser("merge", help="merge reviewed items into training data")
    m.add_argument("--queue", required=True)
    m.add_argument("--train", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--tagset", default=None)
    m.set_defaults(func=cmd_augment_merge)

    p = sub.add_parser("serve", help="run the HTTP review service")
    p.add_argument("--model", required=True)
    p.add_argument("--queue", required=True)
    p.add_argument("--port", type=int, default=None,
                   help="default: $TAGLAB_PORT or 8713")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static", default=None, help="directory with the UI bundle")
    p.set_defaults(func=cmd_serve)

    return parser


def _emit_error(code: str, message: str, detail=None):
    body = {"code": code, "message": message}
    if detail is not None:
        body["detail"] = detail
    print(json.dumps(body, ensure_ascii=False), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        _emit_error("usage_error", str(e))
        return EXIT_USAGE
    except TaglabError as e:
        _emit_error(e.code, e.message, e.detail)
        return EXIT_DATA
    except (ValueError, OSError, json.JSONDecodeError) as e:
        _emit_error("data_error", str(e))
        return EXIT_DATA
    except KeyboardInterrupt:
        raise
    except Exception as e:  # noqa: BLE001 - last-resort boundary
        _emit_error("internal_error", f"{type(e).__name__}: {e}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
