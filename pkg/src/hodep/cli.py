"""``hodep`` command line: train, parse, eval, verify.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Settings resolve as
built-in defaults < ``--config`` JSON file < explicit flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from hodep import admm_inference, decoder, factor_graph, neural_scorer, trainer, verify
from hodep.corpus import ConllParseError, TreeValidationError, Vocabulary, format_conllu, load_conllu

log = logging.getLogger("hodep")

TRAIN_DEFAULTS = {
    "optimizer": "adam", "lr": None, "epochs": 10, "batch": 5, "max_len": 20, "high_order": False,
    "beta": 1.0, "seed": 0, "warm_start_epochs": 0, "include_backward": False, "split_scores": False,
    "min_count": 2, "clip_norm": 5.0,
    "encoder": "bilstm", "d_emb": 64, "d_pos": 16, "d_hidden": 64, "d_arc": 64,
}
ADMM_DEFAULTS = {
    "rho": 1.0, "eta0": None, "eps_primal": 1e-4, "eps_dual": 1e-4, "max_iters": 300,
    "rounding_threshold": 0.5, "slave_mode": "box",
}


def str2bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _add_admm_flags(p):
    g = p.add_argument_group("ADMM inference")
    g.add_argument("--rho", type=float, help="augmented-Lagrangian penalty (default 1.0)")
    g.add_argument("--eta0", type=float, help="base multiplier step, eta_t = eta0/sqrt(t+1) (default: rho)")
    g.add_argument("--eps-primal", type=float, help="primal residual threshold (default 1e-4)")
    g.add_argument("--eps-dual", type=float, help="dual residual threshold (default 1e-4)")
    g.add_argument("--max-iters", type=int, help="ADMM iteration cap (default 300)")
    g.add_argument("--rounding-threshold", type=float, help="u >= threshold rounds to 1 (default 0.5)")
    g.add_argument("--slave-mode", choices=["box", "pattern"], help="slave feasible set (default box)")
    g.add_argument("--high-order", type=str2bool, metavar="BOOL", help="run ADMM over the factor graph (default false)")
    g.add_argument("--beta", type=float, help="weight of the consensus perturbation (default 1.0)")
    g.add_argument("--include-backward", type=str2bool, metavar="BOOL", help="add backward slaves (default false)")
    g.add_argument("--split-scores", type=str2bool, metavar="BOOL", help="divide theta by delta per slave (default false)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hodep", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a scorer on a CoNLL-U file",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--train", required=True, help="training CoNLL-U file")
    p.add_argument("--dev", help="development CoNLL-U file for per-epoch UAS")
    p.add_argument("--out", default="hodep-run", help="output directory (default hodep-run)")
    p.add_argument("--config", help="JSON file of flag defaults (keys use underscores)")
    p.add_argument("--optimizer", choices=["adam", "sgd"], help="optimiser (default adam)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-3 adam, 1e-2 sgd)")
    p.add_argument("--epochs", type=int, help="epochs (default 10)")
    p.add_argument("--batch", type=int, help="batch size (default 5)")
    p.add_argument("--max-len", type=int, help="drop sentences longer than this (default 20)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--warm-start-epochs", type=int, help="first-order epochs before coupling (default 0)")
    p.add_argument("--min-count", type=int, help="words rarer than this map to UNK (default 2)")
    p.add_argument("--clip-norm", type=float, help="global gradient norm cap, 0 disables (default 5.0)")
    p.add_argument("--encoder", choices=list(neural_scorer.ENCODERS), help="token encoder (default bilstm)")
    p.add_argument("--d-emb", type=int, help="word embedding width (default 64)")
    p.add_argument("--d-pos", type=int, help="POS embedding width (default 16)")
    p.add_argument("--d-hidden", type=int, help="LSTM width per direction (default 64)")
    p.add_argument("--d-arc", type=int, help="arc MLP width (default 64)")
    _add_admm_flags(p)

    p = sub.add_parser("parse", help="parse a CoNLL-U file with a trained model",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--model", required=True, help="checkpoint written by train")
    p.add_argument("--input", required=True, help="CoNLL-U input (gold heads are ignored)")
    p.add_argument("--output", default="-", help="output CoNLL-U path, - for stdout (default -)")
    p.add_argument("--vocab", help="vocabulary file overriding the one stored in the checkpoint")
    p.add_argument("--dump-factor-graph", metavar="PATH", help="write each sentence's factor graph, - for stderr")
    p.add_argument("--trace-admm", metavar="PATH", help="write per-iteration ADMM residuals as CSV, - for stderr")
    p.add_argument("--jobs", type=int, help="worker processes (default: logical cores)")
    _add_admm_flags(p)

    p = sub.add_parser("eval", help="unlabelled attachment score of predictions against gold")
    p.add_argument("--gold", required=True, help="gold CoNLL-U file")
    p.add_argument("--pred", required=True, help="predicted CoNLL-U file")

    p = sub.add_parser("verify", help="run the exact-oracle suites")
    p.add_argument("--suite", choices=("all",) + verify.SUITES, default="all", help="suite to run (default all)")
    p.add_argument("--seeds", type=int, default=100, help="random instances per suite (default 100)")
    return parser


def resolve(args, defaults: dict) -> dict:
    """Merge defaults, an optional JSON config file and explicit flags."""
    settings = dict(defaults)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        with open(cfg_path, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        settings.update(loaded)
    settings.update({k: v for k, v in vars(args).items() if k in defaults})
    return settings


def admm_config(settings) -> admm_inference.AdmmConfig:
    return admm_inference.AdmmConfig(
        rho=settings["rho"], eta0=settings["eta0"], eps_primal=settings["eps_primal"],
        eps_dual=settings["eps_dual"], max_iters=settings["max_iters"],
        rounding_threshold=settings["rounding_threshold"], mode=settings["slave_mode"])


def train_config(settings) -> trainer.TrainConfig:
    scorer = neural_scorer.ScorerConfig(d_emb=settings["d_emb"], d_pos=settings["d_pos"],
                                        d_hidden=settings["d_hidden"], d_arc=settings["d_arc"],
                                        encoder=settings["encoder"])
    return trainer.TrainConfig(
        optimizer=settings["optimizer"], lr=settings["lr"], epochs=settings["epochs"],
        batch_size=settings["batch"], max_len=settings["max_len"], high_order=settings["high_order"],
        beta=settings["beta"], admm=admm_config(settings), seed=settings["seed"],
        warm_start_epochs=settings["warm_start_epochs"], include_backward=settings["include_backward"],
        split_scores=settings["split_scores"], min_count=settings["min_count"],
        clip_norm=settings["clip_norm"] or None, scorer=scorer)


def _usage(parser, message):
    parser.print_usage(sys.stderr)
    print(f"hodep: error: {message}", file=sys.stderr)
    return 2


def _open_sink(path):
    if path == "-":
        return sys.stderr, False
    return open(path, "w", encoding="utf-8"), True


def cmd_train(args, parser) -> int:
    for flag in ("train", "dev", "config"):
        path = getattr(args, flag, None)
        if path and not Path(path).is_file():
            return _usage(parser, f"--{flag}: no such file {path!r}")
    try:
        settings = resolve(args, {**TRAIN_DEFAULTS, **ADMM_DEFAULTS})
        config = train_config(settings)
    except (ValueError, TypeError) as exc:
        return _usage(parser, str(exc))
    try:
        train_sents = load_conllu(args.train)
        dev_sents = load_conllu(args.dev) if getattr(args, "dev", None) else []
    except (ConllParseError, TreeValidationError) as exc:
        print(f"hodep: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    try:
        params, vocab, report = trainer.train(train_sents, dev_sents, config, out_dir=out)
    except trainer.TrainingError as exc:
        print(f"hodep: training aborted: {exc}", file=sys.stderr)
        return 1
    params.save(out / "model.hodep", vocab)
    vocab.save(out / "vocab.txt")
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.txt").write_text(report.summary() + "\n", encoding="utf-8")
    print(report.summary())
    return 0


# worker state for parallel parsing
_WORKER = {}


def _init_worker(model_path, vocab_text, settings):
    params, vocab = neural_scorer.ScorerParams.load(model_path)
    if vocab_text is not None:
        vocab = Vocabulary.loads(vocab_text)
    _WORKER.update(params=params, vocab=vocab, settings=settings)


def _parse_one(sentence):
    w = _WORKER
    heads, _ = trainer.parse_sentence(sentence, w["vocab"], w["params"], w["settings"]["config"],
                                      w["settings"]["high_order"])
    return heads


def _parse_settings(args, params):
    meta = params.meta or {}
    stored = dict(ADMM_DEFAULTS)
    stored.update({k: v for k, v in meta.get("admm", {}).items() if k in ADMM_DEFAULTS})
    if "mode" in meta.get("admm", {}):
        stored["slave_mode"] = meta["admm"]["mode"]
    for key in ("high_order", "beta", "include_backward", "split_scores"):
        stored[key] = meta.get(key, TRAIN_DEFAULTS[key])
    stored.update({k: v for k, v in vars(args).items() if k in stored})
    config = trainer.TrainConfig(high_order=stored["high_order"], beta=stored["beta"],
                                 include_backward=stored["include_backward"],
                                 split_scores=stored["split_scores"], admm=admm_config(stored),
                                 scorer=params.config)
    return {"config": config, "high_order": stored["high_order"]}


def cmd_parse(args, parser) -> int:
    for flag in ("model", "input", "vocab"):
        path = getattr(args, flag, None)
        if path and not Path(path).is_file():
            return _usage(parser, f"--{flag}: no such file {path!r}")
    try:
        params, vocab = neural_scorer.ScorerParams.load(args.model)
        vocab_text = None
        if getattr(args, "vocab", None):
            vocab_text = Path(args.vocab).read_text(encoding="utf-8")
            vocab = Vocabulary.loads(vocab_text)
        if vocab is None:
            raise ValueError("checkpoint carries no vocabulary; pass --vocab")
        if (vocab.n_words, vocab.n_tags) != (params.n_words, params.n_tags):
            raise ValueError(f"vocabulary sizes {(vocab.n_words, vocab.n_tags)} do not match "
                             f"model embeddings {(params.n_words, params.n_tags)}")
        sentences = load_conllu(args.input)
        settings = _parse_settings(args, params)
    except (ValueError, OSError) as exc:
        print(f"hodep: {exc}", file=sys.stderr)
        return 1
    cfg, high = settings["config"], settings["high_order"]
    dump_path = getattr(args, "dump_factor_graph", None)
    trace_path = getattr(args, "trace_admm", None)
    jobs = getattr(args, "jobs", None) or os.cpu_count() or 1
    predictions = []
    if jobs > 1 and len(sentences) > jobs and not dump_path and not trace_path:
        with ProcessPoolExecutor(jobs, initializer=_init_worker,
                                 initargs=(args.model, vocab_text, settings)) as pool:
            predictions = list(pool.map(_parse_one, sentences, chunksize=16))
    else:
        dump, close_dump = _open_sink(dump_path) if dump_path else (None, False)
        trace, close_trace = _open_sink(trace_path) if trace_path else (None, False)
        if trace is not None:
            trace.write("sentence,iteration,primal,dual,objective\n")
        try:
            for k, sent in enumerate(sentences):
                sink = None
                if trace is not None:
                    sink = _PrefixWriter(trace, f"{k + 1},")
                heads, inf = trainer.parse_sentence(sent, vocab, params, cfg, high, sink)
                if dump is not None:
                    graph = inf.graph or factor_graph.build(sent.n, inf.scores, cfg.include_backward,
                                                            cfg.split_scores)
                    dump.write(f"# sentence {k + 1}\n{graph.dump()}")
                predictions.append(heads)
        finally:
            if close_dump:
                dump.close()
            if close_trace:
                trace.close()
    for heads in predictions:
        if not decoder.is_tree(heads):  # pragma: no cover - decode() guarantees trees
            print("hodep: internal error: non-tree output", file=sys.stderr)
            return 1
    text = format_conllu(sentences, predictions)
    if args.output == "-":
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text, encoding="utf-8")
    log.info("parsed %d sentences", len(sentences))
    return 0


class _PrefixWriter:
    def __init__(self, fh, prefix):
        self.fh, self.prefix = fh, prefix

    def write(self, text):
        self.fh.write(self.prefix + text)


def cmd_eval(args, parser) -> int:
    for flag in ("gold", "pred"):
        if not Path(getattr(args, flag)).is_file():
            return _usage(parser, f"--{flag}: no such file {getattr(args, flag)!r}")
    try:
        gold = load_conllu(args.gold)
        pred = load_conllu(args.pred)
    except (ConllParseError, TreeValidationError) as exc:
        print(f"hodep: {exc}", file=sys.stderr)
        return 1
    if len(gold) != len(pred):
        print(f"hodep: {len(gold)} gold vs {len(pred)} predicted sentences", file=sys.stderr)
        return 1
    correct = total = 0
    for k, (g, p) in enumerate(zip(gold, pred), start=1):
        if g.n != p.n:
            print(f"hodep: sentence {k}: {g.n} gold vs {p.n} predicted tokens", file=sys.stderr)
            return 1
        correct += sum(int(a == b) for a, b in zip(p.gold_heads, g.gold_heads))
        total += g.n
    if total == 0:
        print("hodep: empty corpus, UAS undefined", file=sys.stderr)
        return 1
    print(f"{correct / total:.4f}")
    return 0


def cmd_verify(args, parser) -> int:
    if args.seeds < 1:
        return _usage(parser, "--seeds must be >= 1")
    names = verify.SUITES if args.suite == "all" else (args.suite,)
    checks = verify.run_suites(names, args.seeds)
    print(verify.format_table(checks))
    return 0 if all(c.passed for c in checks) else 1


COMMANDS = {"train": cmd_train, "parse": cmd_parse, "eval": cmd_eval, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    return COMMANDS[args.command](args, sub)


if __name__ == "__main__":
    sys.exit(main())
