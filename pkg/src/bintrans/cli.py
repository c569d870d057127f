"""Command line entry point: ``bintrans <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 configuration, 4 data format, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asmtext import ListingParseError, parse_arch, parse_listing
from .corpus import (MonoCorpus, OptLevel, Vocab, corpus_stats, format_stats_table, read_corpus,
                     read_functions, write_corpus, write_functions, write_vocab)
from .embed import (EmbedTrainConfig, read_embeddings_binary, train_maie, write_embeddings_binary,
                    write_embeddings_text)
from .evalkit import (BleuReport, SimilarityPair, bleu_score, cosine_similarity, format_bleu_report,
                      format_similarity_table, function_embedding, read_pairs, resolve_ref,
                      similarity_accuracy)
from .provenance import make_provenance, read_text_lines, write_text
from .toyoracle import Lexicon, TwinSpec, generate_twin_corpus, measured_swap_rate, oracle_translate
from .vulndetect import (LabeledSet, OversampleConfig, evaluate_detection, format_detection_table,
                         prepare_training_set, read_dataset, read_linear_model, train_linear_svm,
                         write_dataset, write_linear_model)
from .xlate import TrainSchedule, load_model, save_model, train_translator, translate_blocks
from .xmap import SelfLearnConfig, cross_embeddings, write_mapping

log = logging.getLogger("bintrans")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4, 5
LEXICON_NAME = "lexicon.tsv"


class ConfigError(Exception):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class DataFormatError(Exception):
    pass


# --- configuration ------------------------------------------------------------------------

def load_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        if not Path(path).is_file():
            raise ConfigError("--config", f"no such file {path}")
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError("--config", str(e)) from None
    return cp


def _convert(field, section, raw, default):
    name = f"{section}.{field}"
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(name, f"cannot parse {raw!r}") from None


def resolve(cls, section, args, config, **base):
    """Dataclass built from defaults < ``base`` < config file < command-line flags."""
    values = {}
    for f in dataclasses.fields(cls):
        default = base.get(f.name, f.default)
        value = default
        if config.has_option(section, f.name):
            value = _convert(f.name, section, config.get(section, f.name), default)
        flag = getattr(args, f.name, None)
        if flag is not None:
            value = flag
        values[f.name] = value
    obj = cls(**values)
    if hasattr(obj, "validate"):
        try:
            obj.validate()
        except ValueError as e:
            raise ConfigError(section, str(e)) from None
    return obj


def config_seed(args, config) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if config.has_option("run", "seed"):
        return _convert("seed", "run", config.get("run", "seed"), 0)
    return 0


def check_inputs(*paths, oracle=()):
    """Every input must exist; the ground-truth lexicon only through --oracle."""
    for p in paths:
        if p is None:
            continue
        if Path(p).name == LEXICON_NAME and p not in oracle:
            raise ConfigError(str(p), "the ground-truth lexicon may only be read by evaluation "
                                      "commands through --oracle")
        if not Path(p).exists():
            raise ConfigError(str(p), "no such file")


def _read(fn, path, *a):
    try:
        return fn(path, *a)
    except (ValueError, KeyError, IndexError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"{path}: {e}") from None


def _kv_pairs(items, what):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(what, f"expected ARCH=PATH, got {item!r}")
        arch, path = item.split("=", 1)
        out[str(parse_arch(arch))] = path
    return out


def _emit(text, out=None, provenance=None):
    sys.stdout.write(text)
    if out:
        write_text(out, text, provenance)


def function_index_corpus(path) -> str:
    """Corpus file named in a function index header."""
    for ln in Path(path).read_text(encoding="utf-8").split("\n"):
        if not ln.startswith("#"):
            break
        for kv in ln[1:].split():
            if kv.startswith("corpus="):
                return kv.split("=", 1)[1]
    raise DataFormatError(f"{path}: function index names no corpus")


def load_functions(index_path):
    corpus = Path(index_path).parent / function_index_corpus(index_path)
    check_inputs(corpus)
    blocks = _read(read_corpus, corpus)
    return _read(read_functions, index_path, blocks)


# --- subcommands --------------------------------------------------------------------------

def cmd_normalize(args, config):
    check_inputs(*args.listings)
    arch = parse_arch(args.arch)
    functions = []
    for path in args.listings:
        try:
            functions.extend(parse_listing(Path(path).read_text(encoding="utf-8"), arch))
        except ListingParseError as e:
            raise DataFormatError(f"{path}: {e}") from None
    name = args.name or str(arch)
    out = Path(args.out_dir)
    prov = make_provenance(config={"arch": str(arch), "inputs": [Path(p).name for p in args.listings]})
    blocks = write_functions(out / f"{name}.functions", functions, f"{name}.corpus", prov)
    write_corpus(out / f"{name}.corpus", blocks, prov)
    write_vocab(out / f"{name}.vocab", MonoCorpus.from_words(arch, args.opt, blocks).vocab, prov)
    log.info("%d functions, %d blocks -> %s", len(functions), len(blocks), out)


def cmd_stats(args, config):
    rows = []
    for opt, index in args.input:
        check_inputs(index)
        fns = load_functions(index)
        archs = sorted({str(f.arch) for f in fns}) or ["-"]
        rows.append((OptLevel(opt).value, "/".join(archs), corpus_stats(fns)))
    _emit(format_stats_table(rows), args.out, make_provenance())


def cmd_train_embed(args, config):
    check_inputs(args.corpus)
    seed = config_seed(args, config)
    cfg = resolve(EmbedTrainConfig, "embed", args, config, seed=seed)
    blocks = _read(read_corpus, args.corpus)
    corpus = MonoCorpus.from_words(args.arch, args.opt, blocks)
    emb = train_maie(corpus, cfg)
    prov = make_provenance(seed=cfg.seed, config=dataclasses.asdict(cfg), arch=str(corpus.arch))
    write_embeddings_binary(args.out, emb, prov)
    if args.text:
        write_embeddings_text(args.text, emb, prov)


def cmd_map(args, config):
    check_inputs(args.source, args.target)
    seed = config_seed(args, config)
    cfg = resolve(SelfLearnConfig, "map", args, config, seed=seed)
    src = _read(read_embeddings_binary, args.source)
    trg = _read(read_embeddings_binary, args.target)
    caie_s, caie_t, T = cross_embeddings(src, trg, cfg)
    out = Path(args.out_dir)
    prov = make_provenance(seed=seed, config=dataclasses.asdict(cfg), source=src.arch, target=trg.arch)
    write_mapping(out / "mapping.txt", T, prov)
    for emb in (caie_s, caie_t):
        write_embeddings_binary(out / f"caie_{emb.arch}.bin", emb, prov)
        write_embeddings_text(out / f"caie_{emb.arch}.txt", emb, prov)
    if not T.converged:
        log.warning("mapping did not converge within %d iterations", cfg.max_iter)


def _store_dir(store, archs, opt):
    return Path(store) / "-".join(sorted(archs)) / OptLevel(opt).value


def cmd_train_xlate(args, config):
    corpora_p = _kv_pairs(args.corpus, "--corpus")
    caie_p = _kv_pairs(args.caie, "--caie")
    if len(corpora_p) != 2 or set(corpora_p) != set(caie_p):
        raise ConfigError("--corpus/--caie", "need one corpus and one CAIE file for each of two archs")
    check_inputs(*corpora_p.values(), *caie_p.values())
    seed = config_seed(args, config)
    sched = resolve(TrainSchedule, "xlate", args, config)
    caie = {a: _read(read_embeddings_binary, p) for a, p in caie_p.items()}
    corpora = {}
    for a, path in corpora_p.items():
        # ids must follow the embedding rows, so encode against the CAIE word list
        index = {w: i for i, w in enumerate(caie[a].words)}
        blocks = _read(read_corpus, path)
        missing = [w for b in blocks for w in b if w not in index]
        if missing:
            raise DataFormatError(f"CAIE for {a} lacks corpus word {missing[0]!r}")
        vocab = Vocab(list(caie[a].words), [0] * len(caie[a].words))
        corpora[a] = MonoCorpus(a, args.opt, vocab, [[index[w] for w in b] for b in blocks])
    model = train_translator(corpora, caie, sched, seed=seed)
    out = _store_dir(args.store, corpora, args.opt)
    prov = make_provenance(seed=seed, config=dataclasses.asdict(sched), archs="-".join(model.archs),
                           opt=args.opt)
    save_model(out / "model.ubt", model, prov)
    keys = sorted(model.history)
    rows = ["iteration\t" + "\t".join(keys)]
    for i in range(max(len(model.history[k]) for k in keys)):
        rows.append(f"{i}\t" + "\t".join(f"{model.history[k][i]:.6f}" if i < len(model.history[k]) else ""
                                         for k in keys))
    write_text(out / "losses.tsv", "\n".join(rows) + "\n", prov)
    manifest = {"provenance": prov, "archs": list(model.archs), "opt": args.opt,
                "artifacts": ["model.ubt", "losses.tsv"], "skipped_backtranslations": model.skipped}
    write_text(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    log.info("model written to %s", out)


def cmd_translate(args, config):
    check_inputs(args.model, args.corpus, args.functions)
    model = _read(load_model, args.model)
    source, target = str(parse_arch(args.source)), str(parse_arch(args.target))
    prov = make_provenance(seed=model.seed, source=source, target=target, beam=args.beam)
    if args.functions:
        fns = load_functions(args.functions)
        blocks = [b for f in fns for b in f.block_words()]
    else:
        blocks = _read(read_corpus, args.corpus)
    out = translate_blocks(blocks, model, source, target, beam=args.beam)
    out = [b or ["<UNK>"] for b in out]
    write_corpus(args.out, out, prov)
    if args.functions:
        from .asmtext import FunctionRecord
        k, records = 0, []
        for f in fns:
            records.append(FunctionRecord.from_words(f.name, target, out[k:k + len(f.blocks)]))
            k += len(f.blocks)
        idx = Path(args.out).with_suffix(".functions")
        write_functions(idx, records, Path(args.out).name, prov)


def _group(blocks, index_path):
    """Split a block list into functions following a function index (or one block each)."""
    if not index_path:
        return [(f"b{i}", [b]) for i, b in enumerate(blocks)]
    groups = []
    for ln in read_text_lines(index_path):
        if not ln:
            continue
        name, _, first, count = ln.split("\t")
        groups.append((name, blocks[int(first):int(first) + int(count)]))
    return groups


def cmd_bleu(args, config):
    oracle = (args.oracle,) if args.oracle else ()
    check_inputs(args.candidate, args.reference, args.source, args.functions, *oracle, oracle=oracle)
    cand = _read(read_corpus, args.candidate)
    if args.oracle:
        if not args.source:
            raise ConfigError("--source", "required with --oracle")
        lex = _read(Lexicon.read, args.oracle)
        ref = [oracle_translate(b, lex, args.direction) for b in _read(read_corpus, args.source)]
    elif args.reference:
        ref = _read(read_corpus, args.reference)
    else:
        raise ConfigError("--reference", "give a reference corpus or --oracle with --source")
    if len(cand) != len(ref):
        raise DataFormatError(f"{len(cand)} candidate blocks vs {len(ref)} reference blocks")
    groups_c = _read(_group, cand, args.functions)
    groups_r = _read(_group, ref, args.functions)
    per = [(n, bleu_score(c, r)) for (n, c), (_, r) in zip(groups_c, groups_r)]
    report = BleuReport(per, float(np.mean([s for _, s in per])), bleu_score(cand, ref, smoothing=False))
    _emit(format_bleu_report(report, not args.quiet), args.out, make_provenance())


def _embed_refs(refs, caie, model, target, cache, base_dir="."):
    """Embeddings of function references, translating those not in ``target`` arch first.

    Relative corpus paths are taken from ``base_dir`` (the pairs file's directory).
    """
    out = {}
    for ref in refs:
        if ref.id in out:
            continue
        fn = resolve_ref(ref, base_dir, cache)
        blocks = fn.block_words()
        if str(fn.arch) != target:
            if model is None:
                raise ConfigError("--model", f"function {ref.id!r} is {fn.arch}; a translation model "
                                             f"is needed to bring it to {target}")
            blocks = [b or ["<UNK>"] for b in translate_blocks(blocks, model, str(fn.arch), target)]
        out[ref.id] = function_embedding(blocks, caie)
    return out


def cmd_funcsim(args, config):
    check_inputs(args.pairs, args.caie, args.model)
    seed = config_seed(args, config)
    pairs = _read(read_pairs, args.pairs)
    caie = _read(read_embeddings_binary, args.caie)
    model = _read(load_model, args.model) if args.model else None
    target = caie.arch or args.target
    emb = _embed_refs([r for a, b, _ in pairs for r in (a, b)], caie, model, target, {},
                      Path(args.pairs).parent)
    scored = [SimilarityPair(a.id, b.id, label, cosine_similarity(emb[a.id], emb[b.id]))
              for a, b, label in pairs]
    res = similarity_accuracy(scored, args.val_fraction, seed)
    text = format_similarity_table({args.tool: {args.opt: res.accuracy}})
    text += f"threshold {res.threshold:.6f} (validation accuracy {res.validation_accuracy:.4f}, " \
            f"{res.n_test} test pairs)\n"
    _emit(text, args.out, make_provenance(seed=seed))


def _labels(path):
    out = {}
    for ln in read_text_lines(path):
        if ln:
            name, label = ln.split()
            out[name] = int(label)
    return out


def _dataset_from_functions(args, model=None):
    check_inputs(args.functions, args.labels, args.caie)
    fns = load_functions(args.functions)
    labels = _read(_labels, args.labels)
    caie = _read(read_embeddings_binary, args.caie)
    target = caie.arch
    vecs, ys = [], []
    for f in fns:
        if f.name not in labels:
            raise DataFormatError(f"{args.labels}: no label for function {f.name!r}")
        blocks = f.block_words()
        if str(f.arch) != target:
            if model is None:
                raise ConfigError("--xlate", f"{f.name!r} is {f.arch}; pass a translation model")
            blocks = [b or ["<UNK>"] for b in translate_blocks(blocks, model, str(f.arch), target)]
        vecs.append(function_embedding(blocks, caie).vector)
        ys.append(labels[f.name])
    return LabeledSet(np.array(vecs), np.array(ys)), [f.name for f in fns]


def cmd_vuln_train(args, config):
    seed = config_seed(args, config)
    cfg = resolve(OversampleConfig, "vuln", args, config, seed=seed)
    if args.dataset:
        check_inputs(args.dataset)
        data = _read(read_dataset, args.dataset)
    else:
        data, names = _dataset_from_functions(args)
        if args.dataset_out:
            write_dataset(args.dataset_out, data, make_provenance(seed=seed), names)
    lam = args.lam if args.lam is not None else float(config.get("vuln", "lam", fallback="1e-4"))
    epochs = args.epochs if args.epochs is not None else int(config.get("vuln", "epochs", fallback="50"))
    train = prepare_training_set(data, cfg)
    model = train_linear_svm(train, lam=lam, epochs=epochs, seed=seed)
    prov = make_provenance(seed=seed, config=dict(dataclasses.asdict(cfg), lam=lam, epochs=epochs),
                           n_benign=train.counts()[0], n_vulnerable=train.counts()[1])
    write_linear_model(args.out, model, prov)


def cmd_vuln_scan(args, config):
    check_inputs(args.model, args.xlate)
    from .provenance import parse_header
    model = _read(read_linear_model, args.model)
    recorded = parse_header(args.model).get("digest")
    if recorded is not None and recorded != model.digest():
        raise DataFormatError(f"{args.model}: classifier differs from the one recorded at training time")
    if args.dataset:
        check_inputs(args.dataset)
        data = _read(read_dataset, args.dataset)
    else:
        xl = _read(load_model, args.xlate) if args.xlate else None
        data, _ = _dataset_from_functions(args, xl)
    m = evaluate_detection(model, data)
    text = format_detection_table([(args.opt, args.case, args.method_label, m)])
    text += f"TP={m.tp} FP={m.fp} TN={m.tn} FN={m.fn} classifier={model.digest()[:16]}\n"
    _emit(text, args.out, make_provenance())


def cmd_toygen(args, config):
    seed = config_seed(args, config)
    spec = resolve(TwinSpec, "toy", args, config, seed=seed)
    write_toy(spec, Path(args.out_dir))


def write_toy(spec: TwinSpec, out: Path):
    from .pipeline import HIGH, LOW, function_records
    twins = generate_twin_corpus(spec)
    prov = make_provenance(seed=spec.seed, config=dataclasses.asdict(spec))
    truth = {}
    for arch, fns in ((HIGH, twins.a_functions), (LOW, twins.b_functions)):
        recs = function_records(fns, arch)
        blocks = write_functions(out / f"{arch}.functions", recs, f"{arch}.corpus", prov)
        write_corpus(out / f"{arch}.corpus", blocks, prov)
        s = corpus_stats(recs)
        truth[arch] = {"functions": s.function_count, "unique_instructions": s.unique_instruction_count,
                       "total_instructions": s.total_instruction_count, "blocks": len(blocks)}
    twins.lexicon.write(out / LEXICON_NAME)
    truth["measured_swap_rate"] = round(measured_swap_rate(twins), 6)
    truth["provenance"] = prov
    write_text(out / "toy_manifest.json", json.dumps(truth, sort_keys=True, indent=2) + "\n")
    return twins


def cmd_e2e_demo(args, config):
    from .demo import run_demo
    seed = config_seed(args, config)
    run_demo(Path(args.out_dir), seed=seed, n_blocks=args.blocks, iterations=args.iterations,
             modes=[m for m in args.modes.split(",") if m], vuln_test_benign=args.vuln_test_benign)


# --- parser ---------------------------------------------------------------------------------

def _add_fields(p, cls, skip=()):
    for f in dataclasses.fields(cls):
        if f.name in skip or isinstance(f.default, tuple):
            continue
        kind = type(f.default) if f.default is not None else int
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind, default=None,
                       help=f"(default {f.default})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bintrans", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"bintrans {__version__}")
    ap.add_argument("--config", help="key = value config file with [section] headers")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("normalize", help="disassembly listings -> corpus, function index, vocab")
    p.add_argument("listings", nargs="+")
    p.add_argument("--arch", required=True)
    p.add_argument("--opt", default="O2", choices=[o.value for o in OptLevel])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("stats", help="corpus statistics table")
    p.add_argument("--input", nargs=2, action="append", required=True, metavar=("OPT", "FUNCTIONS"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train-embed", help="train mono-architecture instruction embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--opt", default="O2", choices=[o.value for o in OptLevel])
    p.add_argument("--out", required=True, help="binary embedding file")
    p.add_argument("--text", help="also write the text format here")
    _add_fields(p, EmbedTrainConfig)
    p.set_defaults(func=cmd_train_embed)

    p = sub.add_parser("map", help="map source embeddings into the target space")
    p.add_argument("--source", required=True, help="low-resource arch embeddings")
    p.add_argument("--target", required=True, help="high-resource arch embeddings")
    p.add_argument("--out-dir", required=True)
    _add_fields(p, SelfLearnConfig)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("train-xlate", help="train the block translator")
    p.add_argument("--corpus", action="append", required=True, metavar="ARCH=PATH")
    p.add_argument("--caie", action="append", required=True, metavar="ARCH=PATH")
    p.add_argument("--store", required=True, help="model store root")
    p.add_argument("--opt", default="O2", choices=[o.value for o in OptLevel])
    p.add_argument("--seed", type=int)
    _add_fields(p, TrainSchedule)
    p.set_defaults(func=cmd_train_xlate)

    p = sub.add_parser("translate", help="translate blocks or functions")
    p.add_argument("--model", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--corpus")
    g.add_argument("--functions", help="function index; writes a matching index next to --out")
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=int, default=1)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("bleu", help="per-function and mean BLEU")
    p.add_argument("--candidate", required=True)
    p.add_argument("--reference")
    p.add_argument("--functions", help="function index grouping the blocks")
    p.add_argument("--oracle", help="ground-truth lexicon; reference = its rendering of --source")
    p.add_argument("--source")
    p.add_argument("--direction", default="b2a", choices=["a2b", "b2a"])
    p.add_argument("--quiet", action="store_true", help="mean only")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bleu)

    p = sub.add_parser("funcsim", help="function similarity accuracy")
    p.add_argument("--pairs", required=True)
    p.add_argument("--caie", required=True, help="embeddings of the comparison arch")
    p.add_argument("--model", help="translation model for cross-arch pairs")
    p.add_argument("--target")
    p.add_argument("--tool", default="fastText")
    p.add_argument("--opt", default="O2")
    p.add_argument("--val-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_funcsim)

    for name, func in (("vuln-train", cmd_vuln_train), ("vuln-scan", cmd_vuln_scan)):
        p = sub.add_parser(name, help="train the vulnerability classifier" if name == "vuln-train"
                           else "apply a trained classifier")
        p.add_argument("--dataset", help="label + vector rows")
        p.add_argument("--functions")
        p.add_argument("--labels", help="'name label' lines")
        p.add_argument("--caie")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=(name == "vuln-train"))
        if name == "vuln-train":
            p.add_argument("--dataset-out")
            p.add_argument("--lam", type=float)
            p.add_argument("--epochs", type=int)
            _add_fields(p, OversampleConfig, skip=("seed",))
        else:
            p.add_argument("--model", required=True)
            p.add_argument("--xlate", help="translation model for functions of another arch")
            p.add_argument("--opt", default="O2")
            p.add_argument("--case", default="I")
            p.add_argument("--method-label", default="Ours")
        p.set_defaults(func=func)

    p = sub.add_parser("toygen", help="synthetic twin corpora with a hidden lexicon")
    p.add_argument("--out-dir", required=True)
    _add_fields(p, TwinSpec)
    p.set_defaults(func=cmd_toygen)

    p = sub.add_parser("e2e-demo", help="toygen -> embeddings -> mapping -> translator -> reports")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--blocks", type=int, default=600)
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--modes", default="subword,word")
    p.add_argument("--vuln-test-benign", type=int, default=500)
    p.set_defaults(func=cmd_e2e_demo)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        args.func(args, config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, ListingParseError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
