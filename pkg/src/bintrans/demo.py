"""End-to-end demonstration on toy twin corpora; every artifact is seed-deterministic."""
from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path

import numpy as np

from .asmtext import FunctionRecord
from .corpus import corpus_stats, format_stats_table, write_corpus, write_functions
from .embed import write_embeddings_binary, write_embeddings_text
from .evalkit import BleuReport, bleu_score, format_bleu_report, format_similarity_table
from .pipeline import (HIGH, LOW, function_records, run_toy, score_toy_translation, toy_embed_config,
                       toy_schedule, toy_similarity, toy_twin_spec, toy_vulnerability,
                       translate_low_functions)
from .provenance import make_provenance, write_text
from .toyoracle import oracle_translate
from .vulndetect import format_detection_table
from .xlate import save_model
from .xmap import SelfLearnConfig, write_mapping

log = logging.getLogger(__name__)

TOOL_NAMES = {"subword": "fastText", "word": "word2vec"}


def run_demo(out: Path, seed=0, n_blocks=600, iterations=300, modes=("subword", "word"),
             vuln_test_benign=500):
    from .cli import write_toy

    out = Path(out)
    spec = toy_twin_spec(n_blocks=n_blocks, seed=seed)
    twins = write_toy(spec, out / "toy")
    prov = make_provenance(seed=seed, config={"blocks": n_blocks, "iterations": iterations,
                                              "modes": list(modes)})
    stats_rows = [("O2", arch, corpus_stats(function_records(fns, arch)))
                  for arch, fns in ((HIGH, twins.a_functions), (LOW, twins.b_functions))]
    write_text(out / "stats.txt", format_stats_table(stats_rows), prov)

    sim_rows, vuln_rows, summary = {}, [], []
    for mode in modes:
        d = out / mode
        embed_cfg = toy_embed_config(mode=mode)
        schedule = toy_schedule(iterations=iterations)
        run = run_toy(spec, embed_cfg, SelfLearnConfig(seed=seed), schedule, seed)
        mprov = dict(prov, mode=mode)
        for arch in (HIGH, LOW):
            write_embeddings_binary(d / f"maie_{arch}.bin", run.maie[arch], mprov)
            write_embeddings_binary(d / f"caie_{arch}.bin", run.caie[arch], mprov)
            write_embeddings_text(d / f"caie_{arch}.txt", run.caie[arch], mprov)
        write_mapping(d / "mapping.txt", run.transform, dict(mprov, source=LOW, target=HIGH))
        save_model(d / "store" / f"{LOW}-{HIGH}" / "O2" / "model.ubt", run.model, mprov)

        hyps = translate_low_functions(run)
        recs = [FunctionRecord.from_words(name, HIGH, [b or ["<UNK>"] for b in h])
                for (name, _), h in zip(twins.b_functions, hyps)]
        blocks = write_functions(d / "translated.functions", recs, "translated.corpus", mprov)
        write_corpus(d / "translated.corpus", blocks, mprov)

        per = []
        for (name, src), h in zip(twins.b_functions, hyps):
            per.append((name, bleu_score(h, [oracle_translate(b, twins.lexicon, "b2a") for b in src])))
        flat_h = [b for h in hyps for b in h]
        flat_r = [oracle_translate(b, twins.lexicon, "b2a") for _, src in twins.b_functions for b in src]
        report = BleuReport(per, float(np.mean([s for _, s in per])),
                            bleu_score(flat_h, flat_r, smoothing=False))
        write_text(d / "bleu.txt", format_bleu_report(report), mprov)

        scores = score_toy_translation(run)
        sim = toy_similarity(run, seed=seed)
        sim_rows[TOOL_NAMES[mode]] = {"O2": sim.accuracy}
        vuln = toy_vulnerability(run, n_test_benign=vuln_test_benign, seed=seed)
        vuln_rows.append(("O2", "toy", f"Ours ({TOOL_NAMES[mode]})", vuln.metrics))
        summary.append({"mode": mode, "translation": dataclasses.asdict(scores),
                        "similarity": dataclasses.asdict(sim),
                        "vulnerability": dataclasses.asdict(vuln.metrics),
                        "classifier_unchanged": vuln.train_digest == vuln.test_digest,
                        "mapping_converged": run.transform.converged,
                        "skipped_backtranslations": run.model.skipped})

    write_text(out / "funcsim.txt", format_similarity_table(sim_rows), prov)
    write_text(out / "vuln.txt", format_detection_table(vuln_rows), prov)
    write_text(out / "summary.json", json.dumps({"provenance": prov, "runs": summary},
                                                 sort_keys=True, indent=2) + "\n")
    for name in ("stats.txt", "funcsim.txt", "vuln.txt"):
        print((out / name).read_text(encoding="utf-8"), end="")
    return summary
