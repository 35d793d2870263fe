#!/usr/bin/env python3.10
"""
Concept-image validity metrics, the joint-space CLIP-Score analogue and the
synthetic faithfulness benchmark.

Per-sample work runs on a thread pool; results are collected in input order so
aggregates never depend on scheduling.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from common_utilities import LOGGER, LOG_LEVEL, ensure_dir, resolve_logger
from utilities.Datatypes import BankFlag, ExplainMode
from utilities.request_models import (
    BenchmarkImageRecord,
    FaithfulnessReport,
    MethodScores,
    ValidityReport,
    ValiditySampleRecord,
)

from .Classification_Task.classifier import images_to_batch
from .Classification_Task.embedder import embed_images, embed_texts
from .Explanation_Task.conceptbank import ConceptBank
from .numerics import DTYPE
from .synthdata import splitmix64, MASK64

MIN_BENCHMARK_IMAGES = 50
T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> List[R]:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def bootstrap_ci(values: Sequence[float], resamples: int = 1000, seed: int = 0,
                 level: float = 0.95) -> Tuple[float, float]:
    """Percentile bootstrap interval of the mean."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return (float("nan"), float("nan"))
    rng = np.random.Generator(np.random.PCG64(seed))
    means = values[rng.integers(0, values.size, size=(resamples, values.size))].mean(axis=1)
    tail = (1.0 - level) / 2.0 * 100.0
    return float(np.percentile(means, tail)), float(np.percentile(means, 100.0 - tail))


def topk_size(n_classes: int) -> int:
    return 5 if n_classes >= 5 else math.ceil(n_classes / 2)


def image_seed(seed: int, index: int) -> int:
    """Per-image seed shared by every method of a benchmark run (fits in 63 bits)."""
    return splitmix64(((seed & MASK64) * 0x100000001B3 + index) & MASK64) >> 1


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
@torch.no_grad()
def _validity_record(classifier, k: int, item) -> ValiditySampleRecord:
    index, (original, concept, target) = item
    logits = classifier(images_to_batch([original, concept])).to(DTYPE)
    original_logits, concept_logits = logits[0], logits[1]
    original_conf = torch.softmax(original_logits, dim=0)[target]
    concept_conf = torch.softmax(concept_logits, dim=0)[target]
    top = torch.sort(concept_logits, descending=True, stable=True).indices[:k].tolist()
    return ValiditySampleRecord(
        index=index,
        class_id=int(target),
        predicted=top[0],
        top1=top[0] == target,
        topk=target in top,
        r_conf=float(concept_conf / original_conf) if float(original_conf) > 0.0 else None,
        cos=float(F.cosine_similarity(original_logits, concept_logits, dim=0)),
    )


def validity_metrics(classifier, triples: Sequence[Tuple[np.ndarray, np.ndarray, int]], space: str = "raw",
                     threads: int = 1, resamples: int = 1000, seed: int = 0,
                     logger: Union[LOGGER, str, None] = None) -> ValidityReport:
    """Acc_1, Acc_k, R_conf and logit cosine of concept images against their originals."""
    logs = resolve_logger(logger)
    if not triples:
        raise ValueError("validity_metrics needs at least one (original, concept, class) triple")
    k = topk_size(classifier.n_classes)
    records = ordered_map(lambda item: _validity_record(classifier, k, item), list(enumerate(triples)), threads)
    ratios = [r.r_conf for r in records if r.r_conf is not None]
    excluded = len(records) - len(ratios)
    if excluded:
        logs.write_logs(f"R_conf: excluded {excluded} sample(s) with zero original confidence", LOG_LEVEL.WARNING)
    top1 = [float(r.top1) for r in records]
    header = f"Acc_{k} replaces Acc_5 (C={classifier.n_classes})" if k != 5 else ""
    return ValidityReport(
        space=space, n=len(records), topk=k,
        acc1=float(np.mean(top1)), acck=float(np.mean([float(r.topk) for r in records])),
        r_conf=float(np.mean(ratios)) if ratios else float("nan"), r_conf_excluded=excluded,
        cos=float(np.mean([r.cos for r in records])),
        acc1_ci=list(bootstrap_ci(top1, resamples, seed)),
        header=header, records=records,
    )


@torch.no_grad()
def clipscore_analog(embedder, image: np.ndarray, class_name: str, texts: Sequence[str]) -> float:
    """cos(E_img(image), E_text("a photo of <class> showing t1, t2, ...")); bare descriptions when no class."""
    if not texts:
        raise ValueError("clipscore_analog needs at least one description")
    joined = ", ".join(texts)
    prompt = f"a photo of {class_name} showing {joined}" if class_name else joined
    image_vec = embed_images(embedder, image)[0].to(DTYPE)
    text_vec = embed_texts(embedder, [prompt])[0].to(DTYPE)
    return float(F.cosine_similarity(image_vec, text_vec, dim=0))


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def _rank_of(texts: Sequence[str], targets: Sequence[str]) -> Optional[int]:
    for position, text in enumerate(texts, start=1):
        if text in targets:
            return position
    return None


def _rate(values: List[float], resamples: int, seed: int) -> Tuple[float, List[float]]:
    return float(np.mean(values)), list(bootstrap_ci(values, resamples, seed))


def faithfulness_benchmark(explainer, samples: Sequence, bank: ConceptBank, class_names: Sequence[str],
                           methods: Sequence[str] = ("texter", "text-to-concept", "random"),
                           seed: int = 0, k_con: int = 3, resamples: int = 1000, threads: int = 1,
                           logger: Union[LOGGER, str, None] = None) -> FaithfulnessReport:
    """Hit rates of the causal and distractor phrases among each method's explanations.

    Every method sees the same images, per-image seeds and bank slices. Hits
    are read from ``bank``'s causal/distractor flags for the explained class.
    """
    logs = resolve_logger(logger)
    if len(samples) < MIN_BENCHMARK_IMAGES:
        logs.write_logs(f"Benchmark on {len(samples)} images (< {MIN_BENCHMARK_IMAGES}): intervals will be wide", LOG_LEVEL.WARNING)
    modes = [ExplainMode.parse(m) for m in methods]

    def run_image(sample) -> List[Tuple[ExplainMode, BenchmarkImageRecord, float, Optional[float]]]:
        per_image_seed = image_seed(seed, sample.index)
        target = explainer.predicted_class(sample.image)
        full = len(explainer.bank_slice([target]))
        rows = []
        for mode in modes:
            explanation = explainer.explain(mode, sample.image, target_class=target, input_id=str(sample.index),
                                            seed=per_image_seed, k_con=full)
            ranking = explanation.texts
            top = ranking[:k_con]
            name = class_names[target] if target < len(class_names) else ""
            original_score = clipscore_analog(explainer.embedder, sample.image, name, top)
            concept_score = None
            if explanation.concept_image is not None:
                concept_score = clipscore_analog(explainer.embedder, explanation.concept_image.pixels, name, top)
            record = BenchmarkImageRecord(
                index=sample.index, method=mode.value, class_id=target, seed=per_image_seed, top=top,
                causal_rank=_rank_of(ranking, bank.flagged(target, BankFlag.CAUSAL.value)),
            )
            rows.append((mode, record, original_score, concept_score))
        return rows

    logs.write_logs(f"Faithfulness benchmark: {len(samples)} images x {len(modes)} methods", LOG_LEVEL.INFO)
    per_image = ordered_map(run_image, list(samples), threads)
    records = [row[1] for rows in per_image for row in rows]
    scores: Dict[str, MethodScores] = {}
    slice_sizes = []
    for mode in modes:
        rows = [row for rows in per_image for row in rows if row[0] is mode]
        causal, distractor, causal_k, distractor_k, ranks = [], [], [], [], []
        for _, record, _, _ in rows:
            causal_set = bank.flagged(record.class_id, BankFlag.CAUSAL.value)
            distractor_set = bank.flagged(record.class_id, BankFlag.DISTRACTOR.value)
            causal.append(float(record.top[0] in causal_set))
            distractor.append(float(record.top[0] in distractor_set))
            causal_k.append(float(any(t in causal_set for t in record.top)))
            distractor_k.append(float(any(t in distractor_set for t in record.top)))
            if record.causal_rank is not None:
                ranks.append(record.causal_rank)
            if mode is modes[0]:
                slice_sizes.append(bank.size(record.class_id))
        causal_rate, causal_ci = _rate(causal, resamples, seed)
        distractor_rate, distractor_ci = _rate(distractor, resamples, seed)
        causal_k_rate, causal_k_ci = _rate(causal_k, resamples, seed)
        concept_scores = [row[3] for row in rows if row[3] is not None]
        scores[mode.value] = MethodScores(
            causal_hit=causal_rate, causal_hit_ci=causal_ci,
            distractor_hit=distractor_rate, distractor_hit_ci=distractor_ci,
            causal_topk_hit=causal_k_rate, causal_topk_hit_ci=causal_k_ci,
            distractor_topk_hit=float(np.mean(distractor_k)),
            mean_causal_rank=float(np.mean(ranks)) if ranks else None,
            clipscore_original=float(np.mean([row[2] for row in rows])),
            clipscore_concept=float(np.mean(concept_scores)) if concept_scores else None,
        )
        logs.write_logs(f"[{mode.value}] causal hit {causal_rate:.3f} {causal_ci}, distractor hit {distractor_rate:.3f}", LOG_LEVEL.INFO)
    bank_size = float(np.mean(slice_sizes)) if slice_sizes else 0.0
    return FaithfulnessReport(
        n_images=len(samples), k_con=k_con, bank_size=bank_size, seed=seed, resamples=resamples,
        methods=scores, random_expected_topk=(k_con / bank_size) if bank_size else 0.0, records=records,
    )


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def validity_table(reports: Sequence[ValidityReport]) -> pd.DataFrame:
    rows = [{"space": r.space, "n": r.n, "Acc1": r.acc1, f"Acc{r.topk}": r.acck, "R_conf": r.r_conf,
             "Cos": r.cos, "LPIPS": r.lpips} for r in reports]
    return pd.DataFrame(rows)


def faithfulness_table(report: FaithfulnessReport) -> pd.DataFrame:
    rows = []
    for method, s in report.methods.items():
        rows.append({
            "method": method, "causal_hit": s.causal_hit, "causal_ci_low": s.causal_hit_ci[0],
            "causal_ci_high": s.causal_hit_ci[1], "distractor_hit": s.distractor_hit,
            "causal_topk_hit": s.causal_topk_hit, "mean_causal_rank": s.mean_causal_rank,
            "clipscore_original": s.clipscore_original, "clipscore_concept": s.clipscore_concept,
            "FS": report.fs,
        })
    return pd.DataFrame(rows)


def write_table(table: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    table.to_csv(path, index=False, float_format="%.6f")
    return path
