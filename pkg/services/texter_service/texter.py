#!/usr/bin/env python3.10
"""
Explanation service entry point.

One subcommand per pipeline stage; every stage reads the run document given
by --config, writes its artefacts under the run directory and records them in
``<out>/<stage>/manifest.json``.
"""

import argparse
import sys
import traceback
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import torch

from common_utilities import ConfigError, ConfigManager, LOGGER, LOG_LEVEL, config_help, read_ppm, write_json
from utilities import (
    ALIGNER_FILE,
    CLASSIFIER_FILE,
    EMBEDDER_FILE,
    MULTILABEL_CLASSIFIER_FILE,
    SAE_FILE,
    SCENE_FILE,
    full_system_initialization,
    require_artifact,
    stage_dir,
    write_manifest,
)
from utilities.Datatypes import ExitCode, ExplainMode, FeatureSpace, Stage
from src import ModelsManager
from src.errors import (
    ArtifactIOError,
    BankFormatError,
    MissingArtifactError,
    NumericDivergenceError,
    StageError,
)
from src.ModelsManager import COMPOSITE_SPLIT, TEST_SPLIT, TRAIN_SPLIT
from src.Classification_Task.classifier import ClassifierModel, accuracy, finetune_multilabel_head, images_to_batch, train_classifier
from src.Classification_Task.embedder import JointEmbedder, retrieval_top1, train_embedder
from src.Concept_Task.sae import reconstruction_mse, train_sae
from src.Explanation_Task.alignment import train_aligner
from src.Explanation_Task.conceptbank import load_bank, save_bank
from src.Explanation_Task.explain import export_explanation
from src import evalharness, synthdata

SERVICE_NAME = "Texter"
METHOD_CHOICES = ["texter", "ttc", "text-to-concept", "random"]


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def gen_data(args, config: ConfigManager, logs: LOGGER) -> Dict:
    spec = synthdata.SceneSpec.from_config(config.data)
    data_dir = config.paths.data
    n_train, n_test = config.data.n_train, config.data.n_test
    splits = {
        TRAIN_SPLIT: synthdata.generate(spec, n_train, config.seed),
        TEST_SPLIT: synthdata.generate(spec, n_test, config.seed, start=n_train),
    }
    if config.data.n_composites > 0:
        splits[COMPOSITE_SPLIT] = synthdata.generate_composites(spec, config.data.n_composites, config.seed,
                                                                start=n_train + n_test)
    files: List[Path] = []
    for split, samples in splits.items():
        manifest = synthdata.export_dataset(samples, data_dir / split)
        files.append(manifest)
        files.extend(sorted((data_dir / split / "images").glob("*.ppm")))
        logs.write_logs(f"[gen-data] {split}: {len(samples)} samples -> {data_dir / split}", LOG_LEVEL.INFO)
    bank = synthdata.attribute_bank(spec, config.data.bank_llm_size, config.data.bank_vlm_size, config.seed, logger=logs)
    files.append(save_bank(bank, config.paths.bank))
    scene = data_dir / SCENE_FILE
    write_json(synthdata.spec_summary(spec), scene)
    files.append(scene)
    return {"files": files, "summary": {split: len(samples) for split, samples in splits.items()}
            | {"bank_per_class": bank.size(0)}}


def _split(config: ConfigManager, split: str) -> List[synthdata.Sample]:
    manifest = require_artifact(Stage.GEN_DATA, config.paths.data / split / "manifest.jsonl")
    return synthdata.load_dataset(manifest.parent)


def train_classifier_stage(args, config: ConfigManager, logs: LOGGER) -> Dict:
    train, test = _split(config, TRAIN_SPLIT), _split(config, TEST_SPLIT)
    model, losses = train_classifier(train, config.classifier, config.seed, config.data.n_classes, logger=logs)
    files = [model.save(config.paths.checkpoints / CLASSIFIER_FILE)]
    summary = {"final_loss": losses[-1] if losses else None, "train_accuracy": model.metadata["train_accuracy"],
               "test_accuracy": accuracy(model, test)}
    composites_manifest = config.paths.data / COMPOSITE_SPLIT / "manifest.jsonl"
    if composites_manifest.exists():
        cfg = config.classifier
        tuned, tuned_losses = finetune_multilabel_head(
            model, synthdata.load_dataset(composites_manifest.parent), cfg.multilabel_threshold,
            cfg.multilabel_epochs, cfg.lr, cfg.batch_size, config.seed, logger=logs,
        )
        files.append(tuned.save(config.paths.checkpoints / MULTILABEL_CLASSIFIER_FILE))
        summary["multilabel_final_loss"] = tuned_losses[-1] if tuned_losses else None
    logs.write_logs(f"[train-classifier] test accuracy {summary['test_accuracy']:.4f}", LOG_LEVEL.INFO)
    return {"files": files, "summary": summary}


def train_embedder_stage(args, config: ConfigManager, logs: LOGGER) -> Dict:
    train, test = _split(config, TRAIN_SPLIT), _split(config, TEST_SPLIT)
    bank = load_bank(require_artifact(Stage.GEN_DATA, config.paths.bank), logger=logs)
    bank_texts = [text for class_id in bank.classes() for text in bank.texts(class_id)]
    embedder, losses = train_embedder(train, config.embedder, config.seed, extra_texts=bank_texts, logger=logs)
    phrases = sorted({caption for sample in train for caption in sample.captions})
    summary = {"final_loss": losses[-1] if losses else None, "test_retrieval_top1": retrieval_top1(embedder, test, phrases)}
    logs.write_logs(f"[train-embedder] test retrieval top-1 {summary['test_retrieval_top1']:.4f}", LOG_LEVEL.INFO)
    return {"files": [embedder.save(config.paths.checkpoints / EMBEDDER_FILE)], "summary": summary}


def train_sae_stage(args, config: ConfigManager, logs: LOGGER) -> Dict:
    if not config.sae.enabled:
        logs.write_logs("[train-sae] sae.enabled is false; nothing to train", LOG_LEVEL.WARNING)
        return {"files": [], "summary": {"skipped": True}}
    classifier = ClassifierModel.load(require_artifact(Stage.TRAIN_CLASSIFIER, config.paths.checkpoints / CLASSIFIER_FILE))
    train = _split(config, TRAIN_SPLIT)
    with torch.no_grad():
        features = classifier.features(images_to_batch(train))
    sae, losses = train_sae(features, config.sae, config.seed, logger=logs)
    with torch.no_grad():
        original = classifier.logits_from_features(features).argmax(dim=1)
        rebuilt = classifier.logits_from_features(sae(features)).argmax(dim=1)
    summary = {"final_mse": losses[-1] if losses else None, "reconstruction_mse": reconstruction_mse(sae, features),
               "argmax_agreement": float((original == rebuilt).float().mean()), "k": sae.k, "dict_dim": sae.dict_dim}
    logs.write_logs(f"[train-sae] argmax agreement {summary['argmax_agreement']:.4f}", LOG_LEVEL.INFO)
    return {"files": [sae.save(config.paths.checkpoints / SAE_FILE)], "summary": summary}


def train_aligner_stage(args, config: ConfigManager, logs: LOGGER) -> Dict:
    checkpoints = config.paths.checkpoints
    classifier = ClassifierModel.load(require_artifact(Stage.TRAIN_CLASSIFIER, checkpoints / CLASSIFIER_FILE))
    embedder = JointEmbedder.load(require_artifact(Stage.TRAIN_EMBEDDER, checkpoints / EMBEDDER_FILE))
    aligner = train_aligner(classifier, embedder, _split(config, TRAIN_SPLIT), config.aligner, config.seed, logger=logs)
    return {"files": [aligner.save(checkpoints / ALIGNER_FILE)],
            "summary": {"residual": aligner.residual, "method": aligner.method.value, "fraction": aligner.fraction}}


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def _target_class(args, n_classes: int) -> Optional[int]:
    if args.target_class is None:
        return None
    if not 0 <= args.target_class < n_classes:
        raise ConfigError(f"--class {args.target_class} outside [0, {n_classes})")
    return args.target_class


def explain_stage(args, config: ConfigManager, logs: LOGGER) -> Dict:
    mode = ExplainMode.parse(args.method or config.explain.method)
    manager = ModelsManager(config, logger=logs)
    explainer = manager.explainer(multilabel=args.multilabel)
    target = _target_class(args, manager.classifier.n_classes)
    out = stage_dir(config.paths.out, Stage.EXPLAIN)
    if args.input:
        inputs = [(Path(args.input).stem, read_ppm(args.input), config.seed)]
    else:
        samples = manager.samples(COMPOSITE_SPLIT if args.multilabel else TEST_SPLIT)
        inputs = []
        for position in config.explain.sample_indices:
            if not 0 <= position < len(samples):
                raise ConfigError(f"explain.sample_indices entry {position} outside [0, {len(samples)})")
            sample = samples[position]
            inputs.append((f"{sample.index:05d}", sample.image,
                           evalharness.image_seed(config.seed, sample.index)))
    files, summary = [], {}
    for input_id, image, seed in inputs:
        if args.multilabel and target is None:
            explanations = explainer.explain_multilabel(image, mode, input_id=input_id, seed=seed)
        else:
            explanations = [explainer.explain(mode, image, target_class=target, input_id=input_id, seed=seed)]
        for explanation in explanations:
            stem = f"{input_id}_{mode.value}_c{explanation.target_class}"
            files.append(export_explanation(explanation, out, stem))
            if explanation.concept_image_path:
                files.extend([out / explanation.concept_image_path, out / f"{stem}_concept.json"])
            summary[stem] = explanation.texts
            logs.write_logs(f"[explain] {stem}: {', '.join(explanation.texts)}", LOG_LEVEL.INFO)
    return {"files": files, "summary": summary}


def evaluate_stage(args, config: ConfigManager, logs: LOGGER) -> Dict:
    manager = ModelsManager(config, logger=logs)
    test = manager.samples(TEST_SPLIT)[: config.evaluate.n_samples]
    names = manager.class_names()
    spaces = [FeatureSpace.RAW] + ([FeatureSpace.SAE] if manager.sae is not None else [])
    out = stage_dir(config.paths.out, Stage.EVALUATE)
    files, reports = [], []
    for space in spaces:
        explainer = manager.explainer(space)

        def concept_for(sample):
            explanation = explainer.explain_texter(sample.image, input_id=f"{sample.index:05d}",
                                                   seed=evalharness.image_seed(config.seed, sample.index))
            score = evalharness.clipscore_analog(manager.embedder, explanation.concept_image.pixels,
                                                 names[explanation.target_class], explanation.texts)
            return (sample.image, explanation.concept_image.pixels, explanation.target_class), score

        results = evalharness.ordered_map(concept_for, test, config.threads)
        report = evalharness.validity_metrics(
            manager.classifier, [triple for triple, _ in results], space=space.value, threads=config.threads,
            resamples=config.evaluate.bootstrap_resamples, seed=config.seed, logger=logs,
        )
        report.clipscore_concept = sum(score for _, score in results) / len(results)
        report.config = config.describe()
        path = out / f"validity_{space.value}.json"
        write_json(report.to_dict(), path)
        files.append(path)
        reports.append(report)
        logs.write_logs(f"[evaluate] {space.value}: Acc1 {report.acc1:.3f} Acc{report.topk} {report.acck:.3f} "
                        f"R_conf {report.r_conf:.3f} Cos {report.cos:.3f}", LOG_LEVEL.INFO)
    files.append(evalharness.write_table(evalharness.validity_table(reports), out / "validity.csv"))
    return {"files": files, "summary": {r.space: {"acc1": r.acc1, "acck": r.acck} for r in reports}}


def bench_stage(args, config: ConfigManager, logs: LOGGER) -> Dict:
    manager = ModelsManager(config, logger=logs)
    test = manager.samples(TEST_SPLIT)[: config.benchmark.n_images]
    methods = [args.method] if args.method else list(config.benchmark.methods)
    report = evalharness.faithfulness_benchmark(
        manager.explainer(), test, manager.bank, manager.class_names(), methods=methods, seed=config.seed,
        k_con=config.explain.k_con, resamples=config.benchmark.bootstrap_resamples, threads=config.threads, logger=logs,
    )
    report.config = config.describe()
    out = stage_dir(config.paths.out, Stage.BENCH_FAITHFULNESS)
    path = out / "faithfulness.json"
    write_json(report.to_dict(), path)
    table = evalharness.write_table(evalharness.faithfulness_table(report), out / "faithfulness.csv")
    return {"files": [path, table],
            "summary": {method: {"causal_hit": s.causal_hit, "distractor_hit": s.distractor_hit}
                        for method, s in report.methods.items()}}


STAGES: Dict[Stage, Callable] = {
    Stage.GEN_DATA: gen_data,
    Stage.TRAIN_CLASSIFIER: train_classifier_stage,
    Stage.TRAIN_EMBEDDER: train_embedder_stage,
    Stage.TRAIN_SAE: train_sae_stage,
    Stage.TRAIN_ALIGNER: train_aligner_stage,
    Stage.EXPLAIN: explain_stage,
    Stage.EVALUATE: evaluate_stage,
    Stage.BENCH_FAITHFULNESS: bench_stage,
}


#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def exit_code_for(exc: BaseException) -> ExitCode:
    if isinstance(exc, StageError):
        return exit_code_for(exc.cause)
    if isinstance(exc, ConfigError):
        return ExitCode.CONFIG
    if isinstance(exc, MissingArtifactError):
        return ExitCode.MISSING_PREREQUISITE
    if isinstance(exc, NumericDivergenceError):
        return ExitCode.NUMERIC
    if isinstance(exc, (ArtifactIOError, BankFormatError, OSError)):
        return ExitCode.IO
    return ExitCode.UNEXPECTED


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="texter",
        description="Concept-image based textual explanations for an image classifier.",
        epilog=config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("stage", choices=[stage.value for stage in Stage], help="pipeline stage to run")
    parser.add_argument("--config", default=None, help="run document (default: config/texter.json)")
    parser.add_argument("--seed", type=int, default=None, help="overrides the document's seed")
    parser.add_argument("--out", default=None, help="run directory (overrides paths.out_dir)")
    parser.add_argument("--class", dest="target_class", type=int, default=None,
                        help="explain this class instead of the prediction")
    parser.add_argument("--method", choices=METHOD_CHOICES, default=None,
                        help="explanation method (explain, bench-faithfulness)")
    parser.add_argument("--threads", type=int, default=None, help="worker cap for per-sample parallelism")
    parser.add_argument("--input", default=None, help="explain this PPM image instead of the test-set indices")
    parser.add_argument("--multilabel", action="store_true",
                        help="explain every class above the multilabel threshold (composite split)")
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    stage = Stage(args.stage)
    try:
        _, logs, config = full_system_initialization(__file__, SERVICE_NAME, args.config, args.seed, args.out, args.threads,
                                                    stage.value)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return int(ExitCode.CONFIG)
    logs.write_logs(f"Stage '{stage.value}' started", LOG_LEVEL.INFO)
    try:
        result = STAGES[stage](args, config, logs)
        write_manifest(config.paths.out, stage, result["files"], config.describe(), result["summary"], logger=logs)
    except Exception as e:
        code = exit_code_for(e)
        cause = e.cause if isinstance(e, StageError) else e
        logs.write_logs(f"Stage '{stage.value}' failed ({code.name}): {cause}", LOG_LEVEL.ERROR)
        if code is ExitCode.UNEXPECTED:
            logs.write_logs(f"Traceback: {traceback.format_exc()}", LOG_LEVEL.CRITICAL)
        logs.close()
        return int(code)
    logs.write_logs(f"Stage '{stage.value}' finished", LOG_LEVEL.INFO)
    logs.close()
    return int(ExitCode.OK)


if __name__ == "__main__":
    sys.exit(main())
