"""Experiment driver: multi-cycle selection loops over strategies and seeds.

Each (config, seed) pair is fully deterministic: every random draw comes
from a stream keyed by the seed and a fixed purpose tag, so reports are
byte-identical across runs and an interrupted run resumed from its
checkpoint reproduces the uninterrupted output. Wall-clock timings go to a
sidecar file that is excluded from that guarantee.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import formats
from .baselines import ImageFeature, coreset_images, entropy_images, random_images
from .datamodel import (
    CycleReport,
    GroundTruthObject,
    ImageStatus,
    PoolImage,
    PoolState,
    apply_image_labels,
    apply_query_results,
)
from .errors import CheckpointMismatchError, ConfigError, ParseError
from .sampler import Oracle, SamplerConfig, run_cycle
from .scoring import ScoringConfig
from .surrogate import SurrogateConfig, TrainingExample, evaluate, init_model, train
from .synth import GenConfig, NoiseConfig, gen_pool

OBJECT_STRATEGIES = ("mus_cdb", "mus_only", "cdb_only")
IMAGE_STRATEGIES = ("random", "entropy", "coreset")
STRATEGIES = OBJECT_STRATEGIES + IMAGE_STRATEGIES

_SPLIT_STREAM = 1  # matches the synthetic generator's split stream
_BASELINE_STREAM = 1001

RNG_SCHEME = "seed-sequence streams v1"


@dataclass(frozen=True)
class DotaSource:
    """Real-data pool: DOTA annotations plus detector predictions."""

    annotations_dir: str
    predictions_path: str
    class_list: tuple[str, ...]
    image_features_path: str | None = None
    initial_labeled_fraction: float = 0.05

    def __post_init__(self):
        if not self.class_list:
            raise ConfigError("dota source needs a class list")
        if not 0.0 <= self.initial_labeled_fraction <= 1.0:
            raise ConfigError("initial_labeled_fraction must be in [0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: str
    cycles: int
    seeds: tuple[int, ...]
    output_dir: str
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(budget=100))
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    synthetic: GenConfig | None = None
    dota: DotaSource | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"unknown strategy {self.strategy!r}; expected one of {', '.join(STRATEGIES)}"
            )
        if self.cycles < 1:
            raise ConfigError("cycles must be >= 1")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if (self.synthetic is None) == (self.dota is None):
            raise ConfigError("exactly one pool source (synthetic or dota) is required")


def config_to_dict(config: ExperimentConfig) -> dict:
    """Canonical dict form (insertion order fixed; drives the digest)."""
    out: dict = {
        "strategy": config.strategy,
        "cycles": config.cycles,
        "seeds": list(config.seeds),
        "scoring": {
            "theta": config.scoring.theta,
            "empty_confident_set_value": config.scoring.empty_confident_set_value,
        },
        "sampler": {
            "budget": config.sampler.budget,
            "suppression_iou": config.sampler.suppression_iou,
            "min_match_iou": config.sampler.min_match_iou,
            "charge_background_queries": config.sampler.charge_background_queries,
            "second_pass_ignore_class": config.sampler.second_pass_ignore_class,
            "match_difficult": config.sampler.match_difficult,
        },
        "surrogate": {
            "steps": config.surrogate.steps,
            "learning_rate": config.surrogate.learning_rate,
            "l2": config.surrogate.l2,
        },
    }
    if config.synthetic is not None:
        g = config.synthetic
        out["pool"] = {
            "synthetic": {
                "num_classes": g.num_classes,
                "num_images": g.num_images,
                "objects_per_image": list(g.objects_per_image),
                "class_frequency_exponent": g.class_frequency_exponent,
                "scene_size": g.scene_size,
                "box_size_range": list(g.box_size_range),
                "noise": {
                    "prob_temperature": g.noise.prob_temperature,
                    "confusion_rate": g.noise.confusion_rate,
                    "box_jitter_sigma": g.noise.box_jitter_sigma,
                    "false_positive_rate": g.noise.false_positive_rate,
                    "miss_rate": g.noise.miss_rate,
                },
                "feature_dim": g.feature_dim,
                "feature_separation": g.feature_separation,
                "initial_labeled_fraction": g.initial_labeled_fraction,
            }
        }
    else:
        d = config.dota
        out["pool"] = {
            "dota": {
                "annotations_dir": d.annotations_dir,
                "predictions_path": d.predictions_path,
                "class_list": list(d.class_list),
                "image_features_path": d.image_features_path,
                "initial_labeled_fraction": d.initial_labeled_fraction,
            }
        }
    return out


def config_from_dict(raw: dict, output_dir: str) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from parsed JSON."""
    try:
        scoring_raw = raw.get("scoring", {})
        sampler_raw = raw.get("sampler", {})
        surrogate_raw = raw.get("surrogate", {})
        pool_raw = raw.get("pool", {})
        synthetic = None
        dota = None
        if "synthetic" in pool_raw:
            s = dict(pool_raw["synthetic"])
            noise = NoiseConfig(**s.pop("noise", {}))
            if "objects_per_image" in s:
                s["objects_per_image"] = tuple(s["objects_per_image"])
            if "box_size_range" in s:
                s["box_size_range"] = tuple(s["box_size_range"])
            synthetic = GenConfig(noise=noise, **s)
        if "dota" in pool_raw:
            d = dict(pool_raw["dota"])
            d["class_list"] = tuple(d.get("class_list", ()))
            dota = DotaSource(**d)
        return ExperimentConfig(
            strategy=raw["strategy"],
            cycles=int(raw["cycles"]),
            seeds=tuple(int(s) for s in raw["seeds"]),
            output_dir=output_dir,
            scoring=ScoringConfig(**scoring_raw),
            sampler=SamplerConfig(**sampler_raw),
            surrogate=SurrogateConfig(**surrogate_raw),
            synthetic=synthetic,
            dota=dota,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment config: {exc}")


def config_digest(config: ExperimentConfig) -> str:
    """Digest of the experiment semantics (excludes the output location)."""
    payload = config_to_dict(config)
    return hashlib.sha256(formats.dumps(payload).encode()).hexdigest()[:16]


def rng_digest(seed: int) -> str:
    payload = {"seed": seed, "scheme": RNG_SCHEME}
    return hashlib.sha256(formats.dumps(payload).encode()).hexdigest()[:16]


def kl_to_uniform(histogram: Sequence[int]) -> float:
    """KL divergence (nats) from a count histogram to the uniform law."""
    total = sum(histogram)
    if total <= 0:
        raise ValueError("histogram has no mass")
    if any(h < 0 for h in histogram):
        raise ValueError("histogram counts must be non-negative")
    num_classes = len(histogram)
    kl = 0.0
    for h in histogram:
        if h > 0:
            p = h / total
            kl += p * math.log(p * num_classes)
    return kl


@dataclass
class ExperimentData:
    """Everything one seeded experiment runs on."""

    pool: PoolState
    oracle: Oracle
    gt_by_image: dict[int, list[GroundTruthObject]]
    initial_labeled_ids: list[int]
    object_features: dict[int, np.ndarray] | None = None
    pred_features: dict[int, tuple[float, ...]] | None = None
    image_features: list[ImageFeature] | None = None
    feature_dim: int | None = None

    @property
    def has_surrogate_features(self) -> bool:
        return self.object_features is not None


def build_experiment_data(config: ExperimentConfig, seed: int) -> ExperimentData:
    if config.synthetic is not None:
        bundle = gen_pool(replace(config.synthetic, seed=seed))
        return ExperimentData(
            pool=bundle.pool,
            oracle=Oracle(bundle.gt_by_image, config.sampler),
            gt_by_image=bundle.gt_by_image,
            initial_labeled_ids=bundle.initial_labeled_ids,
            object_features=bundle.object_features,
            pred_features=bundle.pred_features,
            image_features=bundle.image_features,
            feature_dim=bundle.config.feature_dim,
        )
    return _build_dota_data(config, seed)


def _build_dota_data(config: ExperimentConfig, seed: int) -> ExperimentData:
    source = config.dota
    ann_dir = Path(source.annotations_dir)
    files = sorted(ann_dir.glob("*.txt"))
    if not files:
        raise ConfigError(f"no annotation files in {ann_dir}")
    class_list = list(source.class_list)
    gt_by_image: dict[int, list[GroundTruthObject]] = {}
    for image_id, path in enumerate(files):
        try:
            gt_by_image[image_id] = formats.parse_dota_file(path.read_text(), class_list)
        except ParseError as exc:
            raise ParseError(f"{path.name}: {exc}", line=exc.line)
    predictions = formats.load_predictions(Path(source.predictions_path).read_text())
    images = {i: PoolImage(i, []) for i in gt_by_image}
    for pred in predictions:
        if pred.image_id not in images:
            raise ConfigError(
                f"prediction references image {pred.image_id}, "
                f"but only {len(files)} annotation files exist"
            )
        images[pred.image_id].predictions.append(pred)

    split_rng = np.random.default_rng(np.random.SeedSequence((seed, _SPLIT_STREAM)))
    n = len(files)
    n_labeled = int(math.floor(source.initial_labeled_fraction * n + 0.5))
    initial_ids = sorted(int(i) for i in split_rng.permutation(n)[:n_labeled])
    for image_id in initial_ids:
        images[image_id].status = ImageStatus.FULLY_LABELED
        images[image_id].labeled_objects = list(gt_by_image[image_id])
        for gt in gt_by_image[image_id]:
            gt.labeled = True

    image_features = None
    if source.image_features_path is not None:
        image_features = formats.read_image_features(
            Path(source.image_features_path).read_text()
        )
    pool = PoolState(images, len(class_list))
    return ExperimentData(
        pool=pool,
        oracle=Oracle(gt_by_image, config.sampler),
        gt_by_image=gt_by_image,
        initial_labeled_ids=initial_ids,
        image_features=image_features,
    )


# ---------------------------------------------------------------------------
# Surrogate plumbing


def surrogate_examples(data: ExperimentData) -> list[TrainingExample]:
    """Training set from everything the oracle has revealed so far.

    Objects on fully labeled images and matched queries are weight-1
    positives; background queries are negatives weighted by the queried
    prediction's background score.
    """
    pool = data.pool
    num_classes = pool.num_classes
    examples: list[TrainingExample] = []
    for image_id in sorted(pool.images):
        img = pool.images[image_id]
        if img.status != ImageStatus.FULLY_LABELED:
            continue
        feats = data.object_features[image_id]
        for gt in img.labeled_objects:
            examples.append(TrainingExample(tuple(feats[gt.gt_id]), gt.class_id, 1.0))
    preds_by_id = {
        p.pred_id: p for img in pool.images.values() for p in img.predictions
    }
    for result in pool.partial_labels:
        if result.matched:
            feats = data.object_features[result.image_id]
            examples.append(
                TrainingExample(tuple(feats[result.gt_id]), result.class_id, 1.0)
            )
        else:
            mu = preds_by_id[result.pred_id].background_score
            examples.append(
                TrainingExample(data.pred_features[result.pred_id], num_classes, mu)
            )
    return examples


def surrogate_heldout(data: ExperimentData) -> tuple[np.ndarray, np.ndarray]:
    """Held-out set: every ground-truth object in the pool."""
    rows = []
    labels = []
    for image_id in sorted(data.gt_by_image):
        feats = data.object_features[image_id]
        for gt in data.gt_by_image[image_id]:
            rows.append(feats[gt.gt_id])
            labels.append(gt.class_id)
    return np.array(rows), np.array(labels)


def _surrogate_metrics(data: ExperimentData, config: ExperimentConfig):
    if not data.has_surrogate_features:
        return None, (None,) * data.pool.num_classes
    examples = surrogate_examples(data)
    model = init_model(data.pool.num_classes, data.feature_dim)
    if examples and config.surrogate.steps > 0:
        model = train(model, examples, config.surrogate)
    features, labels = surrogate_heldout(data)
    report = evaluate(model, features, labels)
    return report.macro_recall, report.per_class_recall


# ---------------------------------------------------------------------------
# Cycle execution


def _baseline_rng(seed: int, cycle: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, _BASELINE_STREAM, cycle)))


def _run_object_cycle(config, data, cycle):
    strategy = config.strategy
    results, stats, _ = run_cycle(
        data.pool,
        data.oracle,
        config.scoring,
        config.sampler,
        cycle=cycle,
        use_class_budgets=strategy in ("mus_cdb", "cdb_only"),
        image_uncertainty_override=1.0 if strategy == "cdb_only" else None,
    )
    return results, stats


def _run_image_cycle(config, data, seed, cycle):
    pool = data.pool
    strategy = config.strategy
    counts = data.oracle.object_counts()
    budget = config.sampler.budget
    if strategy == "random":
        selection = random_images(pool, counts, budget, _baseline_rng(seed, cycle))
    elif strategy == "entropy":
        selection = entropy_images(pool, counts, budget)
    else:
        if data.image_features is None:
            raise ConfigError("coreset strategy needs image features")
        by_id = {f.image_id: f for f in data.image_features}
        labeled = [
            by_id[i]
            for i in sorted(by_id)
            if pool.images[i].status == ImageStatus.FULLY_LABELED
        ]
        unlabeled = [
            by_id[i]
            for i in sorted(by_id)
            if pool.images[i].status == ImageStatus.UNLABELED
        ]
        selection = coreset_images(labeled, unlabeled, counts, budget)
    queried = [0] * pool.num_classes
    for image_id in selection.image_ids:
        objects = data.oracle.label_image(image_id)
        apply_image_labels(pool, image_id, objects)
        for gt in objects:
            queried[gt.class_id] += 1
    return selection, tuple(queried)


def run_cycle_for_strategy(
    config, data, seed, cycle
) -> tuple[CycleReport, tuple[int, ...] | None]:
    """One cycle of the configured strategy.

    Returns the report plus, for image-based strategies, the image ids
    labeled this cycle (for the per-cycle artifact file).
    """
    digest = config_digest(config)
    start = time.perf_counter()
    selected_images = None
    if config.strategy in OBJECT_STRATEGIES:
        results, stats = _run_object_cycle(config, data, cycle)
        queried = stats.matched_per_class
        spent, unspent = stats.charged, stats.unspent
        overshoot = 0
        background = stats.background_queries
        open_class = stats.open_class_candidates
        phi_min, phi_median, phi_max = stats.phi_min, stats.phi_median, stats.phi_max
    else:
        selection, queried = _run_image_cycle(config, data, seed, cycle)
        selected_images = selection.image_ids
        spent = selection.charged
        unspent = max(0, config.sampler.budget - selection.charged)
        overshoot = selection.overshoot
        background = 0
        open_class = False
        phi_min = phi_median = phi_max = None
    macro_recall, per_class_recall = _surrogate_metrics(data, config)
    total_queried = sum(queried)
    kl = kl_to_uniform(queried) if total_queried > 0 else None
    report = CycleReport(
        seed=seed,
        cycle=cycle,
        strategy=config.strategy,
        theta=config.scoring.theta,
        queried_per_class=tuple(queried),
        kl_to_uniform=kl,
        budget_spent=spent,
        budget_unspent=unspent,
        overshoot=overshoot,
        background_queries=background,
        open_class_candidates=open_class,
        phi_min=phi_min,
        phi_median=phi_median,
        phi_max=phi_max,
        macro_recall=macro_recall,
        per_class_recall=per_class_recall,
        config_digest=digest,
        wall_time_s=time.perf_counter() - start,
    )
    return report, selected_images


# ---------------------------------------------------------------------------
# Seed-level driver with checkpointing


def _seed_dir(config: ExperimentConfig, seed: int) -> Path:
    return Path(config.output_dir) / f"seed_{seed}"


def _write_cycle_artifacts(config, data, seed, cycle, reports, selected_images):
    seed_dir = _seed_dir(config, seed)
    seed_dir.mkdir(parents=True, exist_ok=True)
    pool = data.pool
    if config.strategy in OBJECT_STRATEGIES:
        cycle_results = [r for r in pool.partial_labels if r.cycle == cycle]
        (seed_dir / f"cycle_{cycle}_results.jsonl").write_text(
            formats.write_query_results(cycle_results)
        )
    else:
        lines = ["image_id,objects_labeled"]
        lines += [f"{i},{len(data.gt_by_image[i])}" for i in selected_images]
        (seed_dir / f"cycle_{cycle}_images.csv").write_text("\n".join(lines) + "\n")
    (seed_dir / "reports.csv").write_text(
        formats.write_cycle_reports(reports, pool.num_classes)
    )
    (seed_dir / "checkpoint.json").write_text(
        formats.checkpoint_text(
            pool,
            seed=seed,
            completed_cycles=cycle + 1,
            config_digest=config_digest(config),
            rng_digest=rng_digest(seed),
        )
    )
    with (seed_dir / "timings.csv").open("a") as sidecar:
        sidecar.write(f"{cycle},{reports[-1].wall_time_s:.6f}\n")


def _restore_from_checkpoint(config, data, seed) -> tuple[int, list[CycleReport]]:
    seed_dir = _seed_dir(config, seed)
    checkpoint_path = seed_dir / "checkpoint.json"
    if not checkpoint_path.exists():
        return 0, []
    state = formats.parse_checkpoint(checkpoint_path.read_text())
    if state["config_digest"] != config_digest(config):
        raise CheckpointMismatchError(
            "checkpoint belongs to a different experiment configuration"
        )
    if state["seed"] != seed:
        raise CheckpointMismatchError(
            f"checkpoint seed {state['seed']} does not match {seed}"
        )
    pool = data.pool
    for image_id, status in state["statuses"].items():
        if (
            status == ImageStatus.FULLY_LABELED.value
            and image_id not in data.initial_labeled_ids
        ):
            objects = data.oracle.label_image(image_id)
            apply_image_labels(pool, image_id, objects)
    for result in state["partial_labels"]:
        if result.matched:
            for gt in data.gt_by_image[result.image_id]:
                if gt.gt_id == result.gt_id:
                    gt.labeled = True
    apply_query_results(pool, state["partial_labels"])
    if pool.class_counts != state["class_counts"]:
        raise CheckpointMismatchError("restored class counts disagree with checkpoint")
    if sorted(pool.consumed_pred_ids) != state["consumed_pred_ids"]:
        raise CheckpointMismatchError("restored consumed ids disagree with checkpoint")
    reports = formats.read_cycle_reports((seed_dir / "reports.csv").read_text())
    return state["completed_cycles"], reports


def run_seed(
    config: ExperimentConfig,
    seed: int,
    *,
    resume: bool = False,
    stop_after: int | None = None,
) -> list[CycleReport]:
    data = build_experiment_data(config, seed)
    completed = 0
    reports: list[CycleReport] = []
    if resume:
        completed, reports = _restore_from_checkpoint(config, data, seed)
    for cycle in range(completed, config.cycles):
        report, selected_images = run_cycle_for_strategy(config, data, seed, cycle)
        reports.append(report)
        _write_cycle_artifacts(config, data, seed, cycle, reports, selected_images)
        if stop_after is not None and cycle + 1 >= stop_after:
            break
    return reports


def run_experiment(
    config: ExperimentConfig,
    *,
    resume: bool = False,
    stop_after: int | None = None,
) -> list[CycleReport]:
    """Run every seed of an experiment and write all artifacts."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_text = formats.dumps(config_to_dict(config)) + "\n"
    config_path = out / "config.json"
    if config_path.exists() and config_path.read_text() != config_text:
        if not resume:
            raise ConfigError(
                f"{config_path} already holds a different configuration"
            )
        raise CheckpointMismatchError(
            f"{config_path} does not match the configuration being resumed"
        )
    config_path.write_text(config_text)
    all_reports: list[CycleReport] = []
    for seed in config.seeds:
        seed_reports = run_seed(config, seed, resume=resume, stop_after=stop_after)
        all_reports.extend(seed_reports)
    if config.synthetic is not None:
        num_classes = config.synthetic.num_classes
    else:
        num_classes = len(config.dota.class_list)
    (out / "reports.csv").write_text(
        formats.write_cycle_reports(all_reports, num_classes)
    )
    return all_reports


# ---------------------------------------------------------------------------
# Studies


def theta_sweep(
    config: ExperimentConfig, thetas: Sequence[float] = (0.05, 0.10, 0.15)
) -> list[CycleReport]:
    """Rerun the experiment across confidence thresholds, seeds held fixed."""
    if len(thetas) < 2:
        raise ConfigError("theta sweep needs at least two threshold values")
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_reports: list[CycleReport] = []
    for theta in thetas:
        sub = replace(
            config,
            scoring=replace(config.scoring, theta=theta),
            output_dir=str(out / f"theta_{formats.format_float(theta)}"),
        )
        all_reports.extend(run_experiment(sub))
    lines = ["theta,seed,cycle,macro_recall"]
    for report in all_reports:
        recall = "" if report.macro_recall is None else formats.format_float(report.macro_recall)
        lines.append(
            f"{formats.format_float(report.theta)},{report.seed},{report.cycle},{recall}"
        )
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    return all_reports


def compare_runs(output_dirs: Sequence[str]) -> str:
    """Cross-strategy table: per-cycle means and sign tests vs the first run.

    Emits one row per (run, cycle) with seed-averaged macro recall and KL,
    plus win/tie/loss counts of macro recall against the first directory's
    run on matching seeds.
    """
    runs = []
    for out_dir in output_dirs:
        path = Path(out_dir)
        report_files = sorted(path.glob("seed_*/reports.csv"))
        if not report_files:
            raise ConfigError(f"no seed reports under {out_dir}")
        reports: list[CycleReport] = []
        for file in report_files:
            reports.extend(formats.read_cycle_reports(file.read_text()))
        runs.append((path.name, reports))

    def by_cycle(reports):
        grouped: dict[int, list[CycleReport]] = {}
        for r in reports:
            grouped.setdefault(r.cycle, []).append(r)
        return grouped

    reference_name, reference_reports = runs[0]
    reference = {
        (r.cycle, r.seed): r.macro_recall for r in reference_reports
    }
    lines = [
        "run,strategy,cycle,seeds,mean_macro_recall,mean_kl_to_uniform,"
        f"mean_budget_spent,wins_vs_{reference_name},ties_vs_{reference_name},"
        f"losses_vs_{reference_name}"
    ]
    for name, reports in runs:
        for cycle, rows in sorted(by_cycle(reports).items()):
            rows = sorted(rows, key=lambda r: r.seed)
            strategy = rows[0].strategy
            recalls = [r.macro_recall for r in rows if r.macro_recall is not None]
            kls = [r.kl_to_uniform for r in rows if r.kl_to_uniform is not None]
            spends = [r.budget_spent for r in rows]
            wins = ties = losses = 0
            for r in rows:
                ref = reference.get((r.cycle, r.seed))
                if ref is None or r.macro_recall is None:
                    continue
                if r.macro_recall > ref:
                    wins += 1
                elif r.macro_recall == ref:
                    ties += 1
                else:
                    losses += 1
            mean = lambda vals: formats.format_float(math.fsum(vals) / len(vals)) if vals else ""
            lines.append(
                f"{name},{strategy},{cycle},{len(rows)},{mean(recalls)},{mean(kls)},"
                f"{mean([float(s) for s in spends])},{wins},{ties},{losses}"
            )
    return "\n".join(lines) + "\n"
