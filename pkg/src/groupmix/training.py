"""Two-stage noise-robust training plus the plain supervised baselines.

Stage 1 (warm-up) optimizes only the contrastive objective over strong-view
pairs: batches come from the label-free plain sampler, and only encoder and
projection parameters receive gradients, so given labels cannot influence
this stage in any way. Stage 2 samples K mini-groups of M same-given-label
samples per step and optimizes the uncertainty-weighted decision loss
(group mixup term + per-sample supervised term) with the contrastive loss
as a regularizer.

The baselines (``default_baseline``, ``label_smooth``) run the same
supervised loop with the mixup and contrastive branches disabled and the
plain sampler, for the same total epoch budget. The supervised input view
differs by method: "ours" feeds weak views into the supervised terms (the
view triplet is part of the method), while the baselines train directly on
the raw images; ``train.supervised_view`` overrides either choice. When
"ours" is configured with the contrastive branch off, the warm-up budget
folds into the supervised phase so every method trains for the same number
of epochs; with matching view settings that fully ablated configuration is
step-for-step identical to the default baseline.

The learning rate holds at its base value through the warm-up epochs and
decays by ``lr_decay_factor`` every ``lr_decay_every`` epochs thereafter,
for every method alike.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig, DEFAULT_AUGMENT, make_triplet, strong_view, weak_view
from .config import (ExperimentConfig, ModelSettings, TrainConfig, load_config,
                     save_config)
from .data import SyntheticRecipe, generate_synthetic, load_folder_dataset
from .errors import TrainingDivergedError, ValidationError
from .evaluation import (confusion_counts, evaluate, export_features,
                         predict_in_batches, roc_auc, summarize_last_epochs,
                         write_confusion_csv, write_report, write_roc_csv)
from .losses import (UncertaintyWeights, contrastive_loss, mixup_features,
                     mixup_label, one_hot, smooth_labels, stage_loss,
                     supervised_loss)
from .models import ModelConfig, NoiseRobustModel, save_checkpoint, load_checkpoint
from .noise import (NoisyDataset, build_asymmetric_matrix, build_symmetric_matrix,
                    corrupt_dataset, inject_instance_dependent, write_manifest)
from .sampling import build_groups, iterate_batches, plain_batches
from .seeding import derive_seed

METRICS_LOG_NAME = "metrics.log"
LAST_CHECKPOINTS = 3


@dataclass
class TrainState:
    """Everything the loop mutates: parameters, loss weights, optimizer,
    counters, and the per-epoch metrics history."""

    model: NoiseRobustModel
    uncertainty: UncertaintyWeights
    optimizer: torch.optim.Optimizer
    seed: int
    epoch: int = 0      # completed epochs (global across stages)
    stage: int = 0      # 0 = untouched, 1 = warm-up reached, 2 = main phase
    history: list = field(default_factory=list)


def initialize_state(config: TrainConfig, model_settings: ModelSettings,
                     num_classes: int, in_channels: int) -> TrainState:
    """Seeded model + optimizer construction; same seed, same parameters."""
    torch.manual_seed(derive_seed(config.seed, "init"))
    model_config = ModelConfig(
        num_classes=num_classes,
        encoder_kind=model_settings.encoder,
        in_channels=in_channels,
        group_size=config.group_size,
        projection_layers=model_settings.projection_layers,
        projection_dim=model_settings.projection_dim,
        mixup_head_layers=model_settings.mixup_head_layers,
    )
    model = NoiseRobustModel(model_config)
    uncertainty = UncertaintyWeights()
    optimizer = torch.optim.Adam(
        list(model.parameters()) + list(uncertainty.parameters()),
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
    )
    return TrainState(model=model, uncertainty=uncertainty, optimizer=optimizer,
                      seed=config.seed)


def resolved_supervised_view(config: TrainConfig) -> str:
    """The input view for the supervised terms: weak views for the two-stage
    method, raw images for the plain baselines, unless overridden."""
    if config.supervised_view != "auto":
        return config.supervised_view
    return "weak" if config.method == "ours" else "raw"


def learning_rate_for_epoch(config: TrainConfig, epoch: int) -> float:
    """Base rate during warm-up; decayed every ``lr_decay_every`` epochs after."""
    if epoch < config.stage1_epochs:
        return config.learning_rate
    steps = (epoch - config.stage1_epochs) // config.lr_decay_every
    return config.learning_rate * config.lr_decay_factor ** steps


def _to_torch(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))


def _set_lr(optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _finalize_epoch(state: TrainState, record: dict, test_dataset, config,
                    on_epoch_end) -> None:
    if test_dataset is not None and config.evaluate_test_each_epoch:
        predicted, _ = predict_in_batches(state.model, test_dataset.images)
        record["test_accuracy"] = 100.0 * float(
            np.mean(predicted == test_dataset.true_labels))
    else:
        record["test_accuracy"] = None
    state.epoch += 1
    state.history.append(record)
    if on_epoch_end is not None:
        on_epoch_end(state, record)


def _run_contrastive_epoch(state: TrainState, dataset: NoisyDataset,
                           config: TrainConfig, augment_config: AugmentConfig,
                           epoch: int) -> dict:
    model = state.model
    model.train()
    lr = learning_rate_for_epoch(config, epoch)
    _set_lr(state.optimizer, lr)
    rng = np.random.default_rng(derive_seed(config.seed, "augment", epoch))
    images = dataset.images

    sum_mean = sum_raw = 0.0
    batches = 0
    for idxs in plain_batches(len(images), config.batch_size, config.seed, epoch):
        views = []
        for i in idxs:
            views.append(strong_view(images[i], rng, augment_config))
            views.append(strong_view(images[i], rng, augment_config))
        z = model.project(model.encode(_to_torch(np.stack(views))))
        loss = contrastive_loss(z, config.temperature, "mean",
                                config.include_positive_in_denominator)
        if not bool(torch.isfinite(loss)):
            raise TrainingDivergedError(
                f"non-finite contrastive loss at epoch {epoch + 1}, batch {batches}",
                diagnostics={"epoch": epoch + 1, "batch": batches, "stage": 1},
            )
        state.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        state.optimizer.step()
        value = loss.detach().item()
        sum_mean += value
        sum_raw += value * 2 * len(idxs)
        batches += 1

    return {
        "epoch": epoch + 1,
        "stage": 1,
        "lr": lr,
        "contrastive_mean": sum_mean / batches,
        "contrastive_sum": sum_raw / batches,
        "mixup": None,
        "supervised": None,
        "decision": None,
        "total": sum_mean / batches,
        "sigma1": state.uncertainty.sigma1.detach().item(),
        "sigma2": state.uncertainty.sigma2.detach().item(),
        "train_accuracy": None,
    }


def _run_supervised_epoch(state: TrainState, dataset: NoisyDataset,
                          config: TrainConfig, augment_config: AugmentConfig,
                          epoch: int, *, mixup_on: bool, contrastive_on: bool,
                          supervised_on: bool, smooth_epsilon: float,
                          view: str = "weak") -> dict:
    if not (mixup_on or supervised_on):
        raise ValidationError("at least one of the supervised/mixup losses must be on")
    model = state.model
    model.train()
    lr = learning_rate_for_epoch(config, epoch)
    _set_lr(state.optimizer, lr)
    rng = np.random.default_rng(derive_seed(config.seed, "augment", epoch))
    images = dataset.images
    given = dataset.given_labels
    num_classes = dataset.num_classes
    k, m = config.groups_per_batch, config.group_size
    d = model.feature_dim

    if mixup_on:
        groups = build_groups(dataset.records, m,
                              derive_seed(config.seed, "groups", epoch),
                              config.remainder_policy)
        index_batches = (b.sample_indices for b in
                         iterate_batches(groups, k, config.seed, epoch))
    else:
        index_batches = plain_batches(len(images), config.batch_size,
                                      config.seed, epoch)

    sums = {"supervised": 0.0, "mixup": 0.0, "decision": 0.0,
            "contrastive_mean": 0.0, "contrastive_sum": 0.0, "total": 0.0}
    correct = seen = batches = 0
    for idxs in index_batches:
        if contrastive_on and view == "weak":
            triplets = [make_triplet(images[i], rng, int(i), augment_config)
                        for i in idxs]
            weak = np.stack([t.weak for t in triplets])
            strong = np.stack([v for t in triplets for v in (t.strong_a, t.strong_b)])
        elif contrastive_on:
            weak = images[idxs]
            strong = np.stack([s for i in idxs
                               for s in (strong_view(images[i], rng, augment_config),
                                         strong_view(images[i], rng, augment_config))])
        elif view == "weak":
            weak = np.stack([weak_view(images[i], rng, augment_config) for i in idxs])
        else:
            weak = images[idxs]

        features = model.encode(_to_torch(weak))
        logits = model.classify(features)
        labels = torch.from_numpy(given[idxs])
        if smooth_epsilon > 0:
            targets = smooth_labels(labels, num_classes, smooth_epsilon)
        else:
            targets = one_hot(labels, num_classes)
        loss_s = supervised_loss(logits, targets) if supervised_on else None

        loss_m = None
        if mixup_on:
            weights = model.attention_weights(features.reshape(k, m * d))
            mixed = mixup_features(features.reshape(k, m, d), weights)
            group_targets = one_hot(labels, num_classes).reshape(k, m, num_classes)
            mixed_targets = mixup_label(group_targets, weights)
            loss_m = supervised_loss(model.classify(mixed), mixed_targets)

        loss_c = None
        if contrastive_on:
            z = model.project(model.encode(_to_torch(strong)))
            loss_c = contrastive_loss(z, config.temperature, "mean",
                                      config.include_positive_in_denominator)

        if loss_m is not None and loss_s is not None:
            decision = state.uncertainty.decision_loss(loss_m, loss_s)
        else:
            decision = loss_m if loss_m is not None else loss_s
        if contrastive_on:
            total = stage_loss("stage2", loss_c, decision,
                               config.contrastive_coefficient)
        else:
            total = decision

        if not bool(torch.isfinite(total)):
            raise TrainingDivergedError(
                f"non-finite loss at epoch {epoch + 1}, batch {batches}",
                diagnostics={
                    "epoch": epoch + 1, "batch": batches, "stage": 2,
                    "supervised": None if loss_s is None else loss_s.detach().item(),
                    "mixup": None if loss_m is None else loss_m.detach().item(),
                    "contrastive": None if loss_c is None else loss_c.detach().item(),
                },
            )
        state.optimizer.zero_grad(set_to_none=True)
        total.backward()
        state.optimizer.step()

        sums["total"] += total.detach().item()
        sums["decision"] += decision.detach().item()
        if loss_s is not None:
            sums["supervised"] += loss_s.detach().item()
        if loss_m is not None:
            sums["mixup"] += loss_m.detach().item()
        if loss_c is not None:
            value_c = loss_c.detach().item()
            sums["contrastive_mean"] += value_c
            sums["contrastive_sum"] += value_c * 2 * len(idxs)
        correct += int((logits.argmax(dim=1) == labels).sum())
        seen += len(idxs)
        batches += 1

    if batches == 0:
        raise ValidationError("the sampler produced no batches this epoch")
    return {
        "epoch": epoch + 1,
        "stage": 2,
        "lr": lr,
        "contrastive_mean": sums["contrastive_mean"] / batches if contrastive_on else None,
        "contrastive_sum": sums["contrastive_sum"] / batches if contrastive_on else None,
        "mixup": sums["mixup"] / batches if mixup_on else None,
        "supervised": sums["supervised"] / batches if supervised_on else None,
        "decision": sums["decision"] / batches,
        "total": sums["total"] / batches,
        "sigma1": state.uncertainty.sigma1.detach().item(),
        "sigma2": state.uncertainty.sigma2.detach().item(),
        "train_accuracy": 100.0 * correct / seen,
    }


def train_stage1(state: TrainState, dataset: NoisyDataset, config: TrainConfig,
                 augment_config: AugmentConfig = DEFAULT_AUGMENT,
                 test_dataset: NoisyDataset | None = None,
                 on_epoch_end=None) -> TrainState:
    """Contrastive warm-up. Labels never reach this stage; classifier and
    mixup head parameters are bit-identical before and after."""
    state.stage = max(state.stage, 1)
    for _ in range(config.stage1_epochs):
        record = _run_contrastive_epoch(state, dataset, config, augment_config,
                                        state.epoch)
        _finalize_epoch(state, record, test_dataset, config, on_epoch_end)
    return state


def train_stage2(state: TrainState, dataset: NoisyDataset, config: TrainConfig,
                 augment_config: AugmentConfig = DEFAULT_AUGMENT,
                 test_dataset: NoisyDataset | None = None,
                 on_epoch_end=None) -> TrainState:
    """Joint phase: decision loss over mini-group batches plus the
    contrastive regularizer, per the configured component switches."""
    if state.stage < 1:
        raise ValidationError("stage 2 requires a completed (possibly empty) stage 1")
    state.stage = 2
    for _ in range(config.stage2_epochs):
        record = _run_supervised_epoch(
            state, dataset, config, augment_config, state.epoch,
            mixup_on=config.use_mixup_loss,
            contrastive_on=config.use_contrastive_loss,
            supervised_on=config.use_supervised_loss,
            smooth_epsilon=0.0,
            view=resolved_supervised_view(config),
        )
        _finalize_epoch(state, record, test_dataset, config, on_epoch_end)
    return state


def train_baseline(dataset: NoisyDataset, config: TrainConfig,
                   model_settings: ModelSettings | None = None,
                   augment_config: AugmentConfig = DEFAULT_AUGMENT,
                   test_dataset: NoisyDataset | None = None,
                   on_epoch_end=None) -> TrainState:
    """Plain supervised training on the given labels (hard or smoothed),
    run on raw images (no view pipeline) for the same total epoch budget as
    the two-stage method."""
    if config.method not in ("default_baseline", "label_smooth"):
        raise ValidationError(
            f"train_baseline expects a baseline method, got {config.method!r}"
        )
    model_settings = model_settings or ModelSettings()
    state = initialize_state(config, model_settings, dataset.num_classes,
                             dataset.images.shape[3])
    state.stage = 2
    epsilon = config.label_smooth_epsilon if config.method == "label_smooth" else 0.0
    for _ in range(config.total_epochs):
        record = _run_supervised_epoch(
            state, dataset, config, augment_config, state.epoch,
            mixup_on=False, contrastive_on=False, supervised_on=True,
            smooth_epsilon=epsilon,
            view=resolved_supervised_view(config),
        )
        _finalize_epoch(state, record, test_dataset, config, on_epoch_end)
    return state


def train_method(train_dataset: NoisyDataset, test_dataset: NoisyDataset | None,
                 experiment: ExperimentConfig, on_epoch_end=None) -> TrainState:
    """Dispatch on the configured method and run the full schedule."""
    cfg = experiment.train
    augment_config = experiment.augment
    if cfg.method != "ours":
        return train_baseline(train_dataset, cfg, experiment.model,
                              augment_config, test_dataset, on_epoch_end)

    state = initialize_state(cfg, experiment.model, train_dataset.num_classes,
                             train_dataset.images.shape[3])
    if cfg.use_contrastive_loss:
        train_stage1(state, train_dataset, cfg, augment_config, test_dataset,
                     on_epoch_end)
        stage2_config = cfg
    else:
        # No warm-up without the contrastive term; keep the epoch total fair.
        state.stage = 1
        stage2_config = replace(cfg, stage2_epochs=cfg.total_epochs)
    train_stage2(state, train_dataset, stage2_config, augment_config,
                 test_dataset, on_epoch_end)
    return state


def train_proxy_with_predictions(dataset: NoisyDataset, proxy_config: TrainConfig,
                                 seed: int):
    """Train the Default path on the dataset's given labels; return the
    per-epoch training accuracy and the per-epoch predictions over the
    (unaugmented) training images."""
    cfg = replace(proxy_config, seed=seed, method="default_baseline",
                  use_mixup_loss=False, use_contrastive_loss=False,
                  use_supervised_loss=True, evaluate_test_each_epoch=False)
    given = dataset.given_labels
    accuracies: list[float] = []
    predictions: list[np.ndarray] = []

    def snapshot(state, record):
        predicted, _ = predict_in_batches(state.model, dataset.images)
        accuracies.append(float(np.mean(predicted == given)))
        predictions.append(predicted)

    train_baseline(dataset, cfg, on_epoch_end=snapshot)
    return np.array(accuracies), np.stack(predictions)


def _build_datasets(experiment: ExperimentConfig):
    ds = experiment.dataset
    if ds.kind == "synthetic":
        recipe = SyntheticRecipe(
            num_classes=ds.num_classes, image_size=ds.image_size,
            channels=ds.channels, train_per_class=ds.train_per_class,
            test_per_class=ds.test_per_class, seed=ds.data_seed,
            pixel_noise=ds.pixel_noise,
        )
        return generate_synthetic(recipe)
    root = Path(ds.root)
    train = load_folder_dataset(root / "train", ds.image_size, ds.channels)
    test = load_folder_dataset(root / "test", ds.image_size, ds.channels)
    if train.num_classes != test.num_classes:
        raise ValidationError(
            f"train has {train.num_classes} classes but test has {test.num_classes}"
        )
    return train, test


def _apply_noise(train_dataset: NoisyDataset, experiment: ExperimentConfig) -> NoisyDataset:
    noise = experiment.noise
    seed = derive_seed(experiment.train.seed, "noise")
    if noise.kind == "none":
        manifest = dict(train_dataset.manifest)
        manifest.update({"kind": "none", "rate": 0.0, "seed": seed,
                         "realized_rate": 0.0})
        return NoisyDataset(images=train_dataset.images,
                            records=train_dataset.records,
                            num_classes=train_dataset.num_classes,
                            manifest=manifest)
    if noise.kind == "symmetric":
        matrix = build_symmetric_matrix(noise.rate, train_dataset.num_classes,
                                        noise.convention)
        return corrupt_dataset(train_dataset, matrix, seed,
                               {"rate": noise.rate, "convention": noise.convention})
    if noise.kind == "asymmetric":
        matrix = build_asymmetric_matrix(noise.rate, train_dataset.num_classes)
        return corrupt_dataset(train_dataset, matrix, seed, {"rate": noise.rate})
    proxy_config = replace(experiment.train, method="default_baseline",
                           stage1_epochs=0, stage2_epochs=noise.proxy_epochs)
    return inject_instance_dependent(train_dataset, noise.rate, proxy_config, seed)


def run_experiment(config, out_dir=None) -> Path:
    """Full pipeline: build data, inject noise, train, evaluate, report.

    Persists into the run directory: ``config.snapshot``, ``manifest``,
    ``metrics.log`` (one JSON record per epoch), ``checkpoints/`` (last
    three epochs plus best test accuracy), and ``report`` with the
    last-three-epochs protocol results. Deterministic for a fixed config
    and seed on fixed hardware.
    """
    if not isinstance(config, ExperimentConfig):
        config = load_config(config)
    target = out_dir if out_dir is not None else config.run.out_dir
    if target is None:
        raise ValidationError("no output directory: pass out_dir or set run.out_dir")
    out = Path(target)
    if out.exists() and any(out.iterdir()):
        raise ValidationError(f"refusing to write into non-empty directory {out}")
    if config.train.total_epochs < 1:
        raise ValidationError("run_experiment needs at least one training epoch")
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir()
    save_config(out / "config.snapshot", config)

    train_clean, test_dataset = _build_datasets(config)
    try:
        noisy_train = _apply_noise(train_clean, config)
        write_manifest(out / "manifest", noisy_train.records, noisy_train.manifest)

        total_epochs = config.train.total_epochs
        best = {"accuracy": -1.0}
        log_path = out / METRICS_LOG_NAME

        with open(log_path, "w") as log:
            def on_epoch_end(state, record):
                log.write(json.dumps(record) + "\n")
                log.flush()
                extra = {"epoch": state.epoch, "stage": state.stage,
                         "sigma1": record["sigma1"], "sigma2": record["sigma2"]}
                if state.epoch > total_epochs - LAST_CHECKPOINTS:
                    save_checkpoint(out / "checkpoints" / f"epoch_{state.epoch:03d}.pt",
                                    state.model, extra)
                acc = record.get("test_accuracy")
                if acc is not None and acc > best["accuracy"]:
                    best["accuracy"] = acc
                    save_checkpoint(out / "checkpoints" / "best.pt", state.model, extra)

            train_method(noisy_train, test_dataset, config, on_epoch_end)
    except TrainingDivergedError as exc:
        torch.save({"diagnostics": exc.diagnostics}, out / "diagnostic_snapshot.pt")
        raise

    reports = []
    for epoch in range(max(1, total_epochs - LAST_CHECKPOINTS + 1), total_epochs + 1):
        model, _ = load_checkpoint(out / "checkpoints" / f"epoch_{epoch:03d}.pt")
        reports.append(evaluate(model, test_dataset, epoch=epoch))
    summary = summarize_last_epochs(reports)

    payload = {
        "method": config.train.method,
        "seed": config.train.seed,
        "noise": {"kind": config.noise.kind, "rate": config.noise.rate,
                  "convention": config.noise.convention,
                  "realized_rate": noisy_train.manifest.get("realized_rate")},
        "accuracy_last3_avg": summary.accuracy_last3_avg,
        "last3_accuracies": summary.accuracies,
        "selected_epoch": summary.selected.epoch,
        "metrics": summary.selected.to_dict(),
    }
    write_report(out / "report", payload)
    _write_eval_artifacts(out, summary.selected.epoch, test_dataset, config)
    return out


def _write_eval_artifacts(out: Path, selected_epoch: int,
                          test_dataset: NoisyDataset,
                          config: ExperimentConfig) -> None:
    model, _ = load_checkpoint(out / "checkpoints" / f"epoch_{selected_epoch:03d}.pt")
    predicted, probs = predict_in_batches(model, test_dataset.images)
    cm = confusion_counts(test_dataset.true_labels, predicted,
                          test_dataset.num_classes)
    write_confusion_csv(out / "confusion_matrix.csv", cm)
    true = test_dataset.true_labels
    for k in range(test_dataset.num_classes):
        binary = (true == k).astype(np.int64)
        if binary.min() == binary.max():
            continue
        points, _ = roc_auc(probs[:, k], binary)
        write_roc_csv(out / f"roc_class_{k}.csv", points)
    if config.run.export_features:
        export_features(model, test_dataset, out / "features.tsv")


def load_run_report(run_dir) -> dict:
    with open(Path(run_dir) / "report") as fh:
        return json.load(fh)
