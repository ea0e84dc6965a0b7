"""groupmix: noise-robust image classification training.

Contrastive warm-up for the feature encoder plus intra-group attentive
feature mixup over mini-group batches, with noise-injection protocols,
baselines, and an evaluation harness for desk-scale experiments.
"""

from .augment import AugmentConfig, ViewTriplet, make_triplet, strong_view, weak_view
from .config import (DatasetConfig, ExperimentConfig, ModelSettings, NoiseConfig,
                     TrainConfig, config_from_dict, load_config, save_config)
from .data import SyntheticRecipe, generate_synthetic, load_folder_dataset
from .errors import DataIngestError, TrainingDivergedError, ValidationError
from .evaluation import (LastThreeSummary, MetricsReport, average_last3, evaluate,
                         export_features, per_class_metrics, roc_auc,
                         summarize_last_epochs)
from .losses import (UncertaintyWeights, contrastive_loss, contrastive_pair_loss,
                     cosine_similarity, decision_loss, mixup_features, mixup_label,
                     one_hot, smooth_labels, stage_loss, supervised_loss)
from .models import (ModelConfig, NoiseRobustModel, load_checkpoint,
                     parameter_checksums, save_checkpoint)
from .noise import (CorruptionRecord, NoisyDataset, TransitionMatrix,
                    apply_transition, build_asymmetric_matrix,
                    build_symmetric_matrix, corrupt_dataset,
                    expected_corruption_rate, inject_instance_dependent,
                    read_manifest, realized_noise_rate, write_manifest)
from .sampling import (MiniGroup, MiniGroupBatch, build_groups, iterate_batches,
                       plain_batches)
from .seeding import derive_seed
from .training import (TrainState, initialize_state, learning_rate_for_epoch,
                       run_experiment, train_baseline, train_method, train_stage1,
                       train_stage2)

__version__ = "0.1.0"
