"""Leaf-disease image classification with from-scratch training and CAM saliency."""

from .dataset import (Manifest, ManifestEntry, SplitAssignment, load_batch,
                      load_split_arrays, read_manifest, scan_dataset,
                      split_dataset, write_manifest)
from .errors import DatasetError, DimensionError, FormatError, LeafscopeError
from .metrics import (ConfusionMatrix, MetricsReport, confusion_accumulate,
                      confusion_from_pairs, derive_metrics, format_report,
                      merge, write_confusion_tsv, write_report_tsv)
from .model import (ActivationCache, History, LayerSpec, ModelGraph, TrainConfig,
                    backward_pass, build_cnn, build_paper_cnn, evaluate, fit,
                    forward_logits, forward_with_cache, load_weights, predict,
                    save_weights, train_step, write_history_tsv)
from .preprocess import (PreprocessConfig, extract_foreground, green_mask,
                         load_rgb, morph_refine, preprocess_image, rgb_to_hsv,
                         save_rgb, tensor_to_rgb)
from .synthetic import generate_corpus, generate_image
from .xai import (CamRequest, Heatmap, faster_scorecam, gradcam, gradcam_pp,
                  layercam, postprocess_heatmap, render_overlay, scorecam,
                  write_heatmap_tsv)

__version__ = "0.1.0"
