"""Few-shot segmentation with adaptive attention distillation, built on a small numpy autodiff core."""

__version__ = "0.1.0"
