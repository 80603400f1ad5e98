"""RGB-D CycleGAN for synthetic-to-sensor domain adaptation, on a numpy autodiff core."""

__version__ = "0.1.0"
