"""Event-boosted deformable Gaussian splatting (CPU reference)."""

try:
    from . import _evsplat as _ext  # installed layout: extension in-package
except ImportError:
    import _evsplat as _ext  # build-tree layout: extension on sys.path

__all__ = [
    "CalibConfig",
    "CalibResult",
    "Dataset",
    "EvalResult",
    "JointModel",
    "ToySceneConfig",
    "TrainConfig",
    "TrainResult",
    "calibrate",
    "evaluate",
    "load_checkpoint",
    "load_dataset",
    "make_toy_scene",
    "render",
    "save_checkpoint",
    "srgb_decode",
    "srgb_encode",
    "train",
]

globals().update({name: getattr(_ext, name) for name in __all__})
