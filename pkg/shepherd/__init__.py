from .attribution import (
    Attribution,
    BackgroundSet,
    Coalition,
    composite,
    mask_baseline,
    run_method,
    scale_baseline,
    shap_exact,
    shap_permutation,
    shep,
    shep_add,
    shep_remove,
)
from .patching import PatchSpec, patchify, unpatchify
from .predictor import IntegratedModel, fit_reference
from .simgen import Signal, build_dataset, fault_classes
from .transforms import DomainTag, StftConfig, forward, inverse

__version__ = "0.1.0"
