"""Transformation-invariant generative image and video models.

Mixtures of Gaussians, component (factor) analyzers, their combination, and
a hidden Markov model over video frames, all made invariant to a discrete
family of spatial transformations (shifts, shears) represented as sparse
generalized-permutation operators.  Everything trains with exact EM.
"""

from .common import (EmOptions, PosteriorSummary, SequencePosterior,
                     StepReport, UnderflowError)
from .transforms import (DEFAULT_SHEAR_FAMILY, VOID, ImageShape, TransformOp,
                         TransformationSet, apply, apply_adjoint,
                         build_shear_translation_set, build_translation_set,
                         identity_set, shear_translate_op, shift_op,
                         transform_diag_cov)
from .tmg import TmgModel, init_tmg
from .tca import TcaModel, init_tca, tangent_columns
from .mtca import MtcaModel, init_mtca
from .thmm import MotionPrior, ThmmModel, from_tmg, init_thmm, uniform_motion
from .classify import bayes_classify, classify_batch, marginal_loglik
from .manifest import Manifest
from . import classify, metrics, model_io, mtca, synthgen, tca, thmm, tmg

__all__ = [
    "EmOptions", "PosteriorSummary", "SequencePosterior", "StepReport",
    "UnderflowError", "DEFAULT_SHEAR_FAMILY", "VOID", "ImageShape",
    "TransformOp", "TransformationSet", "apply", "apply_adjoint",
    "build_shear_translation_set", "build_translation_set", "identity_set",
    "shear_translate_op", "shift_op", "transform_diag_cov",
    "TmgModel", "init_tmg", "TcaModel", "init_tca", "tangent_columns",
    "MtcaModel", "init_mtca", "MotionPrior", "ThmmModel", "from_tmg",
    "init_thmm", "uniform_motion", "bayes_classify", "classify_batch",
    "marginal_loglik", "Manifest",
    "classify", "metrics", "model_io", "mtca", "synthgen", "tca", "thmm", "tmg",
]
