"""Harmonized regional style transfer for segmented images, at desk scale."""

import os

# Deterministic single-threaded BLAS unless RSTM_THREADS opts in.
if "RSTM_THREADS" not in os.environ:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, "1")
else:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["RSTM_THREADS"])

__version__ = "0.1.0"

CLASS_NAMES = (
    "background",
    "skin",
    "hair",
    "left_eye",
    "right_eye",
    "nose",
    "mouth",
    "brows",
)
NUM_CLASSES = len(CLASS_NAMES)
