"""flimreg: co-registration of full-spectral FLIM tiles with H&E histology.

Pipeline: reconstruct intensity/lifetime planes from hypercubes, translate
FLIM renders into false-histology images, regress a homography against an
interactively cropped histology patch, stitch registered tiles into
whole-slide mosaics, and probe per-cell spectral lifetime curves.
"""

__version__ = "0.1.0"

from .datamodel import (  # noqa: F401
    BinaryMask,
    Hypercube,
    RgbImage,
    ScalarPlane,
    load_hypercube,
    load_plane,
    load_rgb,
    save_plane,
    save_rgb,
)
from .registration import (  # noqa: F401
    Homography,
    RegressionParams,
    RegressionResult,
    regress_homography,
)
from .stitching import PatchRect, TilePlacement, stitch  # noqa: F401
