"""Physics-guided GAN for DIC displacement fields, with sliced Wasserstein
and geometry-score evaluation."""

__version__ = "0.1.0"

from . import fields, gan, gscore, strain, swd, tensorcore  # noqa: F401
