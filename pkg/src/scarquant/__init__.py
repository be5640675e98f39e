"""Cardiac LGE scar quantification toolkit: geometry, preprocessing,
classical segmenters, quality control, label synthesis, phantoms and
evaluation metrics behind a cascaded pipeline."""

from .volume import (  # noqa: F401
    LabelMap,
    Spacing,
    SubjectRecord,
    Volume,
    read_nifti,
    volume_of_class,
    voxel_volume_cm3,
    write_nifti,
)

__version__ = "0.1.0"
