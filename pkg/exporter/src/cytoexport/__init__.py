"""Bridge from segmentation models to the fusion tool's file formats."""

from .export import (
    ExportBatchError,
    ExportError,
    ExportJob,
    colors_to_indices,
    convert_gt_masks,
    export_probmaps,
    load_palette,
    softmax_last_axis,
    write_pgm,
)

__version__ = "0.1.0"
