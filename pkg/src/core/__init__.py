"""
Core Modules for hurpipe

This package holds the raster model, preprocessing, the baseline classifier,
spatial cross-validation, stitching, metrics, DHS validation and the
pipeline controller.
"""
