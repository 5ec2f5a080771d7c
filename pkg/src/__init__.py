"""
hurpipe: High-resolution Urban-Rural mapping pipeline

Builds 10 m land-cover maps with rural and urban settlement classes from
yearly satellite composites: label fusion, country-wise cross-validation,
class-weighted training, smooth-tiled inference and evaluation against both
pixel labels and displaced survey clusters.
"""

__version__ = "1.0"
__author__ = "hurpipe Project"
__description__ = "High-resolution urban-rural mapping pipeline"
