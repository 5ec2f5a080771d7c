"""
Utility Functions for hurpipe

This module contains utility functions for output file management, the run
manifest, configuration validation and seed derivation.
"""
