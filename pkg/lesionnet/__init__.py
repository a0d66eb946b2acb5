"""Retinal lesion segmentation, lesion classification and DR grading."""
