"""Renormalisation of vector fields on the d-torus near Koch-type frequencies."""
