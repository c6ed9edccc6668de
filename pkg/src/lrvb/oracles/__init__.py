"""Independent ground truth: samplers, ESS, finite differences, quadrature.

Nothing here calls into the LRVB engine; the only shared code is the data
containers of the models being checked.
"""
