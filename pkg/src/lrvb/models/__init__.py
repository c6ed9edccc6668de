"""Reference models: MVN target, normal-Poisson GLMM, random-slope regression, Gaussian mixture."""
