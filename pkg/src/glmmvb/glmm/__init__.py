from .arrow import BlockArrowMatrix, arrow_solve_and_marginals, \
    sample_gaussian_arrow
from .data import Dataset, from_arrays, read_csv, write_csv
from .families import Family, bernoulli, family_links, poisson
from .model import DEFAULT_TAU0, GlmmModel, Prior, build_model, \
    default_prior, grad_hessian, prior_precision_beta

__all__ = [
    "BlockArrowMatrix", "arrow_solve_and_marginals", "sample_gaussian_arrow",
    "Dataset", "from_arrays", "read_csv", "write_csv",
    "Family", "bernoulli", "family_links", "poisson",
    "DEFAULT_TAU0", "GlmmModel", "Prior", "build_model", "default_prior",
    "grad_hessian", "prior_precision_beta",
]
