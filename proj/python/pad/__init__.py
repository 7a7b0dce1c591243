"""Goal-conditioned latent energy planning: python surface over the C++ core."""

from ._pad import (
    arccos_cdf,
    arccos_transform,
    corrupt,
    cosine_lr,
    gen_data,
    grad_check,
    lambda_choice_probs,
    plan_lambdas_energies,
    sample_arccos,
    select_top_k,
    sinusoidal_embed,
    train,
)

__all__ = [
    "arccos_cdf",
    "arccos_transform",
    "corrupt",
    "cosine_lr",
    "gen_data",
    "grad_check",
    "lambda_choice_probs",
    "plan_lambdas_energies",
    "sample_arccos",
    "select_top_k",
    "sinusoidal_embed",
    "train",
]
