"""Grid charts, finite differences and covariant calculus."""
from .manifold import DiscreteManifold
from .fields import ScalarField, TensorField2, load_field, save_field
from .fd import operators
from .calculus import (
    augmented_tensor,
    commutation_residual,
    covariant_gradient,
    covariant_hessian,
    covariant_third,
    grad_norm2,
    hessian_norm,
    hessian_norm2,
    pullback_ball,
    rescale_ball,
    rescale_identity_residual,
    schouten,
)

__all__ = [
    "DiscreteManifold",
    "ScalarField",
    "TensorField2",
    "load_field",
    "save_field",
    "operators",
    "augmented_tensor",
    "commutation_residual",
    "covariant_gradient",
    "covariant_hessian",
    "covariant_third",
    "grad_norm2",
    "hessian_norm",
    "hessian_norm2",
    "pullback_ball",
    "rescale_ball",
    "rescale_identity_residual",
    "schouten",
]
