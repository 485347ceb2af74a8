"""Class-conditional radial normalizing flows on the token latent space.

Each class owns a stack of radial transforms over a shared standard-normal
base.  The density of a latent point under class k is obtained by pushing it
through class k's stack toward the base and accumulating the log-determinants
of the transforms, so every class density integrates to one by construction.
"""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

LOG_TWO_PI = math.log(2.0 * math.pi)

# softplus(x) = 1 at x = ln(e - 1); used to start slopes near one.
_INV_SOFTPLUS_ONE = math.log(math.e - 1.0)


class ClassConditionalRadialFlows(nn.Module):
    """One radial-flow stack per class.

    A single transform is f(z) = z + beta * (z - z0) / (alpha + ||z - z0||)
    with alpha = softplus(alpha_raw) and beta = -alpha + softplus(beta_raw),
    which keeps every layer invertible for unconstrained raw parameters.
    ``depth`` zero degenerates to the bare base distribution.
    """

    def __init__(
        self,
        n_classes: int,
        latent_dim: int,
        depth: int,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        if n_classes < 1 or latent_dim < 1 or depth < 0:
            raise ValueError("n_classes and latent_dim must be positive, depth nonnegative")
        self.n_classes = n_classes
        self.latent_dim = latent_dim
        self.depth = depth
        self.centers = nn.Parameter(0.5 * torch.randn(n_classes, depth, latent_dim, dtype=dtype))
        self.alpha_raw = nn.Parameter(
            _INV_SOFTPLUS_ONE + 0.1 * torch.randn(n_classes, depth, dtype=dtype)
        )
        self.beta_raw = nn.Parameter(
            _INV_SOFTPLUS_ONE + 0.1 * torch.randn(n_classes, depth, dtype=dtype)
        )

    def log_density(self, z: torch.Tensor) -> torch.Tensor:
        """Log densities of latent points under every class.

        ``z`` has shape (n, latent_dim); the result has shape (n, n_classes).
        """
        if z.dim() != 2 or z.shape[1] != self.latent_dim:
            raise ValueError(f"expected (n, {self.latent_dim}) latents, got {tuple(z.shape)}")
        n = z.shape[0]
        d = self.latent_dim
        u = z.unsqueeze(1).expand(n, self.n_classes, d)
        log_det_sum = z.new_zeros(n, self.n_classes)
        for layer in range(self.depth):
            center = self.centers[:, layer, :]
            alpha = F.softplus(self.alpha_raw[:, layer])
            beta = -alpha + F.softplus(self.beta_raw[:, layer])
            dz = u - center
            radius = dz.norm(dim=-1)
            bh = beta / (alpha + radius)
            u = u + bh.unsqueeze(-1) * dz
            # d(f)/dz has determinant (1 + bh)^(d-1) * (1 + bh + beta h'(r) r).
            bh_prime_r = -beta * radius / (alpha + radius).pow(2)
            log_det_sum = log_det_sum + (d - 1) * torch.log1p(bh) + torch.log1p(bh + bh_prime_r)
        base = -0.5 * u.pow(2).sum(dim=-1) - 0.5 * d * LOG_TWO_PI
        return base + log_det_sum

    def class_log_density(self, z: torch.Tensor, class_index: int) -> torch.Tensor:
        """Log density of latent points under one class, shape (n,)."""
        if not 0 <= class_index < self.n_classes:
            raise ValueError(f"class index {class_index} out of range")
        return self.log_density(z)[:, class_index]
