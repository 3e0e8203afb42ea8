"""Shipped experiment configurations.

The defaults encourage small input-weight scales while leaving room for the
large weights that strong nonlinearities need, assuming inputs and targets
normalized to zero mean and unit variance. ``python -m epnn.presets <name>``
prints the corresponding config JSON.
"""

from __future__ import annotations

import json
import math
import sys

from .engine import FitConfig
from .modelfile import config_to_dict
from .priors import GAUSSIAN_ARD, LAPLACE, PriorConfig


def laplace_config(K: int = 10, **overrides) -> FitConfig:
    """Laplace input-weight priors with one shared scale parameter."""
    priors = PriorConfig(family=LAPLACE, mu_phi0=2.0 * math.log(0.01),
                         sigma_phi0_sq=2.5**2)
    return FitConfig(K=K, priors=priors, mu_theta0=2.0 * math.log(0.01),
                     sigma_theta0_sq=2.0**2, **overrides)


def ard_config(K: int = 10, **overrides) -> FitConfig:
    """Gaussian ARD priors: one scale parameter per input column."""
    priors = PriorConfig(family=GAUSSIAN_ARD, mu_phi0=2.0 * math.log(0.01),
                         sigma_phi0_sq=2.5**2)
    return FitConfig(K=K, priors=priors, mu_theta0=2.0 * math.log(0.01),
                     sigma_theta0_sq=2.0**2, **overrides)


PRESETS = {"laplace": laplace_config, "gaussian-ard": ard_config}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv or argv[0] not in PRESETS:
        print(f"usage: python -m epnn.presets {{{'|'.join(PRESETS)}}} [K]", file=sys.stderr)
        return 2
    K = int(argv[1]) if len(argv) > 1 else 10
    print(json.dumps(config_to_dict(PRESETS[argv[0]](K=K)), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
