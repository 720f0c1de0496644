"""Priors for the next study centred on the previous study's posterior."""

from __future__ import annotations

import numpy as np

from ..errors import MappingError
from .draws import PosteriorDraws
from .priors import LogNormalPrior, PriorSpec

SCALED = ("mu_cl", "mu_v")
CARRIED = ("ka", "mu_ic50", "mu_ke")


def sequential_prior(prev: PosteriorDraws, from_species, to_species, base: PriorSpec,
                     weights=None, v_exponent: float = 1.0) -> PriorSpec:
    """Re-centre the log-normal priors of ``base`` on posterior means of ``prev``.

    CL and V medians are scaled allometrically from ``from_species`` to
    ``to_species``; ka and the PD medians are carried over as they are.
    Prior widths and the priors of all SDs stay those of ``base``.
    """
    from ..extrapolate import _weight, allometric_cl, allometric_v

    for name in SCALED:
        if name not in prev:
            raise MappingError(f"previous posterior lacks {name}")
    w_from, w_to = _weight(from_species, weights), _weight(to_species, weights)
    centres = {
        "mu_cl": allometric_cl(prev.mean("mu_cl"), w_from, w_to),
        "mu_v": allometric_v(prev.mean("mu_v"), w_from, w_to, exponent=v_exponent),
    }
    for name in CARRIED:
        if name in prev and name in base:
            centres[name] = prev.mean(name)
    out = PriorSpec(base)
    for name, value in centres.items():
        prior = base[name]
        if not isinstance(prior, LogNormalPrior):
            raise MappingError(f"base prior for {name} is not log-normal")
        out[name] = LogNormalPrior(float(np.log(value)), prior.sdlog)
    return out
