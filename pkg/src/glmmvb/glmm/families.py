"""Canonical-link exponential families for the response distribution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, InvalidInputError
from ..kernels import numpy_impl as _np_impl

BERNOULLI = "bernoulli"
POISSON = "poisson"

_TAGS = {BERNOULLI: _np_impl.BERNOULLI, POISSON: _np_impl.POISSON}


@dataclass(frozen=True)
class Family:
    """Response family under its canonical link; scale is fixed at 1.

    Only the two families with unit scale are supported; any other tag is
    rejected here, which is where non-canonical links die too.
    """

    tag: str
    phi: float = 1.0

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise ConfigError("unsupported family %r (choose %s)"
                              % (self.tag, "/".join(sorted(_TAGS))))
        if self.phi != 1.0:
            raise ConfigError("scale parameter is fixed at 1 for %s" % self.tag)

    @property
    def kernel_tag(self) -> int:
        return _TAGS[self.tag]

    def validate_response(self, y) -> None:
        y = np.asarray(y, dtype=float)
        if self.tag == BERNOULLI:
            if not np.all((y == 0.0) | (y == 1.0)):
                raise InvalidInputError("bernoulli responses must be 0 or 1")
        else:
            if not np.all((y >= 0.0) & (y == np.floor(y))):
                raise InvalidInputError(
                    "poisson responses must be nonnegative integers")


def bernoulli() -> Family:
    return Family(tag=BERNOULLI)


def poisson() -> Family:
    return Family(tag=POISSON)


def family_links(family: Family, eta):
    """Cumulant function b and derivatives (b, bdot, bddot) at eta.

    Componentwise and overflow-safe for the Bernoulli family over at least
    |eta| <= 700.
    """
    eta = np.asarray(eta, dtype=float)
    if np.any(np.isnan(eta)):
        raise InvalidInputError("eta contains NaN")
    flat = eta.reshape(-1)
    bval, bdot, bddot = _np_impl.family_eval(family.kernel_tag, flat)
    shape = eta.shape
    return bval.reshape(shape), bdot.reshape(shape), bddot.reshape(shape)
