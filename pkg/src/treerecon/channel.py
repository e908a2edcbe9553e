"""Binary asymmetric channel on the alphabet {+, -}.

The transition matrix is written either through its second eigenvalue
``theta`` and asymmetry ``delta``::

    M = 1/2 [[1+theta, 1-theta], [1-theta, 1+theta]] + delta/2 [[-1, 1], [-1, 1]]

or through the entries of the second column::

    M = [[1-eps_plus, eps_plus], [1-eps_minus, eps_minus]]

Row/column order is (+, -). Values are kept in whatever numeric type they
were given in, so passing :class:`fractions.Fraction` inputs yields exact
channels.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Real

import numpy as np

__all__ = [
    "Channel",
    "ChannelError",
    "DerivedParams",
    "channel_from_theta_delta",
    "channel_from_flip_probs",
    "derived_params",
    "canonicalize",
]


class ChannelError(ValueError):
    """Raised for parameters that do not describe a valid channel."""


@dataclass(frozen=True)
class Channel:
    theta: Real
    delta: Real
    eps_plus: Real
    eps_minus: Real
    pi_plus: Real
    pi_minus: Real
    swapped: bool = False

    @property
    def matrix(self) -> np.ndarray:
        """Transition matrix with rows/columns ordered (+, -)."""
        return np.array(
            [[1 - self.eps_plus, self.eps_plus], [1 - self.eps_minus, self.eps_minus]],
            dtype=object if self.is_exact else float,
        )

    @property
    def is_exact(self) -> bool:
        return isinstance(self.theta, Fraction)

    @property
    def pi_ratio(self) -> Real:
        return self.pi_minus / self.pi_plus

    @property
    def Delta(self) -> Real:
        return self.pi_ratio - 1

    def as_float(self) -> "Channel":
        return Channel(*(float(getattr(self, f)) for f in _NUMERIC_FIELDS), swapped=self.swapped)

    def to_record(self) -> dict:
        rec = {f: float(getattr(self, f)) for f in _NUMERIC_FIELDS}
        rec["swapped"] = self.swapped
        return rec


_NUMERIC_FIELDS = ("theta", "delta", "eps_plus", "eps_minus", "pi_plus", "pi_minus")


@dataclass(frozen=True)
class DerivedParams:
    pi_ratio: Real
    Delta: Real


def _check_unit(name: str, value: Real) -> None:
    if not (0 <= value <= 1):
        raise ChannelError(f"{name}={value} outside [0, 1]")


def _coerce(*values):
    # ints and Fractions stay exact; anything else is computed in floating point
    if all(isinstance(v, (int, Fraction)) and not isinstance(v, bool) for v in values):
        return tuple(Fraction(v) for v in values)
    return tuple(float(v) for v in values)


def channel_from_theta_delta(theta: Real, delta: Real, canonical: bool = True) -> Channel:
    """Build a channel from its second eigenvalue and asymmetry.

    With ``canonical=True`` a negative ``delta`` is turned positive by
    relabelling the two states; the returned channel then has
    ``swapped=True``.
    """
    theta, delta = _coerce(theta, delta)
    if not abs(theta) < 1:
        raise ChannelError(f"|theta| must be < 1, got theta={theta}")
    swapped = False
    if canonical and delta < 0:
        delta = -delta
        swapped = True
    eps_plus = (1 - theta + delta) / 2
    eps_minus = (1 + theta + delta) / 2
    _check_unit("eps_plus", eps_plus)
    _check_unit("eps_minus", eps_minus)
    pi_plus = (1 - eps_minus) / (1 - theta)
    pi_minus = eps_plus / (1 - theta)
    if not (0 < pi_plus < 1):
        raise ChannelError(f"stationary distribution degenerate (pi_plus={pi_plus})")
    return Channel(theta, delta, eps_plus, eps_minus, pi_plus, pi_minus, swapped)


def channel_from_flip_probs(eps_plus: Real, eps_minus: Real, canonical: bool = True) -> Channel:
    eps_plus, eps_minus = _coerce(eps_plus, eps_minus)
    _check_unit("eps_plus", eps_plus)
    _check_unit("eps_minus", eps_minus)
    theta = eps_minus - eps_plus
    delta = eps_plus + eps_minus - 1
    return channel_from_theta_delta(theta, delta, canonical=canonical)


def canonicalize(channel: Channel) -> Channel:
    """Return the relabelled channel with ``delta >= 0`` (idempotent)."""
    if channel.delta >= 0:
        return channel
    flipped = channel_from_theta_delta(channel.theta, -channel.delta, canonical=False)
    return Channel(*(getattr(flipped, f) for f in _NUMERIC_FIELDS), swapped=not channel.swapped)


def derived_params(channel: Channel) -> DerivedParams:
    if channel.delta < 0:
        raise ChannelError("derived parameters require a canonical channel (delta >= 0)")
    return DerivedParams(channel.pi_ratio, channel.Delta)
