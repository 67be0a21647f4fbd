"""Object size groups by the larger relative side of the bounding box.

ratio >= 0.25 is large, ratio <= 0.05 is small, anything between is medium.
Both boundaries are closed toward the outer groups.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Union

LARGE, MEDIUM, SMALL = 0, 1, 2
NAMES = ("large", "medium", "small")
T_SMALL = Fraction(1, 20)
T_LARGE = Fraction(1, 4)


def group_of_ratio(ratio: Union[float, Fraction]) -> int:
    # floats are read by their shortest decimal repr so 0.05 means exactly 1/20
    r = ratio if isinstance(ratio, Fraction) else Fraction(repr(float(ratio)))
    if r >= T_LARGE:
        return LARGE
    if r <= T_SMALL:
        return SMALL
    return MEDIUM


def group_of_box(box, width: int, height: int) -> int:
    """Group for an inclusive pixel box; exact rational comparison."""
    x0, y0, x1, y1 = box
    ratio = max(Fraction(y1 - y0 + 1, height), Fraction(x1 - x0 + 1, width))
    return group_of_ratio(ratio)
