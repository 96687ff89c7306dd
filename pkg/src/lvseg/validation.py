"""Input validation helpers shared by the estimators."""
from __future__ import annotations

from collections.abc import Sequence

from .volume import BinaryMask, Scan, Volume


def check_state(v: Volume, *allowed: str) -> None:
    if v.intensity_state not in allowed:
        raise ValueError(f"expected intensity_state in {allowed}, got {v.intensity_state!r}")


def as_scans(X) -> list[Scan]:
    """Coerce ``X`` into a list of :class:`Scan`.

    Accepts a single scan, a sequence of scans, or a sequence of
    ``(image, brain)`` pairs.  Objects exposing ``to_scan()`` (phantom cases)
    are converted.
    """
    if isinstance(X, Scan) or hasattr(X, "to_scan"):
        X = [X]
    if not isinstance(X, Sequence) or isinstance(X, (str, bytes)):
        raise TypeError(f"expected a sequence of scans, got {type(X).__name__}")
    scans = []
    for i, item in enumerate(X):
        if hasattr(item, "to_scan"):
            item = item.to_scan()
        if isinstance(item, tuple) and len(item) == 2:
            item = Scan(*item, case_id=str(i))
        if not isinstance(item, Scan):
            raise TypeError(f"element {i}: expected Scan or (Volume, BinaryMask), "
                            f"got {type(item).__name__}")
        scans.append(item)
    return scans


def as_masks(y, n: int) -> list[BinaryMask]:
    if isinstance(y, BinaryMask):
        y = [y]
    y = list(y)
    if len(y) != n:
        raise ValueError(f"got {len(y)} masks for {n} scans")
    for i, m in enumerate(y):
        if not isinstance(m, BinaryMask):
            raise TypeError(f"mask {i}: expected BinaryMask, got {type(m).__name__}")
    return y


def check_standardized(scans: list[Scan]) -> None:
    for s in scans:
        if s.image.intensity_state != "standardized":
            raise ValueError(f"case {s.case_id!r}: expected a standardized image, "
                             f"got {s.image.intensity_state!r}")
