"""Deterministic SVG figures of partition boxes and point sets on the unit torus."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

from .errors import AbcError

VIEW = 1000
MAX_BOXES = 100_000


def _c(x) -> str:
    return f"{float(x) * VIEW:.6f}"


def svg(boxes: Sequence[tuple] = (), points: Optional[Iterable[tuple]] = None,
        title: str = "") -> str:
    """SVG text with theta to the right and r upward on a 1000 x 1000 viewbox.

    ``boxes`` holds ``(theta_lo, theta_hi, r_lo, r_hi)``; ``points`` holds
    ``(theta, r)``.  Coordinates are printed with six decimals, so equal input
    gives byte-identical output.
    """
    boxes = list(boxes)
    if len(boxes) > MAX_BOXES:
        raise AbcError("USAGE", f"{len(boxes)} boxes exceed the limit of {MAX_BOXES}")
    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {VIEW} {VIEW}" '
             f'width="{VIEW}" height="{VIEW}">']
    if title:
        lines.append(f"<title>{title}</title>")
    lines.append(f'<rect x="0" y="0" width="{VIEW}" height="{VIEW}" fill="white" stroke="black"/>')
    lines.append('<g fill="steelblue" fill-opacity="0.6" stroke="none">')
    for th0, th1, r0, r1 in boxes:
        lines.append(f'<rect x="{_c(th0)}" y="{_c(1 - float(r1))}" '
                     f'width="{_c(float(th1) - float(th0))}" height="{_c(float(r1) - float(r0))}"/>')
    lines.append("</g>")
    if points is not None:
        lines.append('<g fill="crimson" stroke="none">')
        for th, r in points:
            lines.append(f'<circle cx="{_c(th)}" cy="{_c(1 - float(r))}" r="1.500000"/>')
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def count_rects(text: str) -> int:
    """Number of partition rectangles in an SVG produced by :func:`svg`."""
    return text.count("<rect ") - 1
