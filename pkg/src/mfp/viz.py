"""SVG scene plots.

No rendering dependency: plots are written as standalone SVG with one path
element per plotted track (pasts, ground-truth futures, per-mode predicted
means) plus covariance ellipses for the predictive densities.  Colors
follow the usual legend: past blue, ground-truth future orange, and modes
red / purple / green.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PAST_COLOR = "#1f77b4"
FUTURE_COLOR = "#ff7f0e"
MODE_COLORS = ("#d62728", "#9467bd", "#2ca02c",
               "#8c564b", "#e377c2", "#17becf")


def _path_d(points: np.ndarray) -> str:
    cmds = [f"M {points[0, 0]:.2f} {points[0, 1]:.2f}"]
    for p in points[1:]:
        cmds.append(f"L {p[0]:.2f} {p[1]:.2f}")
    return " ".join(cmds)


def _track(points, color, width, dash=None, opacity=1.0) -> str:
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<path d="{_path_d(points)}" fill="none" stroke="{color}" '
            f'stroke-width="{width:.2f}" stroke-opacity="{opacity:.2f}"'
            f'{dash_attr}/>')


def _ellipse(mu, sigma, rho, color, scale=1.0) -> str:
    """1-sigma ellipse of a bivariate normal: principal axes from the
    covariance eigendecomposition."""
    sx, sy = float(sigma[0]), float(sigma[1])
    cov_xy = rho * sx * sy
    tr = sx * sx + sy * sy
    det = sx * sx * sy * sy - cov_xy * cov_xy
    disc = max(tr * tr / 4.0 - det, 0.0)
    l1 = tr / 2.0 + math.sqrt(disc)
    l2 = max(tr / 2.0 - math.sqrt(disc), 0.0)
    if abs(cov_xy) > 1e-12:
        angle = math.degrees(math.atan2(l1 - sx * sx, cov_xy))
    else:
        angle = 0.0 if sx >= sy else 90.0
    rx = scale * math.sqrt(l1)
    ry = scale * math.sqrt(l2)
    return (f'<ellipse cx="0" cy="0" rx="{rx:.3f}" ry="{ry:.3f}" '
            f'fill="{color}" fill-opacity="0.12" stroke="{color}" '
            f'stroke-opacity="0.4" stroke-width="0.08" '
            f'transform="translate({mu[0]:.2f} {mu[1]:.2f}) '
            f'rotate({angle:.1f})"/>')


def scene_svg(scene, per_mode: dict | None = None, title: str | None = None,
              ellipse_every: int = 3, size: int = 640) -> str:
    """Render one scene.

    per_mode maps mode index -> (means (N,T,2), sigmas (N,T,2), rhos (N,T))
    in world coordinates; pass None to plot only the data.  Every track is
    exactly one SVG path element.
    """
    pasts = scene.past
    futures = scene.future
    pts = [pasts.reshape(-1, 2)]
    if futures.shape[1]:
        pts.append(futures.reshape(-1, 2))
    if per_mode:
        for means, _, _ in per_mode.values():
            pts.append(np.asarray(means).reshape(-1, 2))
    allp = np.concatenate(pts, axis=0)
    lo = allp.min(axis=0) - 4.0
    hi = allp.max(axis=0) + 4.0
    span = np.maximum(hi - lo, 1e-6)

    body = []
    if per_mode:
        for mode in sorted(per_mode):
            means, sigmas, rhos = per_mode[mode]
            means = np.asarray(means)
            sigmas = np.asarray(sigmas)
            rhos = np.asarray(rhos)
            color = MODE_COLORS[mode % len(MODE_COLORS)]
            for n in range(means.shape[0]):
                steps = list(range(0, means.shape[1], ellipse_every))
                if (means.shape[1] - 1) not in steps:
                    steps.append(means.shape[1] - 1)
                for j in steps:
                    body.append(_ellipse(means[n, j], sigmas[n, j],
                                         rhos[n, j], color))
    for n in range(pasts.shape[0]):
        body.append(_track(pasts[n], PAST_COLOR, 0.35))
    if futures.shape[1]:
        for n in range(futures.shape[0]):
            body.append(_track(futures[n], FUTURE_COLOR, 0.35))
    if per_mode:
        for mode in sorted(per_mode):
            means = np.asarray(per_mode[mode][0])
            color = MODE_COLORS[mode % len(MODE_COLORS)]
            for n in range(means.shape[0]):
                body.append(_track(means[n], color, 0.25, dash="0.6 0.4",
                                   opacity=0.9))

    caption = ""
    if title:
        caption = (f'<text x="{lo[0] + 1.0:.2f}" y="{lo[1] + 2.0:.2f}" '
                   f'font-size="1.6" fill="#333">{escape(title)}</text>')
    # flip y so north points up
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
        f'height="{size:.0f}" viewBox="{lo[0]:.2f} {lo[1]:.2f} '
        f'{span[0]:.2f} {span[1]:.2f}">'
        f'<g transform="translate(0 {lo[1] + hi[1]:.2f}) scale(1 -1)">'
        f'<rect x="{lo[0]:.2f}" y="{lo[1]:.2f}" width="{span[0]:.2f}" '
        f'height="{span[1]:.2f}" fill="#fafafa"/>'
        + "".join(body) + "</g>" + caption + "</svg>"
    )
