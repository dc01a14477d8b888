"""Hand-written SVG charts: velocity and target-acceleration traces, grouped bars.

Rendering is a pure function of its input and uses fixed number formatting,
so identical input gives identical bytes.  Traces are shifted so that the first
impact detection sits at t = 0; logs stay in absolute time.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 360
MARGIN = dict(left=64, right=150, top=36, bottom=48)
PALETTE = ("#7b3294", "#2166ac", "#d6604d", "#e0b000", "#1b7837", "#762a83")
VARIANT_COLORS = {"proposed": PALETTE[0], "no_rs": PALETTE[1], "no_interim": PALETTE[2], "no_impact_map": PALETTE[3]}
MAX_POINTS = 1500


def _f(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(float(t), 10))
        t += step
    return ticks


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str, xlim, ylim):
        self.parts: list[str] = []
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        self.pw = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    def X(self, x: float) -> float:
        return MARGIN["left"] + (x - self.x0) / (self.x1 - self.x0) * self.pw

    def Y(self, y: float) -> float:
        return MARGIN["top"] + (1.0 - (y - self.y0) / (self.y1 - self.y0)) * self.ph

    def axes(self, xticks=True):
        L, T = MARGIN["left"], MARGIN["top"]
        p = self.parts
        p.append(f'<rect x="{L}" y="{T}" width="{self.pw}" height="{self.ph}" fill="none" stroke="#444"/>')
        for t in _nice_ticks(self.y0, self.y1):
            y = self.Y(t)
            p.append(f'<line x1="{L}" y1="{_f(y)}" x2="{L + self.pw}" y2="{_f(y)}" stroke="#ddd"/>')
            p.append(f'<text x="{L - 6}" y="{_f(y + 4)}" text-anchor="end">{t:g}</text>')
        if xticks:
            for t in _nice_ticks(self.x0, self.x1):
                x = self.X(t)
                p.append(f'<line x1="{_f(x)}" y1="{T + self.ph}" x2="{_f(x)}" y2="{T + self.ph + 4}" stroke="#444"/>')
                p.append(f'<text x="{_f(x)}" y="{T + self.ph + 18}" text-anchor="middle">{t:g}</text>')
        p.append(f'<text x="{L + self.pw / 2:.2f}" y="{HEIGHT - 8}" text-anchor="middle">{escape(self.xlabel)}</text>')
        p.append(f'<text x="14" y="{T + self.ph / 2:.2f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {T + self.ph / 2:.2f})">{escape(self.ylabel)}</text>')
        p.append(f'<text x="{L}" y="{T - 12}" font-weight="bold">{escape(self.title)}</text>')

    def polyline(self, xs, ys, color: str, dashed: bool = False, width: float = 1.5):
        pts = " ".join(f"{_f(self.X(x))},{_f(self.Y(y))}" for x, y in zip(xs, ys))
        dash = ' stroke-dasharray="6 4"' if dashed else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{dash}/>')

    def vline(self, x: float, color: str = "#888"):
        if self.x0 <= x <= self.x1:
            X = _f(self.X(x))
            self.parts.append(f'<line x1="{X}" y1="{MARGIN["top"]}" x2="{X}" '
                              f'y2="{MARGIN["top"] + self.ph}" stroke="{color}" stroke-dasharray="2 3"/>')

    def legend(self, entries: Sequence[tuple[str, str, bool]]):
        x = WIDTH - MARGIN["right"] + 12
        for k, (label, color, dashed) in enumerate(entries):
            y = MARGIN["top"] + 10 + 18 * k
            dash = ' stroke-dasharray="6 4"' if dashed else ""
            self.parts.append(f'<line x1="{x}" y1="{y}" x2="{x + 22}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>')
            self.parts.append(f'<text x="{x + 28}" y="{y + 4}">{escape(label)}</text>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
                f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">')
        body = "\n".join(self.parts)
        return f'{head}\n<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n{body}\n</svg>\n'


def _decimate(n: int) -> np.ndarray:
    step = max(1, int(np.ceil(n / MAX_POINTS)))
    idx = np.arange(0, n, step)
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return idx


def aligned_time(log) -> np.ndarray:
    """Log time shifted so the first reported detection is at t = 0 (unshifted if none)."""
    if len(log.time) == 0:
        raise ValueError("log is empty")
    det = log.first_detection_step
    return log.time - (log.time[det] if det is not None else 0.0)


def velocity_svg(log, robot: int = 0, title: str | None = None) -> str:
    """End-effector linear velocity components with the reference dashed on top."""
    t = aligned_time(log)
    idx = _decimate(len(t))
    v, r = log.ee_twist[:, robot, :2], log.ref_twist[:, robot, :2]
    lo = float(min(v.min(), r.min()))
    hi = float(max(v.max(), r.max()))
    pad = 0.05 * (hi - lo if hi > lo else 1.0)
    c = _Canvas(title or f"robot {robot + 1} velocity", "time from detection [s]", "velocity [m/s]",
                (float(t[0]), float(t[-1])), (lo - pad, hi + pad))
    c.axes()
    c.vline(0.0)
    names = ("x", "y")
    for k in range(2):
        c.polyline(t[idx], v[idx, k], PALETTE[k])
        c.polyline(t[idx], r[idx, k], PALETTE[k], dashed=True, width=1.2)
    c.legend([(f"v{names[k]}", PALETTE[k], False) for k in range(2)]
             + [(f"v{names[k]} ref", PALETTE[k], True) for k in range(2)])
    return c.render()


def target_accel_svg(logs: Mapping[str, object], window: tuple = (-0.3, 0.5), title: str = "target acceleration") -> str:
    """Norm of the stacked target acceleration per variant, aligned at detection."""
    if not logs:
        raise ValueError("no logs to plot")
    series = []
    ymax = 0.0
    for name, log in logs.items():
        t = aligned_time(log)
        keep = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
        if not keep.any():
            raise ValueError(f"log {name!r} has no samples in the plot window")
        tn, yn = t[keep], log.target_norm[keep]
        idx = _decimate(len(tn))
        series.append((name, tn[idx], yn[idx]))
        ymax = max(ymax, float(yn.max()))
    c = _Canvas(title, "time from detection [s]", "|target acceleration|", window, (0.0, 1.05 * ymax if ymax > 0 else 1.0))
    c.axes()
    c.vline(0.0)
    entries = []
    for k, (name, tn, yn) in enumerate(series):
        color = VARIANT_COLORS.get(name, PALETTE[k % len(PALETTE)])
        c.polyline(tn, yn, color)
        entries.append((name, color, False))
    c.legend(entries)
    return c.render()


def bar_chart_svg(table: Mapping[tuple, tuple], title: str = "mean max target acceleration",
                  ylabel: str = "mean max |target acceleration|") -> str:
    """Grouped bars from {(variant, group): (mean, n, std)}; one colour per variant."""
    if not table:
        raise ValueError("empty summary table")
    variants = list(dict.fromkeys(v for v, _ in table))
    groups = sorted(dict.fromkeys(g for _, g in table))
    ymax = max(m + s for m, _, s in table.values())
    c = _Canvas(title, "", ylabel, (0.0, float(len(groups))), (0.0, 1.1 * ymax if ymax > 0 else 1.0))
    c.axes(xticks=False)
    slot = c.pw / len(groups)
    bw = 0.8 * slot / len(variants)
    for gi, g in enumerate(groups):
        gx = MARGIN["left"] + gi * slot + 0.1 * slot
        c.parts.append(f'<text x="{_f(MARGIN["left"] + (gi + 0.5) * slot)}" y="{MARGIN["top"] + c.ph + 18}" '
                       f'text-anchor="middle">{escape(str(g))}</text>')
        for vi, v in enumerate(variants):
            if (v, g) not in table:
                continue
            m, _, s = table[(v, g)]
            x = gx + vi * bw
            y = c.Y(m)
            color = VARIANT_COLORS.get(v, PALETTE[vi % len(PALETTE)])
            c.parts.append(f'<rect class="bar" x="{_f(x)}" y="{_f(y)}" width="{_f(bw * 0.9)}" '
                           f'height="{_f(c.Y(0.0) - y)}" fill="{color}"/>')
            if s > 0:
                xm = x + bw * 0.45
                c.parts.append(f'<line x1="{_f(xm)}" y1="{_f(c.Y(m - s))}" x2="{_f(xm)}" y2="{_f(c.Y(m + s))}" stroke="#222"/>')
    c.legend([(v, VARIANT_COLORS.get(v, PALETTE[i % len(PALETTE)]), False) for i, v in enumerate(variants)])
    return c.render()


def write_svg(text: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path
