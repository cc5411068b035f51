"""Deterministic SVG rendering of episode trajectories.

World coordinates map to the SVG canvas at a fixed SCALE of 60 px per
meter with the y axis flipped (SVG y grows downward). Robot paths are
colored per robot; circles mark the targets in the same color.
"""
from __future__ import annotations

from .world import Box, Circle

SCALE = 60.0  # px per meter

PALETTE = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e",
    "#9467bd", "#8c564b", "#e377c2", "#17becf",
    "#bcbd22", "#7f7f7f",
]


def robot_color(i: int) -> str:
    return PALETTE[i % len(PALETTE)]


def episode_svg(record) -> str:
    """Render an EpisodeRecord (see harness) to an SVG document string."""
    bounds = record.config.bounds
    paths = [[pose[:2]] for pose in record.start_poses]
    for step in record.steps:
        for i, pose in enumerate(step.poses):
            paths[i].append(pose[:2])
    return render_svg(
        bounds=(bounds.xmin, bounds.ymin, bounds.xmax, bounds.ymax),
        obstacles=record.config.obstacles,
        paths=paths,
        goals=record.goals,
        goal_radius=0.2,
        title=f"{record.scenario} seed {record.seed}",
    )


def render_svg(bounds, obstacles, paths, goals, goal_radius=0.2, title="") -> str:
    xmin, ymin, xmax, ymax = bounds
    width = (xmax - xmin) * SCALE
    height = (ymax - ymin) * SCALE

    def px(x: float) -> float:
        return round((x - xmin) * SCALE, 2)

    def py(y: float) -> float:
        return round((ymax - y) * SCALE, 2)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<title>{title}</title>',
        f'<rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" '
        f'fill="white" stroke="black" stroke-width="2"/>',
    ]
    for obs in obstacles:
        if isinstance(obs, Circle):
            out.append(f'<circle cx="{px(obs.cx)}" cy="{py(obs.cy)}" '
                       f'r="{round(obs.radius * SCALE, 2)}" fill="#b0b0b0"/>')
        elif isinstance(obs, Box):
            out.append(f'<rect x="{px(obs.xmin)}" y="{py(obs.ymax)}" '
                       f'width="{round((obs.xmax - obs.xmin) * SCALE, 2)}" '
                       f'height="{round((obs.ymax - obs.ymin) * SCALE, 2)}" '
                       f'fill="#b0b0b0"/>')
    for i, path in enumerate(paths):
        color = robot_color(i)
        pts = " ".join(f"{px(x)},{py(y)}" for x, y in path)
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="2"/>')
        sx, sy = path[0]
        out.append(f'<circle cx="{px(sx)}" cy="{py(sy)}" r="4" fill="{color}"/>')
    for i, (gx, gy) in enumerate(goals):
        color = robot_color(i)
        out.append(f'<circle cx="{px(gx)}" cy="{py(gy)}" '
                   f'r="{round(goal_radius * SCALE, 2)}" fill="none" '
                   f'stroke="{color}" stroke-width="2.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def svg_from_jsonl(text: str) -> str:
    """Re-render a plot from a trajectory JSON-lines log."""
    import json

    lines = [json.loads(line) for line in text.strip().splitlines()]
    header = lines[0]
    if header.get("type") != "header":
        raise ValueError("trajectory log must start with a header line")
    cfg = header["config"]
    from .scenarios import config_from_dict
    config = config_from_dict(cfg)
    paths = [[tuple(p[:2])] for p in header["start_poses"]]
    for entry in lines[1:]:
        if entry.get("type") != "step":
            continue
        for i, pose in enumerate(entry["poses"]):
            paths[i].append(tuple(pose[:2]))
    bounds = config.bounds
    return render_svg(
        bounds=(bounds.xmin, bounds.ymin, bounds.xmax, bounds.ymax),
        obstacles=config.obstacles,
        paths=paths,
        goals=[tuple(g) for g in header["goals"]],
        title=f"{header['scenario']} seed {header['seed']}",
    )
