"""Two-lane highway driving simulator with mode-switching surrogate drivers,
driving-intent classifiers, and a live labeling session service."""

__version__ = "0.1.0"

from .domain import Lane, LaneGeometry, ModeLabel, VehicleState, lane_of

__all__ = [
    "Lane",
    "LaneGeometry",
    "ModeLabel",
    "VehicleState",
    "lane_of",
]
