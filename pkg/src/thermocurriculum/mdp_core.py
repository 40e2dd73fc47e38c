"""Finite MDPs with linearly parameterized rewards, plus the corner-feature gridworld."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

# (d_row, d_col) for up, down, left, right
ACTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))
ACTION_NAMES = ("up", "down", "left", "right")


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with transition tensor ``P[s, a, s']`` and features ``phi[s, a, i]``."""

    transitions: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        P = np.array(self.transitions, dtype=float)
        phi = np.array(self.features, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ConfigError(f"transitions must have shape (S, A, S), got {P.shape}")
        if phi.ndim != 3 or phi.shape[:2] != P.shape[:2]:
            raise ConfigError(
                f"features must have shape (S, A, L) matching transitions, got {phi.shape}"
            )
        if np.any(P < 0) or not np.allclose(P.sum(axis=2), 1.0, rtol=0, atol=1e-12):
            raise ConfigError("transition rows must be non-negative and sum to 1")
        P.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "features", phi)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[2]

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transitions": self.transitions.tolist(),
            "features": self.features.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        mdp = cls(np.asarray(doc["transitions"]), np.asarray(doc["features"]))
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise ConfigError("n_states/n_actions disagree with the transition tensor")
        return mdp

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load_json(cls, path) -> "TabularMdp":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class GridWorldSpec:
    width: int = 7
    height: int = 7
    feature_corners: tuple = ((0, 0), (6, 6))

    def __post_init__(self):
        corners = tuple(tuple(int(v) for v in c) for c in self.feature_corners)
        object.__setattr__(self, "feature_corners", corners)
        if self.width < 1 or self.height < 1:
            raise ConfigError("grid dimensions must be positive")
        if len(set(corners)) != len(corners):
            raise ConfigError(f"duplicate feature corners: {corners}")
        for row, col in corners:
            if not (0 <= row < self.height and 0 <= col < self.width):
                raise ConfigError(f"corner {(row, col)} outside {self.height}x{self.width} grid")

    def state_index(self, row: int, col: int) -> int:
        return row * self.width + col


def build_gridworld(spec: GridWorldSpec) -> TabularMdp:
    """Deterministic 4-action gridworld; moves into a wall leave the agent in place.

    Feature ``i`` is the indicator of standing on ``spec.feature_corners[i]``,
    identical for every action taken there.
    """
    n = spec.width * spec.height
    P = np.zeros((n, len(ACTIONS), n))
    for row in range(spec.height):
        for col in range(spec.width):
            s = spec.state_index(row, col)
            for a, (dr, dc) in enumerate(ACTIONS):
                r2 = min(max(row + dr, 0), spec.height - 1)
                c2 = min(max(col + dc, 0), spec.width - 1)
                P[s, a, spec.state_index(r2, c2)] = 1.0
    phi = np.zeros((n, len(ACTIONS), len(spec.feature_corners)))
    for i, (row, col) in enumerate(spec.feature_corners):
        phi[spec.state_index(row, col), :, i] = 1.0
    return TabularMdp(P, phi)


def linear_reward(mdp: TabularMdp, lam) -> np.ndarray:
    """Reward table ``r[s, a] = lam . phi[s, a]``."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (mdp.n_features,):
        raise ConfigError(
            f"task parameters have shape {lam.shape}, MDP has {mdp.n_features} features"
        )
    return mdp.features @ lam
