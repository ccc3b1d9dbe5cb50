"""Synthetic single-turn and multi-turn environments.

Both environments expose the same stepping protocol::

    state = env.reset(prompt_id)
    state, reward, done = env.step(state, action, rng)

Stepping a finished state raises ProtocolError.  Rewards are scalar floats;
episode return is the sum over turns.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DomainError, ProtocolError


def inject_reward_noise(reward: float, sigma: float, rng: np.random.Generator) -> float:
    """Add N(0, sigma^2) noise; sigma=0 is the exact identity (no draw)."""
    if sigma < 0:
        raise DomainError("reward noise sigma must be >= 0")
    if sigma == 0:
        return reward
    return reward + sigma * rng.standard_normal()


@dataclass(frozen=True)
class TargetState:
    prompt_id: int
    done: bool = False


class ContextualTargetEnv:
    """Single-turn bandit: each prompt has one target action.

    Noiseless reward is a pure function of (prompt, action): 1.0 on the
    target, ``partial_reward`` within +-1 of the target modulo A, the
    ``format_penalty`` on the reserved invalid action (if one is
    configured), 0.0 otherwise.  Gaussian noise of scale
    ``reward_noise_sigma`` is added on top.
    """

    max_turns = 1

    def __init__(
        self,
        targets,
        num_actions: int,
        partial_reward: float = 0.1,
        reward_noise_sigma: float = 0.0,
        format_penalty: float = -0.1,
        invalid_action: int | None = None,
    ):
        self.targets = tuple(int(t) for t in targets)
        self.num_actions = int(num_actions)
        if self.num_actions < 1:
            raise ConfigError("num_actions must be >= 1")
        if any(not 0 <= t < self.num_actions for t in self.targets):
            raise ConfigError("targets must be valid action indices")
        if reward_noise_sigma < 0:
            raise DomainError("reward noise sigma must be >= 0")
        if invalid_action is not None and not 0 <= invalid_action < self.num_actions:
            raise ConfigError("invalid_action out of range")
        if invalid_action is not None and invalid_action in self.targets:
            raise ConfigError("invalid_action collides with a target")
        self.partial_reward = float(partial_reward)
        self.reward_noise_sigma = float(reward_noise_sigma)
        self.format_penalty = float(format_penalty)
        self.invalid_action = invalid_action

    @property
    def num_prompts(self) -> int:
        return len(self.targets)

    def reward_table(self, prompt_id: int) -> np.ndarray:
        """Noiseless reward for every action under this prompt."""
        target = self.targets[self._check_prompt(prompt_id)]
        table = np.zeros(self.num_actions)
        table[(target + 1) % self.num_actions] = self.partial_reward
        table[(target - 1) % self.num_actions] = self.partial_reward
        table[target] = 1.0
        if self.invalid_action is not None:
            table[self.invalid_action] = self.format_penalty
        return table

    def reset(self, prompt_id: int) -> TargetState:
        return TargetState(self._check_prompt(prompt_id))

    def step(self, state: TargetState, action: int, rng) -> tuple[TargetState, float, bool]:
        if state.done:
            raise ProtocolError("step() on a finished episode")
        if not 0 <= action < self.num_actions:
            raise DomainError(f"action {action} out of range")
        reward = float(self.reward_table(state.prompt_id)[action])
        reward = inject_reward_noise(reward, self.reward_noise_sigma, rng)
        return replace(state, done=True), reward, True

    def _check_prompt(self, prompt_id: int) -> int:
        if not 0 <= prompt_id < self.num_prompts:
            raise IndexError(f"prompt {prompt_id} out of range [0, {self.num_prompts})")
        return prompt_id


# Hole pattern of the classic 4x4 lake layout (goal bottom-right).
CLASSIC_HOLES_4X4 = ((1, 1), (1, 3), (2, 3), (3, 0))

# Actions: up, down, left, right.
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class GridState:
    prompt_id: int
    cell: tuple[int, int]
    turn: int = 0
    done: bool = False


class SlipGridEnv:
    """Gridworld with slippery moves and sparse binary reward.

    With probability ``slip_prob`` the intended move is replaced by a
    uniformly random *other* direction (at slip_prob=1 the intended
    direction is never realised).  Moves off the grid leave the agent in
    place.  Reaching the goal ends the episode with reward 1.0; falling in
    a hole ends it with 0.0; otherwise the episode ends after
    ``max_turns``.  Prompts are distinct start cells.
    """

    num_actions = 4

    def __init__(
        self,
        grid_size: int = 4,
        slip_prob: float = 0.0,
        max_turns: int = 10,
        goal: tuple[int, int] | None = None,
        holes=None,
        start_cells=None,
        num_prompts: int | None = None,
    ):
        if grid_size < 2:
            raise ConfigError("grid_size must be >= 2")
        if not 0 <= slip_prob <= 1:
            raise DomainError("slip_prob must be in [0, 1]")
        if max_turns < 1:
            raise ConfigError("max_turns must be >= 1")
        self.grid_size = int(grid_size)
        self.slip_prob = float(slip_prob)
        self.max_turns = int(max_turns)
        self.goal = tuple(goal) if goal is not None else (grid_size - 1, grid_size - 1)
        if holes is None:
            holes = CLASSIC_HOLES_4X4 if grid_size == 4 else ()
        self.holes = frozenset(tuple(h) for h in holes)
        for cell in self.holes | {self.goal}:
            if not self._on_grid(cell):
                raise ConfigError(f"cell {cell} outside {grid_size}x{grid_size} grid")
        if self.goal in self.holes:
            raise ConfigError("goal cell cannot be a hole")
        if start_cells is None:
            safe = [
                (r, c)
                for r in range(grid_size)
                for c in range(grid_size)
                if (r, c) != self.goal and (r, c) not in self.holes
            ]
            if num_prompts is not None:
                if num_prompts > len(safe):
                    raise ConfigError(
                        f"{num_prompts} prompts requested but only {len(safe)} safe cells"
                    )
                safe = safe[:num_prompts]
            start_cells = safe
        self.start_cells = tuple(tuple(c) for c in start_cells)
        if num_prompts is not None and len(self.start_cells) != num_prompts:
            raise ConfigError("start_cells length does not match num_prompts")
        for cell in self.start_cells:
            if not self._on_grid(cell) or cell in self.holes or cell == self.goal:
                raise ConfigError(f"start cell {cell} is not a safe grid cell")

    @property
    def num_prompts(self) -> int:
        return len(self.start_cells)

    def _on_grid(self, cell) -> bool:
        r, c = cell
        return 0 <= r < self.grid_size and 0 <= c < self.grid_size

    def reset(self, prompt_id: int) -> GridState:
        if not 0 <= prompt_id < self.num_prompts:
            raise IndexError(f"prompt {prompt_id} out of range [0, {self.num_prompts})")
        return GridState(prompt_id, self.start_cells[prompt_id])

    def step(self, state: GridState, action: int, rng) -> tuple[GridState, float, bool]:
        if state.done:
            raise ProtocolError("step() on a finished episode")
        if not 0 <= action < self.num_actions:
            raise DomainError(f"action {action} out of range")
        direction = action
        if self.slip_prob > 0 and rng.random() < self.slip_prob:
            others = [a for a in range(self.num_actions) if a != action]
            direction = others[int(rng.integers(len(others)))]
        dr, dc = MOVES[direction]
        nxt = (state.cell[0] + dr, state.cell[1] + dc)
        if not self._on_grid(nxt):
            nxt = state.cell
        turn = state.turn + 1
        if nxt == self.goal:
            return GridState(state.prompt_id, nxt, turn, True), 1.0, True
        if nxt in self.holes:
            return GridState(state.prompt_id, nxt, turn, True), 0.0, True
        done = turn >= self.max_turns
        return GridState(state.prompt_id, nxt, turn, done), 0.0, done
