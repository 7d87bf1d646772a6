"""Action selection: continuous-observation MCTS and the baseline planners.

The tree alternates belief nodes and belief-action nodes.  Selection at
belief nodes follows the polynomial UCT rule; belief-action nodes grow their
(simulated-observation) children under progressive widening so continuous
observations cannot degenerate the search.  A search never mutates the world
or the root belief; distinct planning iterations rebuild the tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class TrappedVehicleError(RuntimeError):
    """No feasible action at the current pose; the mission must end."""


def default_depth_exponent(depth):
    """Polynomial depth schedule used for both e_d and alpha_d."""
    return 1.0 / (2.0 * (depth + 1))


@dataclass
class SearchConfig:
    """Knobs for one tree search."""

    horizon: int = 5
    rollouts: int = 250
    discount: float = 0.9
    seed: int = 0
    exploration_exponents: tuple = ()   # e_d overrides, indexed by depth
    widening_exponents: tuple = ()      # alpha_d overrides, indexed by depth

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.rollouts < 1:
            raise ValueError("rollouts must be >= 1")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        for e in (*self.exploration_exponents, *self.widening_exponents):
            if not 0.0 < e < 1.0:
                raise ValueError("depth exponents must lie in (0, 1)")

    def exploration_at(self, depth):
        if depth < len(self.exploration_exponents):
            return self.exploration_exponents[depth]
        return default_depth_exponent(depth)

    def widening_at(self, depth):
        if depth < len(self.widening_exponents):
            return self.widening_exponents[depth]
        return default_depth_exponent(depth)


class BeliefNode:
    """Tree node holding a pose and the belief consistent with its history."""

    kind = "belief"
    __slots__ = ("pose", "belief", "visits", "children", "actions")

    def __init__(self, pose, belief, actions=None):
        self.pose = pose
        self.belief = belief
        self.visits = 0           # number of action selections made here
        self.children = []        # BeliefActionNode, in action-index order
        self.actions = actions    # feasible primitives, resolved lazily


class BeliefActionNode:
    """Child of a belief node: one action plus its simulated outcomes."""

    kind = "belief-action"
    __slots__ = ("action", "index", "coords", "alpha", "visits", "value", "children")

    def __init__(self, action, index, coords, alpha):
        self.action = action
        self.index = index
        self.coords = coords      # sample points in belief coordinates
        self.alpha = alpha        # widening exponent at this node's depth
        self.visits = 0
        self.value = 0.0          # running mean of discounted returns
        self.children = []        # BeliefNode


@dataclass
class PlannerDecision:
    """Outcome of one planning call."""

    action: object
    action_stats: list           # (action index, visits, mean return) per root child
    max_values: object = None    # MaxValueSet used, for MVI planners
    root: BeliefNode = None      # root of the search tree, kept for inspection

    def __post_init__(self):
        if self.action is None:
            raise ValueError("decision needs an action")


def puct_value(mean_return, parent_visits, child_visits, exploration_exponent):
    """Polynomial UCT score: mean return plus a visit-count bonus.

    Unvisited children score +inf so they are always expanded first.
    """
    if child_visits == 0:
        return math.inf
    return mean_return + math.sqrt(parent_visits**exploration_exponent / child_visits)


def widen(visit_count, widening_exponent, children):
    """Progressive-widening decision for a belief-action node.

    Returns ``None`` when the visit count crosses the next ``floor(N^alpha)``
    step (the caller must create a new child), otherwise the least-visited
    existing child, ties to the first created.
    """
    if visit_count < 1:
        raise ValueError("visit_count counts the current visit and must be >= 1")
    if not children:
        return None
    if math.floor(visit_count**widening_exponent) > math.floor(
        (visit_count - 1) ** widening_exponent
    ):
        return None
    return min(children, key=lambda c: c.visits)


def _select(node, config, view, depth):
    """Pick a belief-action child by PUCT, creating unvisited ones in order."""
    if len(node.children) < len(node.actions):
        i = len(node.children)
        action = node.actions[i]
        child = BeliefActionNode(
            action, i, view.belief_coords(action, depth), config.widening_at(depth)
        )
        node.children.append(child)
        return child
    exploration_exponent = config.exploration_at(depth)
    best, best_score = None, -math.inf
    for child in node.children:
        score = puct_value(child.value, node.visits, child.visits, exploration_exponent)
        if score > best_score:
            best, best_score = child, score
    return best


def _advance_sampled(node, ba, rng):
    """Progressive widening: resimulate or branch a new belief child."""
    target = widen(ba.visits, ba.alpha, ba.children)
    if target is not None:
        return target
    _, child_belief = node.belief.simulate_and_condition(ba.coords, rng)
    child = BeliefNode(ba.action.terminal_pose, child_belief)
    ba.children.append(child)
    return child


def _advance_maximum_likelihood(node, ba, rng):
    """Single deterministic child whose observations are the posterior mean."""
    if ba.children:
        return ba.children[0]
    mean, _ = node.belief.posterior(ba.coords)
    child = BeliefNode(ba.action.terminal_pose, node.belief.condition(ba.coords, mean))
    ba.children.append(child)
    return child


def _search(belief, pose, view, reward_fn, config, advance, max_values):
    rng = np.random.default_rng(config.seed)
    actions = view.feasible_actions(pose)
    if not actions:
        raise TrappedVehicleError(f"no feasible action at pose {pose}")
    root = BeliefNode(pose, belief, actions)

    for _ in range(config.rollouts):
        node = root
        path = []
        rewards = []
        for depth in range(config.horizon):
            if node.actions is None:
                node.actions = view.feasible_actions(node.pose)
            if not node.actions:
                break
            ba = _select(node, config, view, depth)
            node.visits += 1
            ba.visits += 1
            rewards.append(float(np.sum(reward_fn(node.belief, ba.coords))))
            path.append(ba)
            node = advance(node, ba, rng)
        ret = 0.0
        for ba, r in zip(reversed(path), reversed(rewards)):
            ret = r + config.discount * ret
            ba.value += (ret - ba.value) / ba.visits

    best = max(root.children, key=lambda c: (c.visits, c.value, -c.index))
    stats = [(c.index, c.visits, c.value) for c in root.children]
    return PlannerDecision(best.action, stats, max_values, root)


def plan_mcts(belief, pose, view, reward_fn, config, max_values=None):
    """Continuous-observation MCTS: PUCT selection, progressive widening,
    discounted backups; executes the most-visited root action.

    ``view`` supplies ``feasible_actions(pose)`` and
    ``belief_coords(action, depth)``; ``reward_fn(belief, coords)`` returns
    per-location heuristic rewards.
    """
    return _search(belief, pose, view, reward_fn, config, _advance_sampled, max_values)


def plan_mcts_ml(belief, pose, view, reward_fn, config):
    """MCTS under the maximum-likelihood observation assumption.

    Identical search except each belief-action node has exactly one belief
    child conditioned on the posterior-mean observations, so the whole search
    is deterministic.
    """
    return _search(
        belief, pose, view, reward_fn, config, _advance_maximum_likelihood, None
    )


def plan_myopic(belief, pose, view, reward_fn):
    """Greedy one-step planner: argmax of summed reward over feasible actions."""
    actions = view.feasible_actions(pose)
    if not actions:
        raise TrappedVehicleError(f"no feasible action at pose {pose}")
    rewards = [
        float(np.sum(reward_fn(belief, view.belief_coords(a, 0)))) for a in actions
    ]
    best = int(np.argmax(rewards))
    stats = [(i, 1, r) for i, r in enumerate(rewards)]
    return PlannerDecision(actions[best], stats, None, None)


def plan_boustrophedon(geofence, row_spacing, sample_spacing):
    """Serpentine coverage waypoints over a rectangular geofence.

    Rows run along x and alternate direction, separated by ``row_spacing``;
    the polyline is densified every ``sample_spacing`` of arc length so the
    waypoints double as observation points.  Rows sit on both boundary edges
    whenever the height is a multiple of the spacing; a spacing larger than
    the height degenerates to a single row.
    """
    x0, y0, x1, y1 = map(float, geofence)
    if row_spacing <= 0 or sample_spacing <= 0:
        raise ValueError("spacings must be positive")
    if x1 <= x0 or y1 <= y0:
        raise ValueError("geofence must have positive extent")
    height = y1 - y0
    if row_spacing > height:
        ys = [y0]
    else:
        ys = [y0 + i * row_spacing for i in range(int(math.floor(height / row_spacing)) + 1)]

    corners = []
    for i, y in enumerate(ys):
        left_to_right = i % 2 == 0
        a = (x0, y) if left_to_right else (x1, y)
        b = (x1, y) if left_to_right else (x0, y)
        corners.append(a)
        corners.append(b)

    waypoints = [np.asarray(corners[0], dtype=float)]
    for a, b in zip(corners, corners[1:]):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        seg = np.linalg.norm(b - a)
        if seg == 0.0:
            continue
        direction = (b - a) / seg
        s = sample_spacing
        while s < seg - 1e-12:
            waypoints.append(a + s * direction)
            s += sample_spacing
        waypoints.append(b)
    return np.asarray(waypoints)
