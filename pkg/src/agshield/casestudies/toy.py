"""Small built-in systems: a 2-agent counterexample LTS showing why the
restricted projection is needed, and a 3-state 2-agent MDP with an acyclic
dependency used by the learning tests."""

from dataclasses import dataclass

import numpy as np

from ..core import ActionSpace, Lts, Mdp, StateSpace, VarDomain
from ..projection import NAgentSystem, Projection


class CounterexampleToy:
    """Two binary variables, actions {z, p} per agent.

    From (0,0) the joint action sets each agent's variable to 1 iff that
    agent pressed p. Off-diagonal states idle under (z,z); the doubly
    pressed state (1,1) is absorbing under (p,p). Both agents must avoid
    (1,1): the standard projection of the safe set keeps everything, so
    only the restricted projection yields safe local shields.
    """

    name = "toy"
    n_agents = 2

    def __init__(self):
        self.space = StateSpace((
            VarDomain.int_range("x", 0, 1),
            VarDomain.int_range("y", 0, 1),
        ))
        self.actions = ActionSpace.uniform(2, ("z", "p"))
        gs = self.space.index
        ga = self.actions.joint_index
        self._lts = Lts.from_triples(self.space, self.actions, [
            (gs((0, 0)), ga((0, 0)), gs((0, 0))),
            (gs((0, 0)), ga((0, 1)), gs((0, 1))),
            (gs((0, 0)), ga((1, 0)), gs((1, 0))),
            (gs((0, 0)), ga((1, 1)), gs((1, 1))),
            (gs((0, 1)), ga((0, 0)), gs((0, 1))),
            (gs((1, 0)), ga((0, 0)), gs((1, 0))),
            (gs((1, 1)), ga((1, 1)), gs((1, 1))),
        ])
        self.initial = gs((0, 0))

    def guarantee_order(self):
        return [0, 1]

    def declared_deps(self):
        return []

    def obs_space(self, i):
        return StateSpace((self.space.dims[i],))

    def local_action_labels(self, i):
        return ("z", "p")

    def variant_key(self, i, assume):
        return ("toy", "pruned" if (assume and i > 0) else "raw")

    def local_game(self, i, assume):
        """Hand-written projected game; the raw variant keeps the absorbing
        pressed-state loop, the assumption-pruned one loses it."""
        space = self.obs_space(i)
        acts = ActionSpace.single(("z", "p"))
        triples = [(0, 0, 0), (0, 1, 1), (1, 0, 1)]
        if not (assume and i > 0):
            triples.append((1, 1, 1))
        return Lts.from_triples(space, acts, triples, allow_dead_ends=True)

    def local_safe_member(self, i):
        return np.array([True, False])

    def global_nagent(self, guard=None):
        prjs = [Projection(self.space, (0,)), Projection(self.space, (1,))]
        return NAgentSystem(self._lts, prjs, self.declared_deps())

    def agent_prop_member(self, i):
        out = np.ones(self.space.size, dtype=bool)
        out[self.space.index((1, 1))] = False
        return out

    def global_safe_member(self):
        return self.agent_prop_member(0)


@dataclass
class ExplicitBundle:
    """An explicit n-agent MDP plus everything the learning stack needs."""

    ns: NAgentSystem
    costs: list            # per agent: float64[n_obs, n_local_actions]
    initial: int
    episode_len: int = 4

    @property
    def n_agents(self):
        return self.ns.n_agents


def chain_toy():
    """3-state 2-agent MDP with one dependency: agent 0 depends on agent 1.

    Transition probabilities ignore agent 0's action entirely; agent 1's
    action steers the split from the start state. Both agents observe the
    full state and have strictly unique per-state cost minimizers.
    """
    space = StateSpace((VarDomain.int_range("pos", 0, 2),))
    actions = ActionSpace.uniform(2, ("a", "b"))
    P = np.zeros((3, 4, 3))
    for joint in range(actions.n_joint):
        a2 = actions.component(joint, 1)
        if a2 == 0:
            P[0, joint, 1] = 0.7
            P[0, joint, 2] = 0.3
        else:
            P[0, joint, 1] = 0.2
            P[0, joint, 2] = 0.8
        P[1, joint, 1] = 1.0
        P[2, joint, 2] = 1.0
    mdp = Mdp(space, actions, P)
    prjs = [Projection(space, (0,)), Projection(space, (0,))]
    ns = NAgentSystem(mdp, prjs, declared_deps=[(0, 1)])
    costs = [
        np.array([[0.2, 0.9], [1.0, 1.5], [0.1, 0.8]]),
        np.array([[1.0, 0.4], [0.3, 0.1], [0.5, 0.2]]),
    ]
    return ExplicitBundle(ns, costs, initial=0)
