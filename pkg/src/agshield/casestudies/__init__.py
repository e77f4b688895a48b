"""Case-study model factories.

Every model exposes the same duck-typed surfaces:

synthesis:  n_agents, guarantee_order(), variant_key(i, assume),
            local_game(i, assume), local_safe_member(i), obs_space(i),
            local_action_labels(i)
oracle:     global_nagent(), agent_prop_member(i), global_safe_member()
            (small instances only, guarded)
simulation: initial_state(), observe_index(i, state),
            step(state, actions, rng) -> (state', costs, safe),
            is_safe(state), default_episode_len, n_obs(i), n_local_actions(i)
learning:   declared_deps(), agent_cost(i, obs, action), plus optional
            batched episode kernels (eval_episodes / train_episodes)
"""

from .toy import CounterexampleToy, chain_toy
from .platoon import PlatoonModel, PlatoonParams
from .plant import PlantModel, PlantParams

__all__ = [
    "CounterexampleToy",
    "chain_toy",
    "PlatoonModel",
    "PlatoonParams",
    "PlantModel",
    "PlantParams",
]
