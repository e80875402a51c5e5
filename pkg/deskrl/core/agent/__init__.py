from deskrl.core.agent.base import (
    ActionOutput,
    Agent,
    AgentConfig,
    EpsilonSchedule,
    LearnStats,
    OptimConfig,
    agent_class,
    agent_config,
    agent_names,
    build_agent,
    epsilon,
    register_agent,
    registry_listing,
    target_sync,
)
from deskrl.core.agent.ddpg import DDPGAgent
from deskrl.core.agent.dqn import DQNAgent, compose_rainbow, double_dqn_target, dqn_target, project_distribution
from deskrl.core.agent.ppo import PPOAgent, gae
from deskrl.core.agent.reinforce import ReinforceAgent

__all__ = [
    "ActionOutput",
    "Agent",
    "AgentConfig",
    "DDPGAgent",
    "DQNAgent",
    "EpsilonSchedule",
    "LearnStats",
    "OptimConfig",
    "PPOAgent",
    "ReinforceAgent",
    "agent_class",
    "agent_config",
    "agent_names",
    "build_agent",
    "compose_rainbow",
    "double_dqn_target",
    "dqn_target",
    "epsilon",
    "gae",
    "project_distribution",
    "register_agent",
    "registry_listing",
    "target_sync",
]
