"""White-box adversarial policies at desk scale: numpy MLPs and PPO, two
small environments, a frozen tiny transformer, and the experiment harness."""

__version__ = "0.1.0"
