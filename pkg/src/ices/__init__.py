"""Intrinsic exploration scaffolds for cooperative multi-agent RL on a numpy autodiff core."""
