"""Microscopic traffic simulation with domain-randomized drivers and RL environments.

Subsystems:
  rng            deterministic per-concern random streams
  idm            car-following acceleration law
  sl2015         lane-change decision model
  randomization  per-vehicle parameter sampling and ablation specs
  frenet         polynomial trajectory sampling / scoring / selection
  scenario       road networks, vehicles, world stepping, spawning, collisions
  envs           on-ramp merging and two-lane freeway RL environments
  env_server     newline-delimited socket protocol around the environments
  mlp, sac       small MLPs with hand-rolled reverse-mode gradients; SAC/PASAC
  harness        training / cross-evaluation / density-sweep / ablation protocol
"""

__version__ = "0.1.0"
