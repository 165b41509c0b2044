"""Deterministic piano-hand control stack: simplified plant, song timelines,
shaped reward, F1 scoring, domain randomization, a from-scratch actor-critic
trainer, and execution modes that swap observation sources between the
simulator and an external plant."""

__version__ = "0.1.0"
