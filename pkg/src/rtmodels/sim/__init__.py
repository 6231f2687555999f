"""Simulated managed platform: container, sensors, effectors and the causal adapter."""

from .adapter import CausalAdapter, build_source_model
from .container import CommandBatch, Container, EffectorCommand, SystemEvent, canonical_order, command
from .naming import BeanTemplate, ModuleTemplate

__all__ = [
    "BeanTemplate", "CausalAdapter", "CommandBatch", "Container", "EffectorCommand",
    "ModuleTemplate", "SystemEvent", "build_source_model", "canonical_order", "command",
]
