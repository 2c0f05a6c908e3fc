"""World-model navigation agent with a self-evolving contextual memory."""

__version__ = "0.1.0"
