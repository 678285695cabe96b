"""Active vision RL: joint motor and sensory policies with a sensorimotor reward."""

__version__ = "0.1.0"
