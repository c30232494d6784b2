from ._embanet_core import *  # noqa: F401,F403
