"""
Generator backends behind one completion interface
"""

from .base import BaseGenerator, split_tokens
from .scripted import ScriptedGenerator
from .remote import RemoteGenerator
from .openai_chat import OpenAIChatGenerator

__all__ = [
    "BaseGenerator",
    "ScriptedGenerator",
    "RemoteGenerator",
    "OpenAIChatGenerator",
    "split_tokens",
]
