"""memorybank-engine: long-term conversational memory for chat systems.

Stores timestamped dialogue per user, consolidates it into hierarchical
event summaries and personality portraits, retrieves relevant pieces by
dense vector similarity, and ages memory with an exponential-decay
forgetting model.
"""

from .core import (
    ConversationTurn,
    MemoryPiece,
    PieceKind,
    UserMemory,
    render_turn,
)
from .engine import ChatResult, MemoryBankEngine
from .errors import MemoryBankError
from .forgetting import DecayPolicy, ForgettingState, reinforce, retention, sweep
from .persistence import load_user, save_user
from .prompts import ComposedPrompt, compose_prompt
from .retrieval import (
    EmbeddingVector,
    HashingEmbedder,
    MemoryIndex,
    RemoteEmbedder,
    SearchHit,
)
from .summarization import (
    MockLanguageModel,
    RemoteChatModel,
    load_templates,
    personality_day,
    portrait_global,
    summarize_day,
    summarize_global,
)

__version__ = "0.1.0"

__all__ = [
    "ChatResult",
    "ComposedPrompt",
    "ConversationTurn",
    "DecayPolicy",
    "EmbeddingVector",
    "ForgettingState",
    "HashingEmbedder",
    "MemoryBankEngine",
    "MemoryBankError",
    "MemoryIndex",
    "MemoryPiece",
    "MockLanguageModel",
    "PieceKind",
    "RemoteChatModel",
    "RemoteEmbedder",
    "SearchHit",
    "UserMemory",
    "compose_prompt",
    "load_templates",
    "load_user",
    "personality_day",
    "portrait_global",
    "reinforce",
    "render_turn",
    "retention",
    "save_user",
    "summarize_day",
    "summarize_global",
    "sweep",
    "__version__",
]
