"""AlignBot: retrieval-augmented, human-in-the-loop task planning.

Stores multimodal interaction history, generates instruction-formatted
cues through a pluggable adapter backend, retrieves prioritized past
successes, assembles planner prompts, validates the resulting plans, and
learns case priorities from session outcomes.
"""

__version__ = "0.1.0"
