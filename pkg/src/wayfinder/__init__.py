"""Following natural-language route directions in environments the robot has
never seen: language grounding, semantic-map particle filtering, and a
belief-space policy trained by imitation."""

__version__ = "0.1.0"
