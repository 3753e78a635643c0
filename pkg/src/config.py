import os
from dataclasses import dataclass, replace

from dotenv import load_dotenv

load_dotenv()


@dataclass(frozen=True)
class Settings:
    """Bounds shared by the samplers, oracles and converters"""
    samples: int = 200
    max_nodes: int = 6
    word_length: int = 8
    depth: int = 8
    seed: int = 7
    conversion_budget: int = 50000
    workers: int = 4

    def __post_init__(self):
        for name in ('samples', 'max_nodes', 'word_length', 'depth', 'conversion_budget', 'workers'):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    @classmethod
    def from_env(cls) -> 'Settings':
        return cls(
            samples=int(os.getenv("GRADEDLOGIC_SAMPLES", "200")),
            max_nodes=int(os.getenv("GRADEDLOGIC_MAX_NODES", "6")),
            word_length=int(os.getenv("GRADEDLOGIC_WORD_LENGTH", "8")),
            depth=int(os.getenv("GRADEDLOGIC_DEPTH", "8")),
            seed=int(os.getenv("GRADEDLOGIC_SEED", "7")),
            conversion_budget=int(os.getenv("GRADEDLOGIC_CONVERSION_BUDGET", "50000")),
            workers=int(os.getenv("GRADEDLOGIC_WORKERS", "4")),
        )

    def with_overrides(self, **overrides) -> 'Settings':
        """Copy with every non-None override applied"""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def get_settings() -> Settings:
    return Settings.from_env()
