from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Iterable, Sequence


class ArtifactRepository(ABC):
    """Base repository interface for experiment artifacts"""

    @abstractmethod
    def path(self, name: str) -> Path:
        """Location of an artifact"""
        pass

    @abstractmethod
    def write_table(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        """Write a CSV table"""
        pass

    @abstractmethod
    def write_document(self, name: str, data: Any) -> Path:
        """Write a JSON document"""
        pass

    @abstractmethod
    def write_text(self, name: str, text: str) -> Path:
        """Write plain text"""
        pass

    @abstractmethod
    def write_bytes(self, name: str, payload: bytes) -> Path:
        """Write a binary artifact"""
        pass
