import json
import math

from dataclasses import dataclass, field
from pathlib import Path


SCHEMA_VERSION = "1.0"
NOT_APPLICABLE = "n/a"


def _format(value) -> str:
    if value is None:
        return NOT_APPLICABLE
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return NOT_APPLICABLE if math.isnan(value) else f"{value:.4f}"
    return str(value)


@dataclass
class MetricsReport:
    """Result tables of one command: sections of rows (classes, metrics, genes) by columns
    (metrics, models, datasets), plus provenance and free-form notes.
    """
    kind: str
    sections: dict = field(default_factory=dict)          # section -> row -> column -> value
    provenance: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    schema_version: str = SCHEMA_VERSION

    def add_section(self,
                    name: str,
                    rows: dict) -> None:
        self.sections[name] = {str(r): dict(columns) for r, columns in rows.items()}

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version,
                "kind": self.kind,
                "sections": self.sections,
                "notes": self.notes,
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, document: dict):
        return cls(kind=document["kind"],
                   sections=document.get("sections", {}),
                   provenance=document.get("provenance", {}),
                   notes=document.get("notes", []),
                   schema_version=document.get("schema_version", SCHEMA_VERSION))

    def save_json(self,
                  path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, default=str)
        return path

    @classmethod
    def load_json(cls, path):
        with open(path, "r") as f:
            return cls.from_dict(json.load(f))

    def to_table(self) -> str:
        """Aligned-column text rendering, one block per section."""
        blocks = []
        for name, rows in self.sections.items():
            columns = []
            for entries in rows.values():
                columns += [c for c in entries if c not in columns]
            header = [name] + columns
            lines = [header] + [[row] + [_format(entries.get(c)) for c in columns] for row, entries in rows.items()]
            widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
            text = ["  ".join(cell.ljust(widths[0]) if i == 0 else cell.rjust(widths[i])
                              for i, cell in enumerate(line)) for line in lines]
            text.insert(1, "-" * len(text[0]))
            blocks.append("\n".join(text))
        if self.notes:
            blocks.append("\n".join(f"note: {n}" for n in self.notes))
        return "\n\n".join(blocks) + "\n"
