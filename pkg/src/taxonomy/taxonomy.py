import json
import re

import numpy as np

from functools import lru_cache
from pathlib import Path

from utility.errors import ConfigError, UnknownClassError


DATA_DIRECTORY = Path(__file__).parent / "data"
DEFAULT_TAXONOMY_FILE = DATA_DIRECTORY / "taxonomy.json"
CLASS_MAP_DIRECTORY = DATA_DIRECTORY / "class_maps"

UNDEFINED = -1      # nucleus without any positive hierarchy logit
UNMAPPED = -1       # source class without an evaluation class


def normalise_name(name: str) -> str:
    """Lower case, spaces and hyphens folded into underscores."""
    return re.sub(r"[\s\-]+", "_", str(name).strip().lower())


class Hierarchy:
    def __init__(self,
                 levels: list[list[int]]):
        """Four-level classification hierarchy, levels processed in order, class order within a
        level used for tie-breaking.
        :param levels: list of class id lists, level 1 first
        """
        self.levels = tuple(tuple(level) for level in levels)
        members = [c for level in self.levels for c in level]
        if len(members) != len(set(members)):
            raise ConfigError(f"hierarchy lists a class in more than one level: {self.levels}")
        self._level_of = {c: i + 1 for i, level in enumerate(self.levels) for c in level}

    def level_of(self,
                 class_id: int) -> int | None:
        return self._level_of.get(class_id)

    def members(self) -> list[int]:
        return [c for level in self.levels for c in level]

    def __len__(self):
        return len(self.levels)

    def __repr__(self):
        return f"Hierarchy({self.levels})"


class Taxonomy:
    def __init__(self,
                 classes: list[dict],
                 hierarchy: list[list[str]],
                 leukocyte_subtypes: list[str],
                 nucleus_teacher_types: list[str],
                 name: str = "custom"):
        """Closed class vocabulary with abbreviations, aliases, colours and the classification hierarchy.
        :param classes: list of {"id", "name", "abbreviation", "kind", "colour", "aliases"}
        :param hierarchy: list of levels, each a list of class names
        :param leukocyte_subtypes: names of the specific white blood cell classes
        :param nucleus_teacher_types: vocabulary of the nucleus-instance teacher
        :param name: name of the taxonomy
        """
        self.name = name
        classes = sorted(classes, key=lambda c: c["id"])
        if [c["id"] for c in classes] != list(range(len(classes))):
            raise ConfigError("class ids have to be dense and start at 0")
        if not classes or classes[0]["name"] != "background":
            raise ConfigError("class id 0 is reserved for 'background'")

        self.names = [c["name"] for c in classes]
        self.abbreviations = [c["abbreviation"] for c in classes]
        self.kinds = [c.get("kind", "tissue") for c in classes]
        self.colours = np.array([c.get("colour", [0, 0, 0]) for c in classes], dtype=np.uint8)
        self._lookup = {}
        for c in classes:
            for key in [c["name"], c["abbreviation"]] + list(c.get("aliases", [])):
                key = normalise_name(key)
                if self._lookup.get(key, c["id"]) != c["id"]:
                    raise ConfigError(f"name {key!r} refers to more than one class")
                self._lookup[key] = c["id"]

        self.hierarchy = Hierarchy([[self.resolve(n) for n in level] for level in hierarchy])
        self.leukocyte_subtypes = [self.resolve(n) for n in leukocyte_subtypes]
        self.nucleus_teacher_types = [normalise_name(t) for t in nucleus_teacher_types]

    @classmethod
    def from_dict(cls,
                  document: dict):
        try:
            return cls(classes=document["classes"],
                       hierarchy=document["hierarchy"],
                       leukocyte_subtypes=document.get("leukocyte_subtypes", []),
                       nucleus_teacher_types=document.get("nucleus_teacher_types", []),
                       name=document.get("name", "custom"))
        except (KeyError, TypeError) as error:
            raise ConfigError(f"malformed taxonomy document: {error}") from error

    @classmethod
    def load(cls,
             path=None):
        """Loads a taxonomy.json file, the embedded one if no path is given.
        :param path: optional path to a taxonomy.json
        :return
            Taxonomy object
        """
        if path is None:
            return default_taxonomy()
        try:
            with open(path, "r") as f:
                document = json.load(f)
        except (OSError, json.JSONDecodeError) as error:
            raise ConfigError(f"cannot read taxonomy {path}: {error}") from error
        return cls.from_dict(document)

    def __len__(self):
        return len(self.names)

    def resolve(self,
                name) -> int:
        """ClassId of a class name, abbreviation or alias (case-insensitive), or a valid integer id.
        :param name: string or integer
        :return
            class id
        """
        if isinstance(name, (int, np.integer)) and not isinstance(name, bool):
            if 0 <= int(name) < len(self.names):
                return int(name)
            raise UnknownClassError(name, self.names)
        try:
            return self._lookup[normalise_name(name)]
        except KeyError:
            raise UnknownClassError(name, self.names) from None

    def __contains__(self, name) -> bool:
        try:
            self.resolve(name)
        except UnknownClassError:
            return False
        return True

    def resolve_all(self,
                    names) -> list[int]:
        return [self.resolve(n) for n in names]

    def name_of(self,
                class_id: int) -> str:
        if class_id == UNDEFINED:
            return "undefined"
        return self.names[self.resolve(class_id)]

    def abbreviation_of(self,
                        class_id: int) -> str:
        if class_id == UNDEFINED:
            return "undef"
        return self.abbreviations[self.resolve(class_id)]

    def level_of(self,
                 class_id: int) -> int | None:
        """Hierarchy level (1..4) of a class, None for classes outside the hierarchy."""
        return self.hierarchy.level_of(self.resolve(class_id))

    def nucleus_classes(self) -> list[int]:
        return [i for i, kind in enumerate(self.kinds) if kind == "nucleus"]

    def tissue_classes(self) -> list[int]:
        return [i for i, kind in enumerate(self.kinds) if kind == "tissue"]

    def check_teacher_type(self,
                           teacher_type: str | None) -> str | None:
        """Normalised nucleus teacher type, UnknownClassError outside the teacher vocabulary."""
        if teacher_type is None:
            return None
        key = normalise_name(teacher_type)
        if key not in self.nucleus_teacher_types:
            raise UnknownClassError(teacher_type, self.nucleus_teacher_types)
        return key

    def palette(self) -> np.ndarray:
        """(classes, 3) uint8 display colours indexed by class id."""
        return self.colours.copy()

    def colourise(self,
                  labels: np.ndarray) -> np.ndarray:
        """RGB rendering of a label raster; undefined pixels are white."""
        labels = np.asarray(labels)
        rgb = np.full(labels.shape + (3,), 255, dtype=np.uint8)
        valid = (labels >= 0) & (labels < len(self))
        rgb[valid] = self.colours[labels[valid]]
        return rgb

    def to_dict(self) -> dict:
        return {"name": self.name,
                "classes": [{"id": i,
                             "name": self.names[i],
                             "abbreviation": self.abbreviations[i],
                             "kind": self.kinds[i],
                             "level": self.hierarchy.level_of(i),
                             "colour": self.colours[i].tolist()} for i in range(len(self))],
                "hierarchy": [[self.names[c] for c in level] for level in self.hierarchy.levels],
                "leukocyte_subtypes": [self.names[c] for c in self.leukocyte_subtypes],
                "nucleus_teacher_types": list(self.nucleus_teacher_types)}


@lru_cache(maxsize=1)
def default_taxonomy() -> Taxonomy:
    """The embedded taxonomy. Immutable by convention, shared between callers."""
    with open(DEFAULT_TAXONOMY_FILE, "r") as f:
        return Taxonomy.from_dict(json.load(f))


class ClassMap:
    def __init__(self,
                 name: str,
                 targets: list[str],
                 mapping: dict,
                 taxonomy: Taxonomy):
        """Association of every source class to one evaluation class or to UNMAPPED.
        :param name: name of the map
        :param targets: ordered evaluation class names, the order breaks coverage ties
        :param mapping: source class name or id -> evaluation class name or None (unmapped)
        :param taxonomy: source vocabulary
        """
        self.name = name
        self.targets = [normalise_name(t) for t in targets]
        if len(set(self.targets)) != len(self.targets):
            raise ConfigError(f"class map {name!r}: evaluation classes are not distinct")
        self.taxonomy = taxonomy

        table = {}
        for source, target in mapping.items():
            source_id = taxonomy.resolve(source)
            if target is None:
                table[source_id] = UNMAPPED
                continue
            target = normalise_name(target)
            if target not in self.targets:
                raise UnknownClassError(target, self.targets)
            table[source_id] = self.targets.index(target)
        missing = [taxonomy.name_of(c) for c in range(len(taxonomy)) if c not in table]
        if missing:
            raise ConfigError(f"class map {name!r} is not total, missing {missing}")
        self.table = np.array([table[c] for c in range(len(taxonomy))], dtype=np.int64)

        for t, target in enumerate(self.targets):
            if target in taxonomy and self.table[taxonomy.resolve(target)] != t:
                raise ConfigError(f"class map {name!r}: evaluation class {target!r} is also a source "
                                  f"class mapped elsewhere, mapping would not be idempotent")

    @classmethod
    def identity(cls,
                 taxonomy: Taxonomy | None = None):
        taxonomy = taxonomy or default_taxonomy()
        return cls("identity", taxonomy.names, {n: n for n in taxonomy.names}, taxonomy)

    @classmethod
    def load(cls,
             path,
             taxonomy: Taxonomy | None = None):
        """Loads a class map JSON file or a bundled preset by name ('identity', 'hierarchical').
        :param path: file path or preset name
        :param taxonomy: source vocabulary, the embedded one by default
        :return
            ClassMap object
        """
        taxonomy = taxonomy or default_taxonomy()
        preset = CLASS_MAP_DIRECTORY / f"{path}.json"
        path = preset if preset.is_file() else Path(path)
        try:
            with open(path, "r") as f:
                document = json.load(f)
            return cls(document.get("name", path.stem), document["targets"], document["map"], taxonomy)
        except (OSError, json.JSONDecodeError, KeyError) as error:
            raise ConfigError(f"cannot read class map {path}: {error}") from error

    def apply(self,
              name) -> str | None:
        """Evaluation class of a source class. Evaluation class names map to themselves.
        :param name: source class name / id or evaluation class name
        :return
            evaluation class name, None if unmapped
        """
        if isinstance(name, str) and normalise_name(name) in self.targets:
            return normalise_name(name)
        index = self.table[self.taxonomy.resolve(name)]
        return None if index == UNMAPPED else self.targets[index]

    def apply_ids(self,
                  labels: np.ndarray) -> np.ndarray:
        """Evaluation class index per label, UNMAPPED (-1) for unmapped classes and undefined labels."""
        labels = np.asarray(labels).astype(np.int64)
        out = np.full(labels.shape, UNMAPPED, dtype=np.int64)
        valid = (labels >= 0) & (labels < len(self.table))
        out[valid] = self.table[labels[valid]]
        return out

    def __len__(self):
        return len(self.targets)

    def __repr__(self):
        return f"ClassMap({self.name!r}, targets={self.targets})"
