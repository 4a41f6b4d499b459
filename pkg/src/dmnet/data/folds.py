"""Fold specifications: disjoint known/unknown class splits."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..errors import SpecError

BUNDLED = ("isaid", "loveda", "synthetic")


@dataclass(frozen=True)
class FoldSpec:
    fold_id: int
    training_classes: tuple[int, ...]
    testing_classes: tuple[int, ...]
    class_names: dict[int, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.training_classes or not self.testing_classes:
            raise SpecError(f"fold {self.fold_id}: class lists must be non-empty")
        both = set(self.training_classes) & set(self.testing_classes)
        if both:
            names = sorted(self.class_names.get(c, str(c)) for c in both)
            raise SpecError(f"fold {self.fold_id}: classes in both train and test: {names}")

    def name(self, class_id: int) -> str:
        return self.class_names.get(class_id, str(class_id))

    @property
    def testing_names(self) -> list[str]:
        return [self.name(c) for c in self.testing_classes]

    @property
    def training_names(self) -> list[str]:
        return [self.name(c) for c in self.training_classes]


def resolve_fold_file(path: str | Path) -> Path:
    """Accept a file path or the name of a bundled split (``isaid``, ``loveda``, ``synthetic``)."""
    if str(path) in BUNDLED:
        return Path(str(resources.files("dmnet.data") / "folds" / f"{path}.cfg"))
    return Path(path)


def load_fold_spec(path: str | Path, fold_id: int) -> FoldSpec:
    path = resolve_fold_file(path)
    if not path.exists():
        raise SpecError(f"fold spec not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise SpecError(f"cannot parse {path}: {exc}") from exc
    if "classes" not in parser:
        raise SpecError(f"{path}: missing [classes] section")
    ids: dict[str, int] = {}
    for name, value in parser["classes"].items():
        try:
            ids[name.strip()] = int(value)
        except ValueError:
            raise SpecError(f"{path}: class {name!r} has non-integer id {value!r}") from None
    section = f"fold{fold_id}"
    if section not in parser:
        raise SpecError(f"{path}: no [{section}] section")

    def parse(key: str) -> tuple[int, ...]:
        raw = parser[section].get(key, "")
        out = []
        for token in (t.strip() for t in raw.split(",")):
            if not token:
                continue
            if token in ids:
                out.append(ids[token])
            elif token.isdigit():
                out.append(int(token))
            else:
                raise SpecError(f"{path} [{section}]: unknown class {token!r}")
        return tuple(out)

    return FoldSpec(
        fold_id=fold_id,
        training_classes=parse("train"),
        testing_classes=parse("test"),
        class_names={v: k for k, v in ids.items()},
    )
