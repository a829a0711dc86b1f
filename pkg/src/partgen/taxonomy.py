"""Part taxonomy: vocabulary, validation, sampling, and the prompt corpus.

The taxonomy is a data file mapping six object domains to eight part kinds
each, every part carrying a list of donor subjects. A (part, subject) pair
is a semantic atom, the unit everything downstream composes. Prompts are
rendered from 2 to 4 distinct-part atoms with a fixed English template and
get a deterministic 64-bit seed hashed from the prompt text.
"""

from __future__ import annotations

import dataclasses
import importlib.resources
import json
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import InsufficientAtoms, ParseError, ValidationError
from .hashing import combine_seed, derive_seed

DOMAIN_NAMES = ("creature", "vehicle", "furniture", "plant", "electronics", "instrument")
MIN_ATOMS_PER_PROMPT = 2
MAX_ATOMS_PER_PROMPT = 4
MIN_SUBJECTS_PER_PART = 6
MAX_SUBJECTS_PER_PART = 19
PARTS_PER_DOMAIN = 8


@dataclasses.dataclass(frozen=True)
class SemanticAtom:
    """A ⟨part, subject⟩ pair plus the domain it belongs to."""

    part: str
    subject: str
    domain: str

    def __post_init__(self) -> None:
        for field in ("part", "subject"):
            value = getattr(self, field)
            if not value or value != value.strip() or value != value.lower():
                raise ValidationError(f"atom {field} must be a non-empty trimmed lowercase token, got {value!r}")
        if self.domain not in DOMAIN_NAMES:
            raise ValidationError(f"unknown domain {self.domain!r}")

    @property
    def key(self) -> tuple[str, str]:
        return (self.part, self.subject)


@dataclasses.dataclass
class PartEntry:
    part_name: str
    subjects: list[str]


@dataclasses.dataclass
class DomainEntry:
    name: str
    prefix: str
    parts: list[PartEntry]


@dataclasses.dataclass
class Taxonomy:
    domains: list[DomainEntry]

    def domain(self, name: str) -> DomainEntry:
        for entry in self.domains:
            if entry.name == name:
                return entry
        raise KeyError(name)

    def atom_count(self) -> int:
        return sum(len(p.subjects) for d in self.domains for p in d.parts)


@dataclasses.dataclass(frozen=True)
class RenderConfig:
    """Settings recorded per prompt for the external image backend."""

    resolution: int = 1024
    steps: int = 50
    guidance_scale: float = 5.0
    scheduler_shift: float = 3.0

    def __post_init__(self) -> None:
        if self.resolution <= 0 or self.steps <= 0 or self.guidance_scale <= 0:
            raise ValidationError("render settings must be positive")

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "steps": self.steps,
            "guidance_scale": self.guidance_scale,
            "scheduler_shift": self.scheduler_shift,
        }


@dataclasses.dataclass
class HybridPrompt:
    id: int
    prefix: str
    domain_mix: bool
    atoms: list[SemanticAtom]
    text: str
    seed: int
    render: RenderConfig

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "prefix": self.prefix,
            "domain_mix": self.domain_mix,
            "atoms": [{"part": a.part, "subject": a.subject, "domain": a.domain} for a in self.atoms],
            "text": self.text,
            "seed": self.seed,
            "render": self.render.to_dict(),
        }

    @staticmethod
    def from_dict(obj: dict) -> "HybridPrompt":
        return HybridPrompt(
            id=int(obj["id"]),
            prefix=obj["prefix"],
            domain_mix=bool(obj["domain_mix"]),
            atoms=[SemanticAtom(a["part"], a["subject"], a["domain"]) for a in obj["atoms"]],
            text=obj["text"],
            seed=int(obj["seed"]),
            render=RenderConfig(**obj["render"]),
        )


def default_taxonomy_path() -> Path:
    resource = importlib.resources.files("partgen").joinpath("data/default_taxonomy.txt")
    return Path(str(resource))


def parse_taxonomy(text: str, source: str = "<string>") -> Taxonomy:
    """Parse the documented tree format. Structural errors only; see validate()."""
    domains: list[DomainEntry] = []
    current: DomainEntry | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("domain "):
            current = DomainEntry(name=line[7:].strip(), prefix="", parts=[])
            domains.append(current)
        elif line.startswith("prefix "):
            if current is None:
                raise ParseError(f"{source}:{lineno}: prefix before any domain")
            current.prefix = line[7:].strip()
        elif line.startswith("part "):
            if current is None:
                raise ParseError(f"{source}:{lineno}: part before any domain")
            body = line[5:]
            if ":" not in body:
                raise ParseError(f"{source}:{lineno}: part line needs 'part <name>: <subjects>'")
            name, _, subjects = body.partition(":")
            subject_list = [s.strip() for s in subjects.split(",") if s.strip()]
            current.parts.append(PartEntry(part_name=name.strip(), subjects=subject_list))
        else:
            raise ParseError(f"{source}:{lineno}: unrecognized line {line!r}")
    if not domains:
        raise ParseError(f"{source}: no domain declarations found")
    return Taxonomy(domains=domains)


def validate(taxonomy: Taxonomy) -> None:
    """Raise ValidationError naming the first violated constraint."""
    if len(taxonomy.domains) != 6:
        raise ValidationError(f"expected 6 domains, found {len(taxonomy.domains)}")
    seen_names = set()
    for entry in taxonomy.domains:
        if entry.name not in DOMAIN_NAMES:
            raise ValidationError(f"unknown domain {entry.name!r}")
        if entry.name in seen_names:
            raise ValidationError(f"domain {entry.name!r} appears twice")
        seen_names.add(entry.name)
        if not entry.prefix:
            raise ValidationError(f"domain {entry.name!r} has no prefix")
        if len(entry.parts) != PARTS_PER_DOMAIN:
            raise ValidationError(f"domain {entry.name!r}: expected {PARTS_PER_DOMAIN} parts, found {len(entry.parts)}")
        for part in entry.parts:
            n = len(part.subjects)
            if not (MIN_SUBJECTS_PER_PART <= n <= MAX_SUBJECTS_PER_PART):
                raise ValidationError(
                    f"part {part.part_name!r} in {entry.name!r} has {n} subjects, "
                    f"outside [{MIN_SUBJECTS_PER_PART}, {MAX_SUBJECTS_PER_PART}]"
                )
    seen_pairs: set[tuple[str, str]] = set()
    for atom in enumerate_atoms(taxonomy):
        if atom.key in seen_pairs:
            raise ValidationError(f"duplicate (part, subject) pair {atom.key}")
        seen_pairs.add(atom.key)


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Parse and validate a taxonomy file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read taxonomy file {path}: {exc}") from exc
    taxonomy = parse_taxonomy(text, source=str(path))
    validate(taxonomy)
    return taxonomy


def load_default_taxonomy() -> Taxonomy:
    return load_taxonomy(default_taxonomy_path())


def enumerate_atoms(taxonomy: Taxonomy) -> list[SemanticAtom]:
    """All atoms in file order. Constructing SemanticAtom enforces token shape."""
    atoms = []
    for entry in taxonomy.domains:
        for part in entry.parts:
            for subject in part.subjects:
                atoms.append(SemanticAtom(part=part.part_name, subject=subject, domain=entry.name))
    return atoms


def sample_atoms(
    taxonomy: Taxonomy,
    rng: np.random.Generator,
    k: int,
    mix_domains: bool,
) -> list[SemanticAtom]:
    """Draw k distinct-part atoms, from one uniform domain unless mixing.

    Each draw is uniform over the not-yet-excluded atoms of the pool, so
    parts with more subjects are proportionally more likely. A part name can
    appear at most once per sample.
    """
    if not (MIN_ATOMS_PER_PROMPT <= k <= MAX_ATOMS_PER_PROMPT):
        raise ValueError(f"k must be in [{MIN_ATOMS_PER_PROMPT}, {MAX_ATOMS_PER_PROMPT}], got {k}")
    if mix_domains:
        pool = enumerate_atoms(taxonomy)
    else:
        domain = taxonomy.domains[int(rng.integers(len(taxonomy.domains)))]
        pool = [
            SemanticAtom(part=p.part_name, subject=s, domain=domain.name)
            for p in domain.parts
            for s in p.subjects
        ]
    if len({a.part for a in pool}) < k:
        raise InsufficientAtoms(f"need {k} distinct parts, pool has {len({a.part for a in pool})}")
    chosen: list[SemanticAtom] = []
    used_parts: set[str] = set()
    for _ in range(k):
        eligible = [a for a in pool if a.part not in used_parts]
        pick = eligible[int(rng.integers(len(eligible)))]
        chosen.append(pick)
        used_parts.add(pick.part)
    return chosen


def render_prompt(prefix: str, atoms: Sequence[SemanticAtom]) -> str:
    """Template: '{Prefix} with {part} of a {subject}, ..., and {part} of a {subject}.'

    The two-atom form joins with a bare 'and'; four atoms extend the serial
    comma. The article is always 'a', matching the template literally.
    """
    if not (MIN_ATOMS_PER_PROMPT <= len(atoms) <= MAX_ATOMS_PER_PROMPT):
        raise ValueError(f"prompt needs {MIN_ATOMS_PER_PROMPT}-{MAX_ATOMS_PER_PROMPT} atoms, got {len(atoms)}")
    phrases = [f"{a.part} of a {a.subject}" for a in atoms]
    if len(phrases) == 2:
        joined = f"{phrases[0]} and {phrases[1]}"
    else:
        joined = ", ".join(phrases[:-1]) + f", and {phrases[-1]}"
    return f"{prefix} with {joined}."


def generate_record(
    taxonomy: Taxonomy,
    index: int,
    master_seed: int,
    mix_ratio: float,
    render: RenderConfig | None = None,
) -> HybridPrompt:
    """Generate corpus record ``index`` from its own derived seed.

    The draw order within the per-item generator is fixed: k, then the
    domain-mix coin, then the atoms. Changing it would silently change every
    corpus, so it is part of the format.
    """
    rng = np.random.default_rng(combine_seed(master_seed, index))
    k = int(rng.integers(MIN_ATOMS_PER_PROMPT, MAX_ATOMS_PER_PROMPT + 1))
    mix = bool(rng.random() < mix_ratio)
    atoms = sample_atoms(taxonomy, rng, k, mix_domains=mix)
    prefix = taxonomy.domain(atoms[0].domain).prefix
    text = render_prompt(prefix, atoms)
    return HybridPrompt(
        id=index,
        prefix=prefix,
        domain_mix=mix,
        atoms=atoms,
        text=text,
        seed=derive_seed(text),
        render=render or RenderConfig(),
    )


def generate_corpus(
    taxonomy: Taxonomy,
    n: int,
    master_seed: int,
    mix_ratio: float = 0.5,
    render: RenderConfig | None = None,
) -> Iterator[HybridPrompt]:
    """Yield records 0..n-1; output depends only on the arguments."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not (0.0 <= mix_ratio <= 1.0):
        raise ValueError("mix_ratio must be within [0, 1]")
    render = render or RenderConfig()
    for i in range(n):
        yield generate_record(taxonomy, i, master_seed, mix_ratio, render)


def write_corpus(records: Iterable[HybridPrompt], path: str | Path) -> int:
    """Write JSONL, one record per line; returns the record count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict()))
            fh.write("\n")
            count += 1
    return count


def read_corpus(path: str | Path) -> list[HybridPrompt]:
    records = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read corpus file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(HybridPrompt.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: bad corpus record: {exc}") from exc
    return records
