"""Taxonomy parsing, validation, prompt rendering, and corpus generation."""

import json

import numpy as np
import pytest

from partgen.errors import InsufficientAtoms, ParseError, ValidationError
from partgen.hashing import fnv1a_64
from partgen.taxonomy import (
    DOMAIN_NAMES,
    HybridPrompt,
    RenderConfig,
    SemanticAtom,
    default_taxonomy_path,
    enumerate_atoms,
    generate_corpus,
    generate_record,
    load_taxonomy,
    parse_taxonomy,
    read_corpus,
    render_prompt,
    sample_atoms,
    validate,
    write_corpus,
)


@pytest.fixture(scope="module")
def default_text() -> str:
    return default_taxonomy_path().read_text(encoding="utf-8")


def _atom(part: str, subject: str, domain: str = "creature") -> SemanticAtom:
    return SemanticAtom(part=part, subject=subject, domain=domain)


class TestParsing:
    def test_default_file_shape(self, taxonomy):
        assert len(taxonomy.domains) == 6
        assert tuple(d.name for d in taxonomy.domains) == DOMAIN_NAMES
        assert all(len(d.parts) == 8 for d in taxonomy.domains)
        assert len(enumerate_atoms(taxonomy)) == 464

    def test_comments_and_blank_lines_ignored(self):
        text = (
            "# header comment\n\ndomain creature\nprefix A creature\n"
            "part tail: lion, fox, whale  # trailing comment\n"
        )
        taxonomy = parse_taxonomy(text)
        assert taxonomy.domains[0].parts[0].subjects == ["lion", "fox", "whale"]

    def test_part_before_domain_rejected(self):
        with pytest.raises(ParseError, match="part before any domain"):
            parse_taxonomy("part tail: lion")

    def test_unrecognized_line_reports_location(self):
        with pytest.raises(ParseError, match="custom.txt:2"):
            parse_taxonomy("domain creature\nwhatever\n", source="custom.txt")

    def test_missing_colon_rejected(self):
        with pytest.raises(ParseError, match="part line needs"):
            parse_taxonomy("domain creature\npart tail lion fox\n")

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ParseError, match="cannot read"):
            load_taxonomy(tmp_path / "absent.txt")


class TestValidation:
    def test_wrong_domain_count_message(self, default_text):
        # drop the last domain block entirely
        truncated = default_text[: default_text.rindex("domain ")]
        with pytest.raises(ValidationError, match=r"expected 6 domains, found 5"):
            validate(parse_taxonomy(truncated))

    def test_duplicate_pair_rejected(self, default_text):
        broken = default_text.replace("part head: lion,", "part head: lion, lion,", 1)
        assert broken != default_text
        with pytest.raises(ValidationError, match="duplicate"):
            validate(parse_taxonomy(broken))

    def test_subject_count_bounds(self):
        lines = ["domain creature", "prefix A creature"]
        lines += [f"part p{i}x: " + ", ".join(f"s{j}x" for j in range(6)) for i in range(7)]
        lines += ["part tiny: one, two"]  # 2 subjects, below the minimum of 6
        taxonomy = parse_taxonomy("\n".join(lines))
        taxonomy.domains.extend(taxonomy.domains[:1] * 5)  # shape only; count check comes first
        with pytest.raises(ValidationError, match="unknown domain|appears twice|outside"):
            validate(taxonomy)

    def test_unknown_domain_rejected(self):
        text = "domain gadget\nprefix A gadget\n" + "\n".join(
            f"part q{i}x: " + ", ".join(f"s{j}x" for j in range(6)) for i in range(8)
        )
        taxonomy = parse_taxonomy(text)
        taxonomy.domains.extend([taxonomy.domains[0]] * 5)
        with pytest.raises(ValidationError, match="unknown domain 'gadget'"):
            validate(taxonomy)

    def test_atom_token_shape_enforced(self):
        with pytest.raises(ValidationError):
            _atom("Tail", "lion")
        with pytest.raises(ValidationError):
            _atom("tail", " lion")
        with pytest.raises(ValidationError):
            _atom("tail", "")
        with pytest.raises(ValidationError):
            _atom("tail", "lion", domain="unknown")


class TestRendering:
    def test_two_atoms_bare_and(self):
        text = render_prompt("A creature", [_atom("head", "lion"), _atom("body", "horse")])
        assert text == "A creature with head of a lion and body of a horse."

    def test_three_atoms_serial_comma(self):
        atoms = [_atom("head", "lion"), _atom("body", "horse"), _atom("tail", "fox")]
        text = render_prompt("A creature", atoms)
        assert text == "A creature with head of a lion, body of a horse, and tail of a fox."

    def test_four_atoms_serial_comma(self):
        atoms = [
            _atom("head", "eagle"),
            _atom("body", "horse"),
            _atom("wings", "bat"),
            _atom("tail", "fox"),
        ]
        text = render_prompt("A creature", atoms)
        assert text == (
            "A creature with head of a eagle, body of a horse, "
            "wings of a bat, and tail of a fox."
        )

    def test_article_is_always_a(self):
        # template fidelity beats grammar: 'a eagle', not 'an eagle'
        text = render_prompt("A creature", [_atom("head", "eagle"), _atom("tail", "owl")])
        assert "of a eagle" in text and "of a owl" in text

    def test_atom_count_bounds(self):
        with pytest.raises(ValueError):
            render_prompt("A creature", [_atom("head", "lion")])


class TestSampling:
    def test_distinct_parts(self, taxonomy):
        rng = np.random.default_rng(0)
        for _ in range(200):
            atoms = sample_atoms(taxonomy, rng, 4, mix_domains=True)
            assert len({a.part for a in atoms}) == 4

    def test_single_domain_when_not_mixing(self, taxonomy):
        rng = np.random.default_rng(1)
        for _ in range(100):
            atoms = sample_atoms(taxonomy, rng, 3, mix_domains=False)
            assert len({a.domain for a in atoms}) == 1

    def test_insufficient_parts(self):
        text = "domain creature\nprefix A creature\npart tail: lion, fox, cat, dog, elk, bat\n"
        taxonomy = parse_taxonomy(text)  # parse only; validation would reject it
        with pytest.raises(InsufficientAtoms):
            sample_atoms(taxonomy, np.random.default_rng(0), 2, mix_domains=False)

    def test_k_bounds(self, taxonomy):
        with pytest.raises(ValueError):
            sample_atoms(taxonomy, np.random.default_rng(0), 5, mix_domains=True)


class TestCorpus:
    def test_record_fields(self, taxonomy):
        record = generate_record(taxonomy, index=7, master_seed=11, mix_ratio=0.5)
        assert record.id == 7
        assert 2 <= len(record.atoms) <= 4
        assert record.prefix == taxonomy.domain(record.atoms[0].domain).prefix
        assert record.text == render_prompt(record.prefix, record.atoms)
        assert record.seed == fnv1a_64(record.text)
        assert record.render == RenderConfig()

    def test_render_defaults(self):
        config = RenderConfig()
        assert (config.resolution, config.steps, config.guidance_scale, config.scheduler_shift) == (
            1024,
            50,
            5.0,
            3.0,
        )

    def test_determinism(self, taxonomy):
        a = list(generate_corpus(taxonomy, 50, master_seed=5))
        b = list(generate_corpus(taxonomy, 50, master_seed=5))
        assert [r.to_dict() for r in a] == [r.to_dict() for r in b]
        c = list(generate_corpus(taxonomy, 50, master_seed=6))
        assert [r.to_dict() for r in a] != [r.to_dict() for r in c]

    def test_record_independent_of_corpus_size(self, taxonomy):
        # record i is derived from (master_seed, i) alone
        small = list(generate_corpus(taxonomy, 5, master_seed=9))
        large = list(generate_corpus(taxonomy, 20, master_seed=9))
        assert [r.to_dict() for r in small] == [r.to_dict() for r in large[:5]]

    def test_mix_ratio_extremes(self, taxonomy):
        never = list(generate_corpus(taxonomy, 60, master_seed=2, mix_ratio=0.0))
        assert all(not r.domain_mix for r in never)
        assert all(len({a.domain for a in r.atoms}) == 1 for r in never)
        always = list(generate_corpus(taxonomy, 60, master_seed=2, mix_ratio=1.0))
        assert all(r.domain_mix for r in always)

    def test_invalid_arguments(self, taxonomy):
        with pytest.raises(ValueError):
            list(generate_corpus(taxonomy, 0, master_seed=0))
        with pytest.raises(ValueError):
            list(generate_corpus(taxonomy, 5, master_seed=0, mix_ratio=1.5))

    def test_jsonl_round_trip(self, taxonomy, tmp_path):
        records = list(generate_corpus(taxonomy, 25, master_seed=3))
        path = tmp_path / "corpus.jsonl"
        assert write_corpus(records, path) == 25
        loaded = read_corpus(path)
        assert [r.to_dict() for r in loaded] == [r.to_dict() for r in records]

    def test_jsonl_lines_are_plain_json(self, taxonomy, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_corpus(generate_corpus(taxonomy, 3, master_seed=0), path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 3
        parsed = json.loads(lines[0])
        assert set(parsed) == {"id", "prefix", "domain_mix", "atoms", "text", "seed", "render"}

    def test_dict_round_trip(self, taxonomy):
        record = generate_record(taxonomy, index=0, master_seed=0, mix_ratio=0.5)
        assert HybridPrompt.from_dict(record.to_dict()).to_dict() == record.to_dict()
