"""Seeded synthetic clinical-style corpus with planted synonym pairs.

Every sentence is a group-specific template with one slot filled by a word of
that semantic group. Both members of a synonym pair share a CUI and are
substitutable in exactly the same templates; the second member is rarer,
mimicking pairs such as kidney/ren. Apart from the real identifiers for
lungs, kidney, mass and bleeding, CUIs are placeholders in the C9xxxxxx range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lexicon import Lexicon, load_lexicon
from .seeding import derive_rng

# (group, [(word, cui), ...]) -- one concept per inner list
CONCEPTS = {
    "ANATOMY": [
        [("kidney", "C0022646"), ("ren", "C0022646")],
        [("lungs", "C0024109"), ("pulmonary", "C0024109")],
        [("heart", "C9100001"), ("cardiac", "C9100001")],
        [("liver", "C9100002"), ("hepatic", "C9100002")],
        [("chest", "C9100003")],
        [("abdomen", "C9100004")],
        [("spine", "C9100005")],
        [("brain", "C9100006")],
    ],
    "DISORDER": [
        [("mass", "C0577559"), ("lump", "C0577559")],
        [("bleeding", "C0019080"), ("hem", "C0019080")],
        [("fever", "C9200001"), ("pyrexia", "C9200001")],
        [("rash", "C9200002"), ("exanthem", "C9200002")],
        [("pain", "C9200003")],
        [("cough", "C9200004")],
        [("edema", "C9200005")],
        [("nausea", "C9200006")],
    ],
    "CHEMICAL": [
        [("aspirin", "C9300001"), ("asa", "C9300001")],
        [("acetaminophen", "C9300002"), ("paracetamol", "C9300002")],
        [("insulin", "C9300003")],
        [("heparin", "C9300004")],
        [("morphine", "C9300005")],
        [("warfarin", "C9300006")],
    ],
    "PROCEDURE": [
        [("biopsy", "C9400001")],
        [("dialysis", "C9400002")],
        [("intubation", "C9400003")],
        [("ultrasound", "C9400004")],
        [("transfusion", "C9400005")],
        [("colonoscopy", "C9400006")],
    ],
}

TEMPLATES = {
    "ANATOMY": [
        "the {} appears normal on today's exam",
        "tenderness over the {} was noted by the resident",
        "imaging of the {} shows no interval change",
        "no abnormality of the {} was seen",
        "the {} was examined again this morning",
        "mild swelling near the {} persists",
    ],
    "DISORDER": [
        "patient reports worsening {} since yesterday",
        "no evidence of {} at this time",
        "the family denies any history of {}",
        "new onset {} overnight per nursing",
        "{} has resolved after treatment",
        "she was admitted for {} and observation",
    ],
    "CHEMICAL": [
        "continue {} twice daily with meals",
        "{} was held because of low blood pressure",
        "started on {} per cardiology recommendation",
        "he takes {} at home every night",
        "dose of {} was increased today",
    ],
    "PROCEDURE": [
        "scheduled for {} early tomorrow",
        "consent obtained for {} from the patient",
        "{} was performed without complications",
        "plan to repeat {} next week",
        "tolerated the {} well overall",
    ],
}

RARE_SYNONYM_WEIGHT = 0.3


@dataclass
class SyntheticData:
    lexicon_tsv: str
    lexicon: Lexicon
    corpus: list
    pairs: list  # planted synonym pairs (frequent word, rare word)
    tagged_lines: list  # word/TAG lines; TAG is the semantic group or O

    @property
    def groups(self) -> list:
        return list(CONCEPTS)


def lexicon_tsv() -> str:
    lines = []
    for group, concepts in CONCEPTS.items():
        for concept in concepts:
            lines.extend(f"{word}\t{cui}\t{group}" for word, cui in concept)
    return "\n".join(lines) + "\n"


def planted_pairs() -> list:
    return [(c[0][0], c[1][0]) for concepts in CONCEPTS.values() for c in concepts if len(c) == 2]


def _word_distribution(group: str):
    words, weights = [], []
    for concept in CONCEPTS[group]:
        for k, (word, _) in enumerate(concept):
            words.append(word)
            weights.append(1.0 if k == 0 else RARE_SYNONYM_WEIGHT)
    weights = np.asarray(weights)
    return words, weights / weights.sum()


def make_synthetic(n_sentences: int = 2000, seed: int = 0) -> SyntheticData:
    rng = derive_rng(seed, "synthetic-corpus")
    groups = list(CONCEPTS)
    dists = {g: _word_distribution(g) for g in groups}
    corpus, tagged = [], []
    for _ in range(n_sentences):
        group = groups[rng.integers(len(groups))]
        template = TEMPLATES[group][rng.integers(len(TEMPLATES[group]))]
        words, probs = dists[group]
        word = words[rng.choice(len(words), p=probs)]
        sentence = template.format(word)
        corpus.append(sentence)
        tagged.append(" ".join(f"{tok}/{group if tok == word else 'O'}" for tok in sentence.split()))
    tsv = lexicon_tsv()
    return SyntheticData(tsv, load_lexicon(tsv), corpus, planted_pairs(), tagged)
