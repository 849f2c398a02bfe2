"""Synthetic pathology-style corpus with controllable ambiguity and label noise.

Reports are template-assembled from per-group phrase banks: specimen and
history at the top, gross and microscopic descriptions in the middle, the
diagnosis line last. Training labels can be noised the way patient-level
labeling noises real corpora: the text describes one group while the label
carries the patient's dominant group. Test labels are always clean.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .jsonl import write_jsonl
from .labels import CANONICAL_ORDER, TumorGroup
from .reports import LabeledReport, LabelProvenance, PathologyReport, ReportSource

PHRASE_BANKS_RESOURCE = "phrase_banks.json"
COUNTS_RESOURCE = "default_corpus_counts.tsv"


class MissingPhraseBankError(ValueError):
    def __init__(self, group: TumorGroup):
        super().__init__(f"no phrase bank for group {group.value}")
        self.group = group


@dataclass(frozen=True)
class GroupBank:
    sites: tuple[str, ...]
    procedures: tuple[str, ...]
    histology: tuple[str, ...]
    diagnoses: tuple[str, ...]
    history: tuple[str, ...]


@dataclass(frozen=True)
class PhraseBanks:
    groups: Mapping[TumorGroup, GroupBank]
    confusable: Mapping[TumorGroup, tuple[TumorGroup, ...]]
    noise_pairs: Mapping[TumorGroup, tuple[TumorGroup, ...]]
    filler: tuple[str, ...]

    @classmethod
    def load(cls, path: str | Path | None = None) -> "PhraseBanks":
        if path is None:
            raw = resources.files("pathgrouper.data").joinpath(
                PHRASE_BANKS_RESOURCE).read_text("utf-8")
        else:
            raw = Path(path).read_text("utf-8")
        payload = json.loads(raw)
        groups = {
            TumorGroup(name): GroupBank(
                sites=tuple(bank["sites"]),
                procedures=tuple(bank["procedures"]),
                histology=tuple(bank["histology"]),
                diagnoses=tuple(bank["diagnoses"]),
                history=tuple(bank["history"]),
            )
            for name, bank in payload["groups"].items()
        }
        confusable = {TumorGroup(k): tuple(TumorGroup(v) for v in vs)
                      for k, vs in payload.get("confusable", {}).items()}
        noise_pairs = {TumorGroup(k): tuple(TumorGroup(v) for v in vs)
                       for k, vs in payload.get("noise_pairs", {}).items()}
        return cls(groups=groups, confusable=confusable, noise_pairs=noise_pairs,
                   filler=tuple(payload["filler"]))


def default_group_counts(scale: float = 1.0) -> dict[TumorGroup, tuple[int, int]]:
    """Per-group (train, test) sizes from the shipped table, optionally scaled.

    Scaling rounds half-up and keeps at least one report per split so no
    group disappears.
    """
    text = resources.files("pathgrouper.data").joinpath(COUNTS_RESOURCE).read_text("utf-8")
    counts: dict[TumorGroup, tuple[int, int]] = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, train_n, test_n = line.split("\t")
        scaled = (max(1, math.floor(int(train_n) * scale + 0.5)),
                  max(1, math.floor(int(test_n) * scale + 0.5)))
        counts[TumorGroup(name)] = scaled
    return counts


@dataclass(frozen=True)
class GeneratorSpec:
    per_group_counts: Mapping[TumorGroup, tuple[int, int]]
    ambiguity_rate: float = 0.3
    patient_noise_rate: float = 0.15
    seed: int = 0
    vocabulary: PhraseBanks | None = None
    # fraction of ambiguous reports whose second site also appears in the
    # microscopic section, not just the top of the report
    strong_ambiguity_fraction: float = 0.4
    long_report_fraction: float = 0.7
    window_tokens: int = 512
    confusable_bias: float = 0.5

    def __post_init__(self):
        for rate in (self.ambiguity_rate, self.patient_noise_rate,
                     self.strong_ambiguity_fraction, self.long_report_fraction):
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"rates must be in [0, 1], got {rate}")
        for g, (train_n, test_n) in self.per_group_counts.items():
            if train_n < 0 or test_n < 0:
                raise ValueError(f"{g.value}: counts must be >= 0")

    @classmethod
    def scaled_default(cls, scale: float = 0.1, **kwargs) -> "GeneratorSpec":
        return cls(per_group_counts=default_group_counts(scale), **kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "GeneratorSpec":
        payload = json.loads(Path(path).read_text("utf-8"))
        known = {"scale", "per_group_counts", "ambiguity_rate", "patient_noise_rate",
                 "seed", "strong_ambiguity_fraction", "long_report_fraction",
                 "window_tokens", "confusable_bias", "phrase_banks"}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown generator spec keys: {sorted(unknown)}")
        if "per_group_counts" in payload:
            counts = {TumorGroup(k): (int(v[0]), int(v[1]))
                      for k, v in payload["per_group_counts"].items()}
        else:
            counts = default_group_counts(float(payload.get("scale", 1.0)))
        vocabulary = None
        if payload.get("phrase_banks"):
            vocabulary = PhraseBanks.load(payload["phrase_banks"])
        kwargs = {k: payload[k] for k in
                  ("ambiguity_rate", "patient_noise_rate", "seed",
                   "strong_ambiguity_fraction", "long_report_fraction",
                   "window_tokens", "confusable_bias") if k in payload}
        return cls(per_group_counts=counts, vocabulary=vocabulary, **kwargs)


@dataclass(frozen=True)
class SidecarRow:
    report_id: str
    assigned_label: TumorGroup
    text_label: TumorGroup
    noisy: bool


@dataclass(frozen=True)
class GeneratedCorpus:
    train: tuple[LabeledReport, ...]
    test: tuple[LabeledReport, ...]
    sidecar: tuple[SidecarRow, ...]


@dataclass
class _Draft:
    assigned: TumorGroup
    text_group: TumorGroup
    text: str = ""
    patient_id: str = ""


def _pick_other(rng: random.Random, preferred: tuple[TumorGroup, ...],
                pool: list[TumorGroup], exclude: TumorGroup, bias: float) -> TumorGroup:
    preferred = tuple(g for g in preferred if g is not exclude and g in pool)
    if preferred and rng.random() < bias:
        return rng.choice(preferred)
    others = [g for g in pool if g is not exclude]
    return rng.choice(others)


def _assemble(rng: random.Random, bank: GroupBank, decoy_bank: GroupBank | None,
              strong: bool, target_tokens: int, filler: tuple[str, ...]) -> str:
    site = rng.choice(bank.sites)
    procedure = rng.choice(bank.procedures)
    decoy_site = rng.choice(decoy_bank.sites) if decoy_bank is not None else None

    if decoy_site is not None:
        specimen = f"SPECIMEN: {site} and {decoy_site}, {procedure}."
    else:
        specimen = f"SPECIMEN: {site}, {procedure}."
    history = (f"CLINICAL HISTORY: {rng.randint(28, 89)} year old patient with "
               f"{rng.choice(bank.history)}.")

    gross = ["GROSS DESCRIPTION: The specimen consists of a single fragment of "
             f"tan tissue measuring {rng.randint(3, 45)} mm in greatest dimension."]
    if decoy_site is not None:
        gross.append(f"A separate fragment labeled {decoy_site} is received "
                     "in the same container.")
        gross.append(f"The requisition also references the {decoy_site}.")
    micro = ["MICROSCOPIC DESCRIPTION: Sections show "
             f"{rng.choice(bank.histology)}. There is {rng.choice(bank.histology)}."]
    if strong and decoy_site is not None:
        micro.append(f"Changes extending toward the {decoy_site} are also sampled.")
    diagnosis = f"DIAGNOSIS: {site}, {procedure}: {rng.choice(bank.diagnoses)}."

    def total_words() -> int:
        return sum(len(part.split()) for part in
                   [specimen, history, *gross, *micro, diagnosis])

    # pad gross to ~55% of the target so the diagnosis always lands in the
    # bottom window of long reports
    while total_words() < 0.55 * target_tokens:
        gross.append(rng.choice(filler))
    while total_words() < 0.93 * target_tokens:
        micro.append(rng.choice(filler))
    if strong and decoy_site is not None:
        # second mention sits at the end of the microscopic section so the
        # bottom window sees it too
        micro.append(f"The findings were compared against the prior "
                     f"{decoy_site} material.")

    return "\n".join([specimen, history, " ".join(gross), " ".join(micro), diagnosis])


def generate(spec: GeneratorSpec) -> GeneratedCorpus:
    """Deterministic corpus for the given spec; same spec and seed, same bytes.

    Report content is drawn from a per-report stream keyed on (seed, split,
    ordinal), so one report's draws never depend on another's.
    """
    banks = spec.vocabulary or PhraseBanks.load()
    active = [g for g in CANONICAL_ORDER
              if spec.per_group_counts.get(g, (0, 0)) != (0, 0)]
    for g in active:
        if g not in banks.groups:
            raise MissingPhraseBankError(g)
    rng = random.Random(spec.seed)

    train_pool = [g for g in active if spec.per_group_counts[g][0] > 0]
    drafts: list[_Draft] = []
    for g in active:
        drafts.extend(_Draft(assigned=g, text_group=g)
                      for _ in range(spec.per_group_counts[g][0]))

    n_noisy = math.floor(spec.patient_noise_rate * len(drafts) + 0.5)
    noisy_indices = sorted(rng.sample(range(len(drafts)), n_noisy)) if n_noisy else []
    for idx in noisy_indices:
        draft = drafts[idx]
        draft.text_group = _pick_other(
            rng, banks.noise_pairs.get(draft.assigned, ()), train_pool,
            draft.assigned, spec.confusable_bias)

    test_drafts: list[_Draft] = []
    for g in active:
        test_drafts.extend(_Draft(assigned=g, text_group=g)
                           for _ in range(spec.per_group_counts[g][1]))

    def render(draft: _Draft, split: str, ordinal: int) -> None:
        report_rng = random.Random(f"{spec.seed}/{split}/{ordinal}")
        ambiguous = report_rng.random() < spec.ambiguity_rate
        strong = ambiguous and report_rng.random() < spec.strong_ambiguity_fraction
        decoy_bank = None
        if ambiguous:
            decoy = _pick_other(report_rng, banks.confusable.get(draft.text_group, ()),
                                active, draft.text_group, spec.confusable_bias)
            decoy_bank = banks.groups[decoy]
        if report_rng.random() < spec.long_report_fraction:
            target = int(spec.window_tokens * report_rng.uniform(2.1, 2.5))
        else:
            target = int(spec.window_tokens * report_rng.uniform(0.45, 0.85))
        draft.text = _assemble(report_rng, banks.groups[draft.text_group], decoy_bank,
                               strong, target, banks.filler)

    for i, draft in enumerate(drafts):
        render(draft, "train", i)
    for i, draft in enumerate(test_drafts):
        render(draft, "test", i)

    rng.shuffle(drafts)
    rng.shuffle(test_drafts)

    # patients: clean reports own theirs; noisy reports attach to a clean
    # patient with the same assigned label, mirroring dominant-label noise
    clean_by_label: dict[TumorGroup, list[int]] = {}
    for i, draft in enumerate(drafts):
        if draft.assigned is draft.text_group:
            clean_by_label.setdefault(draft.assigned, []).append(i)
    for i, draft in enumerate(drafts):
        draft.patient_id = f"PT-{spec.seed}-{i:05d}"
    for i, draft in enumerate(drafts):
        if draft.assigned is not draft.text_group:
            partners = clean_by_label.get(draft.assigned)
            if partners:
                draft.patient_id = drafts[rng.choice(partners)].patient_id

    train: list[LabeledReport] = []
    sidecar: list[SidecarRow] = []
    for i, draft in enumerate(drafts):
        rid = f"SYN-{spec.seed}-TR-{i:05d}"
        train.append(LabeledReport(
            report=PathologyReport(report_id=rid, patient_id=draft.patient_id,
                                   text=draft.text, source=ReportSource.SYNTHETIC),
            label=draft.assigned, label_provenance=LabelProvenance.PATIENT_LEVEL))
        sidecar.append(SidecarRow(report_id=rid, assigned_label=draft.assigned,
                                  text_label=draft.text_group,
                                  noisy=draft.assigned is not draft.text_group))

    test: list[LabeledReport] = []
    for i, draft in enumerate(test_drafts):
        rid = f"SYN-{spec.seed}-TE-{i:05d}"
        test.append(LabeledReport(
            report=PathologyReport(report_id=rid, patient_id=f"PT-{spec.seed}-T{i:05d}",
                                   text=draft.text, source=ReportSource.SYNTHETIC),
            label=draft.assigned, label_provenance=LabelProvenance.REPORT_LEVEL))

    return GeneratedCorpus(train=tuple(train), test=tuple(test), sidecar=tuple(sidecar))


def write_corpus(corpus: GeneratedCorpus, out_dir: str | Path) -> dict[str, Path]:
    """Write train/test record files plus the ground-truth noise sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"train": out / "train.jsonl", "test": out / "test.jsonl",
             "sidecar": out / "noise_sidecar.tsv"}
    write_jsonl(paths["train"], corpus.train)
    write_jsonl(paths["test"], corpus.test)
    with open(paths["sidecar"], "w", encoding="utf-8") as fh:
        fh.write("# report_id\tassigned_label\ttext_label\tnoisy\n")
        for row in corpus.sidecar:
            fh.write(f"{row.report_id}\t{row.assigned_label.value}\t"
                     f"{row.text_label.value}\t{int(row.noisy)}\n")
    return paths
