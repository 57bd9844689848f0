"""Perturbed-image enumeration and image-counterfactual search.

A perturbation is a bit vector over segments: bit i = 1 keeps segment i
from the image, 0 infills it from the contrast (or black). All
combinations with up to four replacements are enumerated, classified,
and searched for image-counterfactuals: perturbations that flip the
class and are minimal, meaning restoring any single replaced segment
brings the original class back.
"""

import csv
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .classifiers import DECISION_BOUNDARY, classify
from .errors import IncompleteEnumeration, InputError, LengthMismatch

# subsampling below is part of the deterministic contract, so the seed is fixed
SUBSAMPLE_SEED = 9173

MAX_COUNTERFACTUAL_SIZE = 4

INFILL_MODES = ("contrast", "black")


@dataclass(frozen=True)
class PerturbationRecord:
    bits: tuple[int, ...]
    probability: float
    is_counterfactual: bool = False

    @property
    def size(self) -> int:
        return self.bits.count(0)


@dataclass(frozen=True)
class Counterfactual:
    bits: tuple[int, ...]
    replaced: tuple[int, ...]  # 1-based segment ids with bit 0
    probability: float

    @property
    def size(self) -> int:
        return len(self.replaced)


def compose_image(x, x_prime, segments, bits, infill="contrast") -> np.ndarray:
    """Image with bit-0 segments taken from the contrast (or blacked out).

    Pixels outside every segment always come from x.
    """
    if len(bits) != segments.n:
        raise LengthMismatch(f"{len(bits)} bits for {segments.n} segments")
    if infill not in INFILL_MODES:
        raise InputError(f"unknown infill mode {infill!r}")
    out = np.array(x, dtype=np.float64, copy=True)
    zero_ids = [i + 1 for i, b in enumerate(bits) if not b]
    if zero_ids:
        region = np.isin(segments.labels, zero_ids)
        out[region] = x_prime[region] if infill == "contrast" else 0.0
    return out


def _vectors_of_size(n, k):
    for zeros in itertools.combinations(range(n), k):
        bits = [1] * n
        for j in zeros:
            bits[j] = 0
        yield tuple(bits)


def enumerate_perturbations(n, max_size=MAX_COUNTERFACTUAL_SIZE,
                            num_samples=None) -> list[tuple[int, ...]]:
    """All replacement vectors with 1..max_size zeros, by size then
    lexicographic.

    When the total exceeds num_samples, every size-1 and size-2 vector is
    kept (counterfactual minimality checks depend on them) and larger
    sizes are filled in size order, the last admitted size subsampled
    uniformly with a fixed seed.
    """
    if n < 1:
        raise InputError("need at least one segment")
    max_size = min(max_size, n)
    per_size = {k: list(_vectors_of_size(n, k)) for k in range(1, max_size + 1)}
    total = sum(len(v) for v in per_size.values())
    if num_samples is None or total <= num_samples:
        return [v for k in range(1, max_size + 1) for v in per_size[k]]
    result = per_size.get(1, []) + per_size.get(2, [])
    budget = num_samples - len(result)
    rng = np.random.default_rng(SUBSAMPLE_SEED)
    for k in range(3, max_size + 1):
        if budget <= 0:
            break
        vectors = per_size[k]
        if len(vectors) <= budget:
            result.extend(vectors)
            budget -= len(vectors)
        else:
            chosen = rng.choice(len(vectors), size=budget, replace=False)
            result.extend(vectors[i] for i in sorted(chosen))
            budget = 0
    return result


def evaluate_dataset(m, x, x_prime, segments, vectors, infill="contrast",
                     workers=1) -> list[PerturbationRecord]:
    """Classify every composed perturbation, preserving vector order.

    Fans out across threads only when the classifier declares itself
    concurrency safe; results are identical either way.
    """
    def probe(bits):
        return classify(m, compose_image(x, x_prime, segments, bits, infill)).probability

    if workers > 1 and getattr(m, "concurrency_safe", False):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            probs = list(pool.map(probe, vectors))
    else:
        probs = [probe(bits) for bits in vectors]
    return [PerturbationRecord(bits=tuple(bits), probability=p)
            for bits, p in zip(vectors, probs)]


def find_counterfactuals(records, y_original, boundary=DECISION_BOUNDARY,
                         prober=None) -> list[Counterfactual]:
    """Image-counterfactuals among the records, by size then lexicographic.

    A record qualifies when its class differs from the original image's
    and restoring any single replaced segment restores the original
    class. Restorations are looked up among the records; a missing one is
    evaluated through `prober(bits)` when given, otherwise
    IncompleteEnumeration is raised.
    """
    original_positive = y_original >= boundary
    index = {r.bits: r.probability for r in records}

    def flips(p):
        return (p >= boundary) != original_positive

    found = []
    for record in sorted(records, key=lambda r: (r.size, r.bits)):
        if record.size == 0 or not flips(record.probability):
            continue
        minimal = True
        for j, bit in enumerate(record.bits):
            if bit:
                continue
            restored = record.bits[:j] + (1,) + record.bits[j + 1:]
            if restored.count(0) == 0:
                p = y_original
            elif restored in index:
                p = index[restored]
            elif prober is not None:
                p = float(prober(restored))
                index[restored] = p
            else:
                raise IncompleteEnumeration(
                    f"minimality check for {record.bits} needs missing record "
                    f"{restored}")
            if flips(p):
                minimal = False
                break
        if minimal:
            replaced = tuple(i + 1 for i, b in enumerate(record.bits) if not b)
            found.append(Counterfactual(bits=record.bits, replaced=replaced,
                                        probability=record.probability))
    return found


def mark_counterfactuals(records, counterfactuals) -> list[PerturbationRecord]:
    """Copy of the records with is_counterfactual set from the found list."""
    hits = {c.bits for c in counterfactuals}
    return [replace(r, is_counterfactual=r.bits in hits) for r in records]


def save_records_csv(records, path) -> None:
    """Seg01..Segnn, probability, is_counterfactual rows, one per record."""
    if not records:
        raise InputError("no records to export")
    n = len(records[0].bits)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"Seg{i:02d}" for i in range(1, n + 1)]
                        + ["probability", "is_counterfactual"])
        for record in records:
            writer.writerow(list(record.bits)
                            + [repr(record.probability),
                               int(record.is_counterfactual)])
