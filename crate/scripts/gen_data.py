#!/usr/bin/env python3
"""Generate the bundled desk corpus and the labeled toy task.

Molecules are assembled from ring cores, substituents and linkers, so every
output is drug-like SMILES inside the parser's subset. The toy label marks
molecules that carry a carboxylic acid, amide or nitro group, which the
generator knows from the parts it used.

Usage: python3 scripts/gen_data.py [out_dir]
"""

import random
import sys
from pathlib import Path

# Substituents: (smiles, active). `{r}` is replaced with a ring-closure label
# unique to the slot, so substituent rings never collide with core rings.
SUBSTITUENTS = [
    ("C", False),
    ("CC", False),
    ("CCC", False),
    ("C(C)C", False),
    ("O", False),
    ("OC", False),
    ("OCC", False),
    ("N", False),
    ("NC", False),
    ("N(C)C", False),
    ("F", False),
    ("Cl", False),
    ("Br", False),
    ("C(F)(F)F", False),
    ("C#N", False),
    ("C=O", False),
    ("CC(=O)C", False),
    ("C(=O)OC", False),
    ("S", False),
    ("SC", False),
    ("S(=O)(=O)C", False),
    ("C{r}CC{r}", False),
    ("C{r}CCCC{r}", False),
    ("c{r}ccncc{r}", False),
    ("CO", False),
    ("CCN", False),
    ("C(=O)O", True),
    ("CC(=O)O", True),
    ("C(=O)N", True),
    ("NC(=O)C", True),
    ("C(=O)NC", True),
    ("[N+](=O)[O-]", True),
]

# Cores with one to three attachment slots.
CORES = [
    "c1ccc({0})cc1",
    "c1ccc({0})c({1})c1",
    "c1cc({0})ccc1{1}",
    "c1cc({0})cc({1})c1{2}",
    "c1ccc2cc({0})ccc2c1",
    "c1ccnc({0})c1",
    "c1cc({0})ncc1{1}",
    "c1csc({0})c1",
    "c1cc({0})oc1",
    "c1cc[nH]c1{0}",
    "C1CCC({0})CC1",
    "C1CCN({0})CC1",
    "C1CN({0})CCN1{1}",
    "C1CCOC1{0}",
    "N1C(=O)CCC1{0}",
    "c1ccc2[nH]c({0})cc2c1",
    "c1ccc2ncc({0})cc2c1",
    "C({0})C({1})",
    "CC({0})C{1}",
    "C=CC({0})",
]

LINKERS = ["", "C", "CC", "O", "N", "C(=O)N", "OC", "S", "C(=O)"]


def substituent(rng, slot):
    smi, active = rng.choice(SUBSTITUENTS)
    return smi.replace("{r}", f"%{10 + slot}"), active


def decorated_core(rng, slot_base, first=None):
    cores = CORES if first is None else [c for c in CORES if "{" in c]
    core = rng.choice(cores)
    n = core.count("{")
    parts, active = [], False
    for k in range(n):
        if k == 0 and first is not None:
            parts.append(first)
            continue
        smi, a = substituent(rng, slot_base + k)
        parts.append(smi)
        active |= a
    return core.format(*parts), active


def molecule(rng):
    if rng.random() < 0.45:
        # a second decorated core hangs off the first core's first slot through a linker
        other, a2 = decorated_core(rng, 10)
        smi, a1 = decorated_core(rng, 0, first=rng.choice(LINKERS) + renumber(other))
        return smi, a1 or a2
    return decorated_core(rng, 0)


def renumber(smi):
    """Shift single-digit ring labels of the second core to %3x so they stay unique."""
    out = []
    i = 0
    while i < len(smi):
        c = smi[i]
        if c == "%":
            out.append(smi[i : i + 3])
            i += 3
            continue
        if c.isdigit():
            out.append(f"%3{c}")
        else:
            out.append(c)
        i += 1
    return "".join(out)


def generate(rng, n, labeled):
    seen, rows = set(), []
    while len(rows) < n:
        smi, active = molecule(rng)
        if smi in seen:
            continue
        seen.add(smi)
        rows.append((smi, int(active)) if labeled else (smi,))
    return rows


def write_csv(path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(str(x) for x in r) + "\n")


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "crates" / "core" / "data"
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "corpus500.csv", ["smiles"], generate(random.Random(20240501), 500, False))
    write_csv(out / "toy_task.csv", ["smiles", "active"], generate(random.Random(20240502), 400, True))


if __name__ == "__main__":
    main()
