"""The shipped constants file: calibrated GN constants, empirical exponents and
reference-run regression values."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..inequalities import GNConstants

DEFAULT_FILE = Path(__file__).with_name("constants.json")


@dataclass
class Constants:
    gn: GNConstants
    alpha1: float = 0.0
    alpha2: float = 0.0
    alpha3: float = 0.0
    alpha4: float = 1.0
    C1: float = 1.0  # prefactor fixed when fitting alpha1
    c3: float = 0.1  # mass threshold defining alpha3 and alpha4
    reference: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    path: str = ""

    @property
    def C_GN(self) -> float:
        return self.gn.C_GN

    def to_json(self, path=None) -> str:
        d = {
            "gn": json.loads(self.gn.to_json()),
            "empirical": {k: getattr(self, k) for k in ("alpha1", "alpha2", "alpha3", "alpha4", "C1", "c3")},
            "reference": self.reference,
            "provenance": self.provenance,
        }
        text = json.dumps(d, indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def load_constants(path=None) -> Constants:
    """Read a constants file; ``None`` or ``""`` selects the packaged one."""
    p = Path(path) if path else DEFAULT_FILE
    d = json.loads(p.read_text())
    gn = GNConstants.from_json(json.dumps(d["gn"]))
    emp = d.get("empirical", {})
    return Constants(gn=gn, reference=d.get("reference", {}), provenance=d.get("provenance", {}),
                     path=str(p), **emp)
