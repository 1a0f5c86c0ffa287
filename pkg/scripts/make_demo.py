"""Regenerate the shipped demo dataset (two-component SF / CFUSN, p = 4)."""

from pathlib import Path

import numpy as np

from skewfa.cli import main
from skewfa.model import ComponentParams, MixtureParams, ModelSpec, params_to_json

DATA = Path(__file__).resolve().parents[1] / "src" / "skewfa" / "data"

spec = ModelSpec("SF", "CFUSN", g=2, p=4, q=1, r=1)
params = MixtureParams(spec, (
    ComponentParams(0.6, np.zeros(4), np.array([[1.0], [0.8], [0.6], [0.4]]),
                    np.full(4, 0.3), np.array([[2.0]])),
    ComponentParams(0.4, np.array([4.0, -3.0, 3.0, 4.0]), np.array([[0.5], [-1.0], [0.7], [0.9]]),
                    np.full(4, 0.4), np.array([[-1.5]])),
))

if __name__ == "__main__":
    (DATA / "demo_params.json").write_text(params_to_json(params, indent=2) + "\n")
    main(["simulate", "--params", str(DATA / "demo_params.json"), "--n", "400",
          "--seed", "2024", "--output", str(DATA / "demo.csv")])
    (DATA / "demo.json").unlink()
