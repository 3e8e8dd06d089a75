"""Regenerate the bundled survey-shaped fixture (CSV, config, truth JSON)."""
import argparse
import json
from pathlib import Path

from shiftmod.data import save_dataset
from shiftmod.sim import FIXTURE_COVARIATES, FIXTURE_EXPOSURES, gen_nhanes_like

CONFIG = """[columns]
covariates = {cov}
exposures = {exp}
outcome = telomere_ts

[shift]
units = sd_multiple
default = 1.0

[search]
max_depth = 2
significance_z = 1.96

[run]
data = nhanes_like.csv
folds = 5
seed = 7
"""


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src" / "shiftmod" / "data"))
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds, truth = gen_nhanes_like(args.n, args.seed)
    save_dataset(ds, out / "nhanes_like.csv")
    (out / "nhanes_like.ini").write_text(CONFIG.format(cov=", ".join(FIXTURE_COVARIATES),
                                                       exp=", ".join(FIXTURE_EXPOSURES)))
    (out / "nhanes_like_truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    print("wrote fixture to", out)


if __name__ == "__main__":
    main()
