"""Write the reference configs (sl(2,R), o(2), u(2)) with explicit Fourier records."""
import argparse
from pathlib import Path

from gevkam import io
from gevkam.instances import REFERENCE_OMEGA, reference_A, reference_perturbation
from gevkam.io import ProblemConfig

NAMES = {"reference": "SL(n,R)", "o2": "O(n)", "u2": "U(n)"}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="configs")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, group in NAMES.items():
        cfg = ProblemConfig(n=2, d=2, omega=REFERENCE_OMEGA, kappa=0.1, tau=1.5,
                            group=io.GroupTag.parse(group), A=reference_A(group),
                            F=reference_perturbation(group, args.seed), r=0.5,
                            params={"mode": "practical", "c_N": 2.0, "max_band": 64,
                                    "target_eps": 1e-80, "max_steps": 3, "eps0": 1e-2},
                            seed=args.seed)
        io.write_json(out / f"{name}.json", cfg.to_dict())
        print(f"wrote {out / f'{name}.json'}")


if __name__ == "__main__":
    main()
