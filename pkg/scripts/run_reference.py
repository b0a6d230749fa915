"""Run and verify the reference configs, printing the per-step decay."""
import argparse
import sys
from pathlib import Path

from gevkam import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs", default=str(Path(__file__).resolve().parent.parent / "configs"))
    ap.add_argument("--out", default="runs")
    ap.add_argument("--target-eps", default=None, help="override the configured target")
    args = ap.parse_args()
    status = 0
    for cfg in sorted(Path(args.configs).glob("*.json")):
        out = Path(args.out) / cfg.stem
        print(f"== {cfg.name}")
        extra = ["--target-eps", args.target_eps] if args.target_eps else []
        rc = cli.main(["run", str(cfg), "--out", str(out), *extra])
        if rc == 0:
            rc = cli.main(["verify", str(out)])
        status |= rc
    return status


if __name__ == "__main__":
    sys.exit(main())
