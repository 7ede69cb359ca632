"""Run the full experiment chain for one configuration file.

    python scripts/reproduce.py configs/default.json [--skip-tune]

Steps: simulate the dataset (if missing), grid-search hyperparameters on
configuration 1, offline baselines, and the KDE-forgetting vs FIFO online
comparison.  With tuning enabled the later steps use the tuned values.
"""

import argparse
import json
import sys
import tempfile
import time
from pathlib import Path

from auvsvr.cli import load_config, main


def step(name, argv):
    t0 = time.perf_counter()
    print(f"== {name}", flush=True)
    code = main(argv)
    print(f"== {name}: exit {code} after {time.perf_counter() - t0:.0f} s", flush=True)
    if code:
        sys.exit(code)


def run(config: Path, skip_tune: bool) -> None:
    cfg = load_config(config)
    if not cfg.dataset.is_file():
        step("simulate", ["simulate", "--config", str(config)])
    if not skip_tune:
        step("tune", ["tune", "--config", str(config)])
        # point a derived config at the tuning report
        raw = json.loads(config.read_text())
        raw["hyperparams"] = str(cfg.output_dir / "tuned.json")
        raw["dataset"] = str(cfg.dataset)
        raw["output_dir"] = str(cfg.output_dir)
        tmp = Path(tempfile.mkdtemp()) / config.name
        tmp.write_text(json.dumps(raw))
        config = tmp
    step("baselines", ["baselines", "--config", str(config)])
    step("compare", ["compare", "--config", str(config)])


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config", type=Path)
    p.add_argument("--skip-tune", action="store_true")
    args = p.parse_args()
    run(args.config, args.skip_tune)
