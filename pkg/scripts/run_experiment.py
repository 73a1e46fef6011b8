#!/usr/bin/env python3
"""Run any scenario config and print its verdict summary.

    python3 scripts/run_experiment.py configs/degenerate_fclt.toml out/ [workers]
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from uproc.harness import emit_plotdata, load_config, run_config


def main():
    if len(sys.argv) < 3:
        print(__doc__)
        return 2
    cfg = load_config(sys.argv[1])
    out = Path(sys.argv[2])
    workers = int(sys.argv[3]) if len(sys.argv) > 3 else 1
    report = run_config(cfg, out, workers=workers)
    emit_plotdata(report, out)
    print(json.dumps({k: report[k] for k in ("scenario", "pass", "verdicts")},
                     indent=2, sort_keys=True, default=str))
    return 0 if report["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
