import json
import os
import sys
import tempfile

sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), "rcpg"))

from config import validate_config
from evaluation import read_summary
from pipeline import Pipeline
from run_ledger import RunLedger


def print_section(title):
    print("\n" + "=" * 60)
    print(f" {title}")
    print("=" * 60)


def run_demo():
    print_section("Robust constrained policy gradient: three-phase demo (Safe Navigation 1)")

    out_dir = tempfile.mkdtemp(prefix="rcpg-demo-")
    config_text = json.dumps({
        "domain": "nav1",
        "algorithms": ["cpg", "rcpg-lagrangian", "adv-rcpg"],
        "seeds": [0],
        "training_episodes": 200,
        "nominal_episodes": 20,
        "runs_per_setting": 3,
        "output_dir": out_dir,
        "trainer": {"pretrain_max_iters": 2000},
    }, indent=2)
    cfg, warnings = validate_config(config_text)
    for warning in warnings:
        print(f"warning: {warning}")

    pipeline = Pipeline(cfg)
    try:
        pipeline.run(["estimate"])
        uset = pipeline.estimate()
        print_section("[1] Uncertainty set")
        print(f"alpha range: [{uset.budget.min():.3f}, {uset.budget.max():.3f}]")

        pipeline.run(["train"])
        print_section("[2] Training")
        for entry in RunLedger(os.path.join(out_dir, "ledger.json")).entries:
            if entry["kind"] == "train":
                print(f"{entry['data']['algorithm']:>16} seed {entry['data']['seed']}: "
                      f"final lambda {entry['data']['final_lambda']:.3f}")

        pipeline.run(["test"])
        print_section("[3] Test summary (pooled penalised return)")
        summary = read_summary(os.path.join(out_dir, "summary.csv"))
        print(summary[summary["param_value"] == "ALL"][["algorithm", "test_id", "penalised_return"]]
              .to_string(index=False))
    except Exception as e:
        print(f"Demo failed: {e}")
        return

    print_section("[4] Ledger integrity")
    report = RunLedger(os.path.join(out_dir, "ledger.json")).validate_chain()
    print(f"Chain Valid: {report['is_valid']}")
    print(f"Chain Length: {report['length']}")
    print(f"Artifacts in {out_dir}")


if __name__ == "__main__":
    run_demo()
