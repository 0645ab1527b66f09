"""Compare the three gossip variants on the representation task.

All three run the same outer loop at the same hyperparameters; they
differ only in how lower-level messages are encoded:

  c2dfb         residuals against neighbor-held reference points
  naive         direct compression with local error feedback
  uncompressed  full vectors every step

The comparison is made at a shared payload budget (the smallest final
total among the three), so the cheap variants are judged on what they
achieve with the bytes the expensive one needed.  One CSV per variant
lands in demos/runs/ for the companion plotting package.

    python3 demos/compare_variants.py
"""

import pathlib

from bilevelgossip import (
    Compressor,
    RunConfig,
    TopologySpec,
    build_mixing_matrix,
    make_hyper_representation_problem,
    run,
    write_log,
)

OUT = pathlib.Path(__file__).parent / "runs"

CFG = dict(
    eta_in=0.5,
    eta_out=0.4,
    gamma_in=0.3,
    gamma_out=0.5,
    lam=10.0,
    inner_steps=8,
    rounds=60,
    init_scale=0.1,
    seed=0,
)


def last_within(records, budget):
    """Final row whose cumulative payload fits the budget."""
    rows = [r for r in records if r.payload_words_total <= budget]
    return rows[-1]


def main():
    OUT.mkdir(exist_ok=True)
    problem = make_hyper_representation_problem(m=10, h=0.8, seed=0)
    w = build_mixing_matrix(TopologySpec(kind="ring", m=10))
    compressor = Compressor.top_k(0.2)

    logs = {}
    for variant in ("c2dfb", "naive", "uncompressed"):
        log = run(RunConfig(variant=variant, **CFG), problem, w, compressor)
        write_log(log.records, OUT / f"variant_{variant}.csv")
        logs[variant] = log

    budget = min(log.records[-1].payload_words_total for log in logs.values())
    print(f"payload budget (words): {budget}")
    print(f"{'variant':<14}{'payload':>10}{'val loss':>12}{'val acc':>10}")
    for variant, log in logs.items():
        rec = last_within(log.records, budget)
        print(
            f"{variant:<14}{rec.payload_words_total:>10}"
            f"{rec.val_loss:>12.4f}{rec.val_accuracy:>10.3f}"
        )
    print(f"\ncsv files in {OUT}/")


if __name__ == "__main__":
    main()
