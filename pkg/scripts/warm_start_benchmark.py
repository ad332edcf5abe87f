"""Train a warm-start model on Dirichlet grid pairs and compare Sinkhorn iteration counts."""
import argparse
import time

from metaot import synth
from metaot.discrete import MetaConfig, benchmark, summarize, train_meta, write_benchmark_csv
from metaot.nn.rng import make_rng


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid", type=int, default=12)
    ap.add_argument("--epsilon", type=float, default=1e-2)
    ap.add_argument("--iters", type=int, default=6000)
    ap.add_argument("--hidden", default="256,256")
    ap.add_argument("--instances", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", default="")
    args = ap.parse_args()

    task = synth.dirichlet_task(args.grid, epsilon=args.epsilon)
    config = MetaConfig(iters=args.iters, hidden=tuple(int(h) for h in args.hidden.split(",")))
    start = time.perf_counter()
    model, history = train_meta(task, config, make_rng(args.seed, "train"))
    print(f"trained {args.iters} iterations in {time.perf_counter() - start:.0f}s, "
          f"final loss {history[-1] if history else float('nan'):.5f}")
    A, B = task.sample(make_rng(args.seed, "test"), args.instances)
    records = benchmark(model, [task.problem(a, b) for a, b in zip(A, B)])
    for key, value in summarize(records).items():
        print(f"{key:28s} {value}")
    if args.csv:
        write_benchmark_csv(records, args.csv)


if __name__ == "__main__":
    main()
