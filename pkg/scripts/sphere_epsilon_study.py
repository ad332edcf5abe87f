"""Warm-start gains on the sphere supply/demand task as a function of epsilon."""
import argparse

from metaot import synth
from metaot.discrete import MetaConfig, benchmark, summarize, train_meta
from metaot.nn.rng import make_rng


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epsilons", default="0.01,0.03,0.1")
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--instances", type=int, default=50)
    args = ap.parse_args()

    supply = synth.uniform_raster()
    demand = synth.blob_raster(make_rng(0, "raster"))
    print("epsilon  default  meta  ratio  meta_closer")
    for eps in (float(e) for e in args.epsilons.split(",")):
        task = synth.sphere_task(supply, demand, make_rng(0, "supports"), epsilon=eps)
        model, _ = train_meta(task, MetaConfig(iters=args.iters), make_rng(0, "train"))
        A, B = task.sample(make_rng(0, "test"), args.instances)
        s = summarize(benchmark(model, [task.problem(a, b) for a, b in zip(A, B)]))
        d, m = s["median_iterations_default"], s["median_iterations_meta"]
        print(f"{eps:<8g} {d:7g} {m:5g} {m / d:6.2f}  {s['meta_init_better']}/{s['instances']}")


if __name__ == "__main__":
    main()
