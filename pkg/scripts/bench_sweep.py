"""Prototype attention vs self-attention cost sweep.

Writes the bench CSV and prints the closed-form anchor ratio and the
log-log slopes of wall time against token count.

    python scripts/bench_sweep.py --out bench.csv
"""
import argparse
import logging

from protoem import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="bench.csv")
    ap.add_argument("--grid", default=",".join(map(str, bench.DEFAULT_GRID)))
    ap.add_argument("--K", type=int, default=20)
    ap.add_argument("--N", type=int, default=3)
    ap.add_argument("--D", type=int, default=32)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    anchor = bench.BenchConfig(**bench.ANCHOR, K=args.K, N=args.N, D=args.D)
    proto, self_attn = bench.count_macs(anchor)
    print(f"anchor T={anchor.T}: iterative ratio {bench.iteration_ratio(anchor)}, "
          f"total MACs {proto.total:.3e} vs {self_attn.total:.3e}")

    grid = tuple(int(t) for t in args.grid.split(","))
    points = bench.run_sweep(grid, K=args.K, N=args.N, D=args.D, reps=args.reps)
    bench.write_csv(points, args.out)
    sp, ss = bench.sweep_slopes(points)
    for p in points:
        print(f"T={p.T:6d}  proto {p.proto_ns / 1e6:9.2f} ms  self {p.self_ns / 1e6:9.2f} ms")
    print(f"slopes: prototyping {sp:.3f}, self-attention {ss:.3f}")


if __name__ == "__main__":
    main()
