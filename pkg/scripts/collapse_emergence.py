"""Train the toy MLP on separable blobs and print collapse metrics per checkpoint."""
import argparse

from ncal.collapse import collapse_report
from ncal.pool import PoolState
from ncal.toy import BlobSpec, TrainConfig, generate_blobs, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--per-class", type=int, default=200)
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--separation", type=float, default=6.0)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--every", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ds = generate_blobs(BlobSpec.balanced(args.classes, args.per_class, args.dim,
                                          args.separation, 1.0, args.seed))
    labels = ds.label_map()
    pool = PoolState.initial(args.classes, labels, [])
    print(f"{'epochs':>7} {'train_acc':>10} {'nc1':>8} {'nc2_cos':>9} {'nc4':>6}")
    model = None
    done = 0
    while done < args.epochs:
        n = min(args.every, args.epochs - done)
        # continue from the previous model; the batch order reseeds per chunk
        trace = train(TrainConfig(epochs=n, seed=args.seed + done), ds.features, labels,
                      args.classes, model=model)
        model, done = trace.model, done + n
        rep = collapse_report(trace.features, pool)
        print(f"{done:7d} {trace.train_acc[-1]:10.4f} {rep.nc1_ratio:8.4f} "
              f"{rep.nc2_cos_mean:9.4f} {rep.nc4_agreement:6.3f}")
    print(f"target cosine {rep.nc2_target:.4f}")


if __name__ == "__main__":
    main()
