"""Hold out every fifth shuffled row of data/raw/data.csv as the test set."""

import argparse
import csv
import os
import random


def prepare(raw, public, private, seed=7):
    with open(os.path.join(raw, "data.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) < 5:
        raise ValueError("need at least 5 rows to split, found %d" % len(rows))
    rng = random.Random(seed)
    rng.shuffle(rows)
    cut = len(rows) // 5
    test = sorted(rows[:cut], key=lambda r: int(r["id"]))
    train = sorted(rows[cut:], key=lambda r: int(r["id"]))
    os.makedirs(public, exist_ok=True)
    os.makedirs(private, exist_ok=True)

    def write(path, header, data):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(data)

    write(os.path.join(public, "train.csv"), ["id", "x", "y"], [[r["id"], r["x"], r["y"]] for r in train])
    write(os.path.join(public, "test.csv"), ["id", "x"], [[r["id"], r["x"]] for r in test])
    write(os.path.join(public, "sample_submission.csv"), ["id", "y"],
          [[r["id"], round(rng.uniform(0, 20), 3)] for r in test])
    write(os.path.join(private, "test_answer.csv"), ["id", "y"], [[r["id"], r["y"]] for r in test])
    with open(os.path.join(public, "description.txt"), "w") as fh:
        fh.write("Predict y for each id in test.csv. Submission header: id,y. Metric: RMSE, lower is better.\n")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("raw")
    parser.add_argument("public")
    parser.add_argument("private")
    parser.add_argument("--seed", type=int, default=int(os.environ.get("TASKFORGE_SEED", "7")))
    args = parser.parse_args()
    prepare(args.raw, args.public, args.private, seed=args.seed)
