"""Split data/raw/data.csv into public train/test files and private answers."""

import argparse
import csv
import os
import random

DESCRIPTION = """Predict the binary label of each row in test.csv.

Files: train.csv (id, x1, x2, label), test.csv (id, x1, x2).
Submission: CSV with header id,label and one row per test id; label is 0 or 1.
Metric: accuracy, the fraction of test rows whose label is predicted exactly. Higher is better.
"""


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def prepare(raw, public, private, seed=7):
    rows = read_rows(os.path.join(raw, "data.csv"))
    if len(rows) < 10:
        raise ValueError("need at least 10 rows to split, found %d" % len(rows))
    rng = random.Random(seed)
    by_label = {}
    for row in rows:
        by_label.setdefault(row["label"], []).append(row)
    train, test = [], []
    for label in sorted(by_label):
        group = by_label[label]
        rng.shuffle(group)
        cut = len(group) // 5
        test.extend(group[:cut])
        train.extend(group[cut:])
    train.sort(key=lambda r: int(r["id"]))
    test.sort(key=lambda r: int(r["id"]))

    os.makedirs(public, exist_ok=True)
    os.makedirs(private, exist_ok=True)
    write_csv(os.path.join(public, "train.csv"), ["id", "x1", "x2", "label"],
              [[r["id"], r["x1"], r["x2"], r["label"]] for r in train])
    write_csv(os.path.join(public, "test.csv"), ["id", "x1", "x2"],
              [[r["id"], r["x1"], r["x2"]] for r in test])
    write_csv(os.path.join(public, "sample_submission.csv"), ["id", "label"],
              [[r["id"], rng.randint(0, 1)] for r in test])
    write_csv(os.path.join(private, "test_answer.csv"), ["id", "label"],
              [[r["id"], r["label"]] for r in test])
    with open(os.path.join(public, "description.txt"), "w") as fh:
        fh.write(DESCRIPTION)


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("raw")
    parser.add_argument("public")
    parser.add_argument("private")
    parser.add_argument("--seed", type=int, default=int(os.environ.get("TASKFORGE_SEED", "7")))
    args = parser.parse_args()
    prepare(args.raw, args.public, args.private, seed=args.seed)
