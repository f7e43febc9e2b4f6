"""Base contract for task graders.

A package's metric.py defines ``class Metric(CompetitionMetric)`` and ends with
``main(Metric())``. Invocation: ``python metric.py SUBMISSION ANSWER``.

Exit status 0 prints a final ``SCORE: <float>`` line, 3 means the submission
was rejected (reason on stderr), 1 means the grader itself failed.
"""

import csv
import math
import sys

EXIT_OK = 0
EXIT_CRASH = 1
EXIT_INVALID = 3


class InvalidSubmission(Exception):
    """Raised by validate() when a submission violates the declared schema."""


class Table:
    def __init__(self, header, rows):
        self.header = header
        self.rows = rows

    def column(self, name):
        idx = self.header.index(name)
        return [row[idx] for row in self.rows]

    def __len__(self):
        return len(self.rows)


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidSubmission("empty file: no header row")
        rows = [row for row in reader if row]
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise InvalidSubmission(
                "line %d: expected %d fields, found %d" % (lineno, len(header), len(row))
            )
    return Table(header, rows)


class CompetitionMetric:
    higher_is_better = True

    def validate(self, submission, answer):
        raise NotImplementedError

    def evaluate(self, submission, answer):
        raise NotImplementedError

    def require_columns(self, table, columns):
        for col in columns:
            if col not in table.header:
                raise InvalidSubmission("missing column: %s" % col)

    def require_same_ids(self, submission, answer, id_column="id"):
        sub_ids = submission.column(id_column)
        if len(set(sub_ids)) != len(sub_ids):
            raise InvalidSubmission("duplicate values in column: %s" % id_column)
        if set(sub_ids) != set(answer.column(id_column)):
            raise InvalidSubmission("%s values do not match the test set" % id_column)

    def grade(self, submission_path, answer_path):
        try:
            answer = read_csv(answer_path)
        except InvalidSubmission as exc:
            raise RuntimeError("unreadable answer file: %s" % exc)
        submission = read_csv(submission_path)
        self.validate(submission, answer)
        return float(self.evaluate(submission, answer))


def main(metric, argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) < 2:
        print("usage: metric.py SUBMISSION ANSWER", file=sys.stderr)
        sys.exit(EXIT_CRASH)
    try:
        score = metric.grade(argv[0], argv[1])
    except InvalidSubmission as exc:
        print("invalid submission: %s" % exc, file=sys.stderr)
        sys.exit(EXIT_INVALID)
    except Exception as exc:
        print("grader error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        sys.exit(EXIT_CRASH)
    if not math.isfinite(score):
        print("grader error: non-finite score %r" % score, file=sys.stderr)
        sys.exit(EXIT_CRASH)
    sys.stdout.flush()
    print("SCORE: %r" % score)
    sys.exit(EXIT_OK)
