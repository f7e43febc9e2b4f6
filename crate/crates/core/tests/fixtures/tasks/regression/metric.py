import math

from taskforge_grading import CompetitionMetric, InvalidSubmission, main


class Metric(CompetitionMetric):
    higher_is_better = False

    def validate(self, submission, answer):
        self.require_columns(submission, ["id", "y"])
        self.require_same_ids(submission, answer)
        for value in submission.column("y"):
            try:
                float(value)
            except ValueError:
                raise InvalidSubmission("y must be numeric, found %r" % value)

    def evaluate(self, submission, answer):
        truth = dict(zip(answer.column("id"), map(float, answer.column("y"))))
        pred = dict(zip(submission.column("id"), map(float, submission.column("y"))))
        return math.sqrt(sum((pred[k] - v) ** 2 for k, v in truth.items()) / len(truth))


if __name__ == "__main__":
    main(Metric())
