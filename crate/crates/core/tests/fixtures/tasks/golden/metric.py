from taskforge_grading import CompetitionMetric, InvalidSubmission, main


class Metric(CompetitionMetric):
    higher_is_better = True

    def validate(self, submission, answer):
        self.require_columns(submission, ["id", "label"])
        self.require_same_ids(submission, answer)
        for value in submission.column("label"):
            if value not in ("0", "1"):
                raise InvalidSubmission("label must be 0 or 1, found %r" % value)

    def evaluate(self, submission, answer):
        truth = dict(zip(answer.column("id"), answer.column("label")))
        pred = dict(zip(submission.column("id"), submission.column("label")))
        hits = sum(1 for key, value in truth.items() if pred[key] == value)
        return hits / len(truth)


if __name__ == "__main__":
    main(Metric())
