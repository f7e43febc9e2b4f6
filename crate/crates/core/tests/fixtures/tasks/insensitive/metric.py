from taskforge_grading import CompetitionMetric, main


class Metric(CompetitionMetric):
    higher_is_better = True

    def validate(self, submission, answer):
        self.require_columns(submission, ["id", "label"])
        self.require_same_ids(submission, answer)

    def evaluate(self, submission, answer):
        # Ignores the predictions entirely.
        return 0.5


if __name__ == "__main__":
    main(Metric())
