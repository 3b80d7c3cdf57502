"""Statistical trend invariants that reuse the expensive session fixtures:
overfitting pushes mask accuracy up and membership-inference F1 up for the
unprotected scheme, while protected schemes stay flat."""

from privlm.maskplan import Protection


def test_mask_accuracy_rises_with_overfitting(masked_trend_runs):
    for seed, data in masked_trend_runs["runs"].items():
        audits = data["audits"][Protection.NONE]
        accuracies = [acc for _, _, acc in audits]
        # overfitting direction: final far above first, small dips tolerated
        assert accuracies[-1] > accuracies[0], f"seed {seed}: {accuracies}"
        for earlier, later in zip(accuracies, accuracies[1:]):
            assert later >= earlier - 0.02, f"seed {seed}: {accuracies}"


def test_identifier_mia_f1_rises_with_epochs(mia_split_runs):
    for seed, per_protection in mia_split_runs.items():
        f1s = [
            result.f1 if result.f1 is not None else 0.0
            for _, result in per_protection[Protection.NONE]
        ]
        assert f1s[-1] > 0.0, f"seed {seed}: no membership signal at the last milestone"
        inversions = sum(1 for a, b in zip(f1s, f1s[1:]) if b < a)
        assert inversions <= 1, f"seed {seed}: F1 trajectory {f1s}"


def test_identifier_mia_recall_antitone_in_privacy(mia_split_runs):
    # more leaks (lower privacy) never lowers recall on the same split
    for seed, per_protection in mia_split_runs.items():
        recall_none = per_protection[Protection.NONE][-1][1].recall
        recall_full = per_protection[Protection.FULL][-1][1].recall
        assert recall_none >= recall_full
