__author__ = 'frank'

import csv
import logging
import os

import numpy as np
from attrdict import AttrDict

from .BaseObject import BaseObject
from .FeatureIO import FeatureSet
from .Nets import embed_features, encode

log = logging.getLogger(__name__)


def _unit(vector):

    vector = np.asarray(vector, dtype=np.float64)
    norm = np.linalg.norm(vector)
    if norm == 0:
        raise ValueError('Cannot Normalize A Zero Vector')

    return vector / norm


class SpeakerModel(BaseObject):
    """
    Enrolled speaker: the re-normalized mean of the enrollment embeddings.

    :param speaker_id: Speaker identifier.
    :param centroid: Unit-norm centroid.
    :param n_enroll: Number of enrollment embeddings averaged.
    """

    def __init__(self, speaker_id, centroid, n_enroll):
        super(SpeakerModel, self).__init__()

        if n_enroll < 1:
            raise ValueError('n_enroll Must Be At Least 1')

        self.speaker_id = speaker_id
        self.centroid = _unit(centroid)
        self.n_enroll = n_enroll

    def to_dict(self):
        return {'speaker_id': self.speaker_id, 'centroid': self.centroid.tolist(), 'n_enroll': self.n_enroll}

    @classmethod
    def from_dict(cls, data):
        return cls(data['speaker_id'], data['centroid'], data['n_enroll'])


class TrialScoreSet(object):
    """
    Scored verification trials.

    :param trials: List of (score, target) pairs.
    :param ids: Optional list of (model_id, test_id) pairs aligned with trials.
    """

    def __init__(self, trials, ids=None):

        self.trials = [(float(s), bool(t)) for s, t in trials]
        self.ids = list(ids) if ids is not None else [('', '')] * len(self.trials)

    def __len__(self):
        return len(self.trials)

    def scores(self):
        return np.array([s for s, _ in self.trials], dtype=np.float64)

    def targets(self):
        return np.array([t for _, t in self.trials], dtype=bool)

    def write_csv(self, path):
        """ Write ``model_id,test_id,score,target`` rows. """

        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['model_id', 'test_id', 'score', 'target'])
            for (model_id, test_id), (score, target) in zip(self.ids, self.trials):
                writer.writerow([model_id, test_id, repr(score), int(target)])

    @classmethod
    def read_csv(cls, path):

        trials, ids = [], []
        with open(path, newline='') as f:
            for row in csv.DictReader(f):
                trials.append((float(row['score']), row['target'] == '1'))
                ids.append((row['model_id'], row['test_id']))

        return cls(trials, ids)


class DetCurve(object):
    """
    DET operating points ordered by rising threshold: false-accept rate falls from 1 to 0 while false-reject rate
    rises from 0 to 1.
    """

    def __init__(self, points, thresholds=None):
        self.points = [(float(far), float(frr)) for far, frr in points]
        self.thresholds = list(thresholds) if thresholds is not None else []

    def write_csv(self, path):
        """ Write ``far,frr`` rows and a gnuplot script ``<path>.gp`` next to them. """

        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['far', 'frr'])
            for far, frr in self.points:
                writer.writerow([repr(far), repr(frr)])

        with open(path + '.gp', 'w') as f:
            f.write("set datafile separator ','\n")
            f.write("set xlabel 'False Accept Rate'\n")
            f.write("set ylabel 'False Reject Rate'\n")
            f.write('set xrange [0:1]\nset yrange [0:1]\nset grid\n')
            f.write("plot '%s' every ::1 using 1:2 with lines title 'DET', x with dots notitle\n"
                    % os.path.basename(path))


def enroll_embeddings(embeddings, speaker_id=None):
    """ SpeakerModel from an (n, D) array of enrollment embeddings. """

    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    return SpeakerModel(speaker_id, embeddings.mean(axis=0), embeddings.shape[0])


def enroll(encoder, slices, speaker_id=None):
    """
    Enroll a speaker from a few slices.

    :param encoder: EncoderNet, run in inference mode.
    :param slices: FeatureSet, list of FbankSlice, or (n, H, W) array.
    :param speaker_id: Speaker identifier; taken from the slices when omitted.
    :return: SpeakerModel
    """

    if len(slices) == 0:
        raise ValueError('Enrollment Requires At Least One Slice')

    if isinstance(slices, (list, tuple)):
        slices = FeatureSet(slices)

    if isinstance(slices, FeatureSet):
        if speaker_id is None and slices.slices:
            speaker_id = slices.slices[0].speaker_id
        embeddings = embed_features(encoder, slices)
    else:
        embeddings = encode(encoder, np.asarray(slices, dtype=np.float32)).double().numpy()

    return enroll_embeddings(embeddings, speaker_id)


def score_trial(model, test_embedding):
    """ Cosine similarity of a test embedding to the model centroid, in [-1, 1]. """
    return float(np.clip(model.centroid.dot(_unit(test_embedding)), -1.0, 1.0))


def build_trials(models, tests):
    """
    Score every test against every model.

    :param models: List of SpeakerModel.
    :param tests: List of (test_id, speaker_id, embedding).
    :return: TrialScoreSet with len(models) * len(tests) trials.
    """

    trials, ids = [], []
    for model in models:
        for test_id, speaker_id, embedding in tests:
            trials.append((score_trial(model, embedding), speaker_id == model.speaker_id))
            ids.append((model.speaker_id, test_id))

    return TrialScoreSet(trials, ids)


def operating_points(trials):
    """
    False-accept and false-reject rates at every distinct score used as threshold (accept when score >= threshold),
    plus +inf where everything is rejected.

    :return: (thresholds, far, frr) arrays, thresholds ascending.
    """

    scores = trials.scores()
    targets = trials.targets()
    tar = np.sort(scores[targets])
    non = np.sort(scores[~targets])

    if len(tar) == 0 or len(non) == 0:
        raise ValueError('Trials Need Both Target And Non-Target Scores')

    thresholds = np.append(np.unique(scores), np.inf)
    far = (len(non) - np.searchsorted(non, thresholds, side='left')) / float(len(non))
    frr = np.searchsorted(tar, thresholds, side='left') / float(len(tar))

    return thresholds, far, frr


def compute_eer(trials):
    """
    Equal error rate, the point where false-accept and false-reject rates cross. Between two adjacent operating
    points the crossing is linearly interpolated.

    :param trials: TrialScoreSet with target and non-target trials.
    :return: (eer, threshold)
    """

    thresholds, far, frr = operating_points(trials)
    diff = far - frr

    i = int(np.argmax(diff <= 0))
    if diff[i] == 0:
        eer, threshold = far[i], thresholds[i]
    else:
        lam = diff[i - 1] / (diff[i - 1] - diff[i])
        eer = far[i - 1] + lam * (far[i] - far[i - 1])
        if np.isfinite(thresholds[i]):
            threshold = thresholds[i - 1] + lam * (thresholds[i] - thresholds[i - 1])
        else:
            threshold = thresholds[i - 1]

    if eer > 0.5:
        log.warning('EER %.4f above 0.5, scores look inverted', eer)

    return float(eer), float(threshold)


def compute_accuracy(trials):
    """
    Best-threshold verification accuracy; ties go to the lowest threshold.

    :return: (accuracy, threshold)
    """

    scores = trials.scores()
    targets = trials.targets()

    if len(scores) == 0:
        raise ValueError('Accuracy Requires At Least One Trial')

    tar = np.sort(scores[targets])
    non = np.sort(scores[~targets])
    thresholds = np.append(np.unique(scores), np.inf)

    correct = (len(tar) - np.searchsorted(tar, thresholds, side='left')) + np.searchsorted(non, thresholds, side='left')
    best = int(np.argmax(correct))

    return float(correct[best]) / len(scores), float(thresholds[best])


def det_curve(trials, n_points=None):
    """
    DET curve over the full threshold sweep, optionally thinned to about n_points points (end points kept).

    :return: DetCurve
    """

    thresholds, far, frr = operating_points(trials)
    keep = np.arange(len(thresholds))

    if n_points and len(keep) > n_points:
        keep = np.unique(np.round(np.linspace(0, len(keep) - 1, n_points)).astype(int))

    return DetCurve(zip(far[keep], frr[keep]), thresholds[keep])


def split_enroll_test(features, speaker_ids, n_enroll=3, n_test=7, seed=0):
    """
    Choose enrollment and test utterances per speaker: utterances are shuffled with the seed, the first n_enroll
    enroll and the next n_test are tested. Speakers with too few utterances keep at least one of each.

    :return: (enroll dict speaker_id -> slice positions, tests list of (utterance_id, speaker_id, slice positions))
    """

    rng = np.random.default_rng(seed)
    by_utterance = features.indices_by_utterance()

    utterances = {}
    for utterance_id in sorted(by_utterance):
        speaker_id = features.slices[by_utterance[utterance_id][0]].speaker_id
        utterances.setdefault(speaker_id, []).append(utterance_id)

    enroll_positions, tests = {}, []
    for speaker_id in speaker_ids:
        utts = [utterances[speaker_id][i] for i in rng.permutation(len(utterances.get(speaker_id, [])))]
        if len(utts) < 2:
            raise ValueError('Speaker %s Needs At Least 2 Utterances For Enroll/Test' % speaker_id)

        k = max(1, min(n_enroll, len(utts) - 1))
        enroll_positions[speaker_id] = [i for u in utts[:k] for i in by_utterance[u]]
        tests.extend((u, speaker_id, by_utterance[u]) for u in utts[k:k + n_test])

    return enroll_positions, tests


def evaluate(encoder, features, speaker_ids, n_enroll=3, n_test=7, seed=0):
    """
    Run the enroll/test protocol on held-out speakers. Test utterances made of several slices are scored with the
    mean of their slice embeddings.

    :param encoder: EncoderNet
    :param features: FeatureSet holding the held-out speakers.
    :param speaker_ids: Speakers to enroll and test.
    :return: AttrDict with eer, eer_threshold, acc, acc_threshold, trials (TrialScoreSet) and models.
    """

    enroll_positions, tests = split_enroll_test(features, speaker_ids, n_enroll, n_test, seed)
    embeddings = embed_features(encoder, features)

    models = [enroll_embeddings(embeddings[enroll_positions[s]], s) for s in speaker_ids]
    test_embeddings = [(u, s, embeddings[positions].mean(axis=0)) for u, s, positions in tests]

    trials = build_trials(models, test_embeddings)
    eer, eer_threshold = compute_eer(trials)
    acc, acc_threshold = compute_accuracy(trials)

    return AttrDict({
        'eer': eer,
        'eer_threshold': eer_threshold,
        'acc': acc,
        'acc_threshold': acc_threshold,
        'trials': trials,
        'models': models,
    })


def embedding_dim_sweep(features, dims, config, out_dir=None):
    """
    Train and evaluate the toy pipeline once per embedding dimension.

    :param features: Full FeatureSet; held-out speakers are split off per config.holdout.
    :param dims: Embedding dimensions to try.
    :param config: TrainConfig; embed_dim is overridden per run.
    :param out_dir: Optional directory; each run writes into ``<out_dir>/dim<d>``.
    :return: List of AttrDict rows with dim, eer, acc.
    """

    from .Trainer import train_and_evaluate

    rows = []
    for dim in dims:
        run_dir = os.path.join(out_dir, 'dim%d' % dim) if out_dir else None
        result = train_and_evaluate(features, config.replace(embed_dim=dim), run_dir)
        rows.append(AttrDict({'dim': dim, 'eer': result.eer, 'acc': result.acc}))
        log.info('embedding dim %d: EER %.2f%%, ACC %.2f%%', dim, 100 * result.eer, 100 * result.acc)

    return rows
