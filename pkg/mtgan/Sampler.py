__author__ = 'frank'

import logging

import numpy as np

from .Errors import ConfigError

log = logging.getLogger(__name__)

SAMPLING_MODES = ['random', 'semi_hard']


class SamplingPlan(object):
    """
    Per-epoch triplet sampling plan. One epoch yields n * A * P * K * J triples.

    :param n: Speakers selected per epoch.
    :param anchors: Anchors per speaker (A).
    :param positives: Positives per anchor (P).
    :param other_classes: Other classes per (anchor, positive) (K), drawn from the n selected speakers.
    :param negatives: Negatives per other class (J).
    :param mode: ``random`` or ``semi_hard``.
    :param seed: Sampling seed.
    :param batch_size: Maximum number of distinct slices in one mini-batch.
    """

    def __init__(self, n, anchors=1, positives=1, other_classes=1, negatives=1, mode='random', seed=0,
                 batch_size=64):

        for name, value in [('n', n), ('anchors', anchors), ('positives', positives),
                            ('other_classes', other_classes), ('negatives', negatives)]:
            if value < 1:
                raise ConfigError('Sampling Count %s Must Be At Least 1' % name)

        if other_classes > n - 1:
            raise ConfigError('other_classes (%d) Must Be Below n (%d)' % (other_classes, n))

        if mode not in SAMPLING_MODES:
            raise ConfigError('Unsupported Sampling Mode: %s' % mode)

        self.n = n
        self.anchors = anchors
        self.positives = positives
        self.other_classes = other_classes
        self.negatives = negatives
        self.mode = mode
        self.seed = seed
        self.batch_size = batch_size

    def pair_count(self):
        return self.n * self.anchors * self.positives * self.other_classes * self.negatives


class TripletBatch(object):
    """
    (anchor, positive, negative) slice positions into a FeatureSet.

    :param triples: List of (anchor, positive, negative) index tuples.
    :param fallback: Optional per-triple flags, True where mining found no semi-hard negative.
    """

    def __init__(self, triples, fallback=None):

        self.triples = [tuple(int(i) for i in t) for t in triples]
        self.fallback = list(fallback) if fallback is not None else [False] * len(self.triples)

    def __len__(self):
        return len(self.triples)

    def positions(self):
        """ Sorted distinct slice positions used by the batch. """
        return sorted(set(i for t in self.triples for i in t))

    def local_triples(self):
        """
        Triples re-indexed into positions().

        :return: (positions, (N, 3) int64 array of local indices)
        """
        positions = self.positions()
        local = dict((p, i) for i, p in enumerate(positions))
        return positions, np.array([[local[i] for i in t] for t in self.triples], dtype=np.int64).reshape(-1, 3)

    def check(self, features):
        """ Raise ValueError unless every triple satisfies the speaker constraints. """

        failures = []
        for a, p, n in self.triples:
            sa, sp, sn = [features.slices[i].speaker_id for i in (a, p, n)]
            if a == p:
                failures.append('anchor equals positive (%d)' % a)
            if sa != sp:
                failures.append('positive %d not from anchor speaker' % p)
            if sa == sn:
                failures.append('negative %d from anchor speaker' % n)

        if failures:
            raise ValueError('Invalid TripletBatch [FAILURES: ' + ', '.join(failures) + ']')


def epoch_pair_count(plan):
    """ n * A * P * K * J """
    return plan.pair_count()


def _epoch_rng(plan, epoch):
    return np.random.default_rng([plan.seed, epoch])


def _eligible_groups(plan, features):

    groups = features.indices_by_speaker()

    eligible = []
    for speaker_id in features.speakers():
        if len(groups[speaker_id]) < 2:
            log.warning('speaker %s has %d slice(s), skipped for triplet sampling',
                        speaker_id, len(groups[speaker_id]))
            continue
        eligible.append(speaker_id)

    if len(eligible) < 2:
        raise ConfigError('Fewer Than 2 Speakers With At Least 2 Slices')

    if plan.n > len(eligible):
        raise ConfigError('Plan Needs %d Speakers But Only %d Are Eligible' % (plan.n, len(eligible)))

    return eligible, groups


def _chunk(triples, batch_size):

    current, seen = [], set()
    for t in triples:
        merged = seen | set(t)
        if current and len(merged) > batch_size:
            yield TripletBatch(current)
            current, merged = [], set(t)
        current.append(t)
        seen = merged

    if current:
        yield TripletBatch(current)


def sample_random(plan, features, epoch=0):
    """
    Random triplet sampling for one epoch: n speakers, A anchors each, P positives per anchor, K other classes among
    the selected speakers per (anchor, positive) and J random negatives per class.

    :param plan: SamplingPlan
    :param features: FeatureSet
    :param epoch: Epoch number; (seed, epoch) fixes the stream.
    :return: Iterator of TripletBatch, each touching at most plan.batch_size distinct slices.
    """

    eligible, groups = _eligible_groups(plan, features)
    rng = _epoch_rng(plan, epoch)
    speakers = [eligible[i] for i in rng.choice(len(eligible), size=plan.n, replace=False)]

    triples = []
    for speaker_id in speakers:
        own = groups[speaker_id]
        others = [s for s in speakers if s != speaker_id]

        for _ in range(plan.anchors):
            anchor = own[rng.integers(len(own))]
            candidates = [i for i in own if i != anchor]

            for _ in range(plan.positives):
                positive = candidates[rng.integers(len(candidates))]

                for k in rng.choice(len(others), size=plan.other_classes, replace=False):
                    pool = groups[others[k]]
                    for _ in range(plan.negatives):
                        triples.append((anchor, positive, pool[rng.integers(len(pool))]))

    return _chunk(triples, plan.batch_size)


def cosine_distance_matrix(embeddings):
    """ (M, M) matrix of 1 - e_i.e_j for unit-norm rows, in float64. """
    e = np.asarray(embeddings, dtype=np.float64)
    return 1.0 - e.dot(e.T)


def mine_negatives(distances, anchor, positive, candidates, count, margin):
    """
    Pick `count` negatives for one (anchor, positive) pair from one negative class.

    Candidates are ranked by tier, then key, then index: tier 0 is the semi-hard window d_ap < d_an < d_ap + margin
    (closest first); tier 1 is d_an >= d_ap outside the window (closest first, the hardest feasible negative);
    tier 2 is d_an < d_ap (farthest first). When the class has fewer than `count` slices the ranking is cycled.

    :param distances: (M, M) cosine distance matrix of the mini-batch.
    :param anchor: Local anchor index.
    :param positive: Local positive index.
    :param candidates: Local indices of the negative class.
    :param count: Negatives to return.
    :param margin: Triplet margin.
    :return: List of (local index, fallback flag).
    """

    d_ap = distances[anchor, positive]

    ranked = []
    for c in candidates:
        d_an = distances[anchor, c]
        if d_ap < d_an < d_ap + margin:
            ranked.append((0, d_an, c))
        elif d_an >= d_ap:
            ranked.append((1, d_an, c))
        else:
            ranked.append((2, -d_an, c))

    ranked.sort()
    return [(ranked[i % len(ranked)][2], ranked[i % len(ranked)][0] > 0) for i in range(count)]


def _mining_groups(speakers, plan):

    group_size = min(len(speakers), max(plan.other_classes + 1, plan.batch_size // 8))
    chunks = [speakers[i:i + group_size] for i in range(0, len(speakers), group_size)]

    if len(chunks) > 1 and len(chunks[-1]) < plan.other_classes + 1:
        chunks[-2].extend(chunks.pop())

    return chunks


def sample_semi_hard(plan, features, encoder, margin=0.2, epoch=0):
    """
    Semi-hard negative mining inside mini-batches. The n selected speakers are grouped into mini-batches of at most
    plan.batch_size slices (but never fewer than two per speaker); each mini-batch is embedded with the current
    encoder in inference mode just before its triples are mined, so the encoder may be updated between batches.

    :param plan: SamplingPlan
    :param features: FeatureSet
    :param encoder: Callable mapping an (M, H, W) float32 array to (M, D) unit-norm embeddings (array or tensor).
    :param margin: Triplet margin defining the semi-hard window.
    :param epoch: Epoch number; (seed, epoch) fixes the stream for a frozen encoder.
    :return: Iterator of TripletBatch with fallback flags.
    """

    eligible, groups = _eligible_groups(plan, features)
    rng = _epoch_rng(plan, epoch)
    speakers = [eligible[i] for i in rng.choice(len(eligible), size=plan.n, replace=False)]
    matrices = features.matrices()

    for chunk in _mining_groups(speakers, plan):
        per_speaker = max(2, plan.batch_size // len(chunk))

        local_groups = {}
        positions = []
        for speaker_id in chunk:
            picked = list(rng.permutation(groups[speaker_id])[:per_speaker])
            local_groups[speaker_id] = list(range(len(positions), len(positions) + len(picked)))
            positions.extend(int(i) for i in picked)

        embeddings = encoder(matrices[positions])
        if hasattr(embeddings, 'detach'):
            embeddings = embeddings.detach().cpu().numpy()
        distances = cosine_distance_matrix(embeddings)

        triples, fallback = [], []
        for speaker_id in chunk:
            own = local_groups[speaker_id]
            others = [s for s in chunk if s != speaker_id]

            for _ in range(plan.anchors):
                anchor = own[rng.integers(len(own))]
                candidates = [i for i in own if i != anchor]

                for _ in range(plan.positives):
                    positive = candidates[rng.integers(len(candidates))]

                    for k in rng.choice(len(others), size=plan.other_classes, replace=False):
                        mined = mine_negatives(distances, anchor, positive, local_groups[others[k]],
                                               plan.negatives, margin)
                        for negative, flag in mined:
                            triples.append((positions[anchor], positions[positive], positions[negative]))
                            fallback.append(flag)

        if any(fallback):
            log.debug('semi-hard fallback used for %d of %d triples', sum(fallback), len(fallback))

        yield TripletBatch(triples, fallback)


def sample_epoch(plan, features, encoder=None, margin=0.2, epoch=0):
    """ Dispatch to sample_random() or sample_semi_hard() by plan.mode. """

    if plan.mode == 'semi_hard':
        if encoder is None:
            raise ValueError('Encoder Required For Semi-Hard Sampling')
        return sample_semi_hard(plan, features, encoder, margin, epoch)

    return sample_random(plan, features, epoch)


def dump_triples(batches, path, epoch=0):
    """
    Append sampled triples to a whitespace-separated audit log: ``epoch batch anchor positive negative fallback``.
    """

    with open(path, 'a') as f:
        for b, batch in enumerate(batches):
            for (a, p, n), flag in zip(batch.triples, batch.fallback):
                f.write('%d %d %d %d %d %d\n' % (epoch, b, a, p, n, int(flag)))
