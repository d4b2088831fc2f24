__author__ = 'frank'

import json
import logging
import os

from attrdict import AttrDict

from .Errors import ConfigError
from .EvalKit import (SpeakerModel, build_trials, compute_accuracy, compute_eer, det_curve, embedding_dim_sweep,
                      enroll_embeddings, split_enroll_test)
from .FeatureIO import extract_features, load_features, make_synthetic_corpus, read_wav, save_features, \
    scan_wav_directory
from .Nets import embed_features
from .TrainConfig import TrainConfig
from .Trainer import load_networks, resume, split_speakers, train, train_and_evaluate

log = logging.getLogger(__name__)

ABLATIONS = {
    'gan': ('w/o GAN', {'use_gan': False}),
    'softmax': ('w/o softmax loss', {'use_softmax': False}),
    'triplet': ('w/o triplet loss', {'use_triplet': False}),
}


class Mtgan:
    """
    Pipeline facade: feature preparation, training, enrollment, scoring and the experiment tables.

    :param config: TrainConfig; defaults when omitted.
    """

    def __init__(self, config=None):

        self.config = config or TrainConfig()

    @classmethod
    def from_config_file(cls, path, seed=None):
        """
        Instantiate from a ``key = value`` config file, optionally overriding its seed.

        :param path: Config file path.
        :param seed: Seed override (CLI ``--seed`` or ``MTGAN_SEED``).
        :return: Mtgan
        """

        config = TrainConfig.from_file(path)
        if seed is not None:
            config = config.replace(seed=seed)

        return cls(config)

    # Feature Operations #
    def synthesize(self, n_speakers, utts_per_speaker, seed=None, out=None, n_frames=None, n_mels=None):
        """
        Build the synthetic corpus, sized to the config's input_size unless n_frames/n_mels are given.

        :return: FeatureSet
        """

        features = make_synthetic_corpus(
            n_speakers,
            utts_per_speaker,
            self.config.seed if seed is None else seed,
            n_frames or self.config.input_size,
            n_mels or self.config.input_size,
        )
        features.set_config(self.config)

        if out:
            save_features(features, out)

        return features

    def extract(self, wav_root, out=None, workers=1):
        """
        Featurize ``<wav_root>/<speaker>/<utterance>.wav`` files (16-bit PCM mono) into 2 s log-mel slices.

        :return: FeatureSet
        """

        utterances = [read_wav(path, speaker_id, utterance_id)
                      for path, speaker_id, utterance_id in scan_wav_directory(wav_root)]

        features = extract_features(utterances, n_mels=self.config.input_size, n_frames=self.config.input_size,
                                    workers=workers)
        features.set_config(self.config)

        if out:
            save_features(features, out)

        return features

    def load(self, path):
        features = load_features(path)
        features.set_config(self.config)
        return features

    # Training Operations #
    def train(self, features, out_dir, checkpoint=None):
        """
        Hold out config.holdout speakers and train on the rest, or continue from `checkpoint`.

        :return: AttrDict from Trainer.train()
        """

        train_ids, heldout = split_speakers(features, self.config.holdout, self.config.seed)
        train_features = features.subset(train_ids)
        eval_features = features.subset(heldout) if heldout else None

        if checkpoint:
            result = resume(checkpoint, train_features, self.config, out_dir, eval_features, heldout)
        else:
            result = train(train_features, self.config, out_dir, eval_features, heldout)

        result.state.set_config(self.config)
        return result

    # Enroll / Test Operations #
    def _heldout(self, payload, features):

        heldout = payload['holdout'] or sorted(set(features.speaker_index) - set(payload['speaker_index']))
        missing = sorted(set(heldout) - set(features.speaker_index))
        if missing:
            raise ConfigError('Held-Out Speakers Missing From Features: %s' % ', '.join(missing))

        return heldout

    def enroll_speakers(self, checkpoint, features, out=None):
        """
        Enroll the checkpoint's held-out speakers from their enrollment utterances.

        :return: List of SpeakerModel. Written as JSON to `out` when given.
        """

        nets, config, payload = load_networks(checkpoint)
        heldout = self._heldout(payload, features)
        subset = features.subset(heldout)

        enroll_positions, _ = split_enroll_test(subset, heldout, config.n_enroll, config.n_test, config.seed)
        embeddings = embed_features(nets.encoder, subset)
        models = [enroll_embeddings(embeddings[enroll_positions[s]], s) for s in heldout]

        for model in models:
            model.set_config(config)

        if out:
            with open(out, 'w') as f:
                json.dump([m.to_dict() for m in models], f)

        return models

    def score(self, checkpoint, features, trials_out=None, models=None):
        """
        Score the held-out test utterances against every enrolled model.

        :param checkpoint: Checkpoint path.
        :param features: FeatureSet containing the held-out speakers.
        :param trials_out: Optional trial CSV path.
        :param models: Optional speaker model JSON written by enroll_speakers(); enrolled on the fly otherwise.
        :return: AttrDict with eer, eer_threshold, acc, acc_threshold and trials.
        """

        nets, config, payload = load_networks(checkpoint)
        heldout = self._heldout(payload, features)
        subset = features.subset(heldout)

        enroll_positions, tests = split_enroll_test(subset, heldout, config.n_enroll, config.n_test, config.seed)
        embeddings = embed_features(nets.encoder, subset)

        if models:
            with open(models) as f:
                speaker_models = [SpeakerModel.from_dict(d) for d in json.load(f)]
        else:
            speaker_models = [enroll_embeddings(embeddings[enroll_positions[s]], s) for s in heldout]

        trials = build_trials(speaker_models, [(u, s, embeddings[p].mean(axis=0)) for u, s, p in tests])
        if trials_out:
            trials.write_csv(trials_out)

        eer, eer_threshold = compute_eer(trials)
        acc, acc_threshold = compute_accuracy(trials)

        return AttrDict({'eer': eer, 'eer_threshold': eer_threshold, 'acc': acc, 'acc_threshold': acc_threshold,
                         'trials': trials})

    def det(self, trials, out, n_points=200):
        """
        Write the DET curve of a TrialScoreSet as ``far,frr`` CSV plus a gnuplot script.

        :return: DetCurve
        """

        curve = det_curve(trials, n_points)
        curve.write_csv(out)
        return curve

    # Experiment Operations #
    def sweep_embedding_dims(self, features, dims, out_dir=None):
        return embedding_dim_sweep(features, dims, self.config, out_dir)

    def _run(self, features, label, config, out_dir, max_train_speakers=None):

        run_dir = os.path.join(out_dir, label.replace(' ', '_').replace('/', '').replace('#', '')) if out_dir else None
        result = train_and_evaluate(features, config, run_dir, max_train_speakers)
        log.info('%s: EER %.2f%%, ACC %.2f%%', label, 100 * result.eer, 100 * result.acc)

        return AttrDict({'condition': label, 'eer': result.eer, 'acc': result.acc, 'convergence': result.best_epoch})

    def ablate(self, features, drops=('gan', 'softmax', 'triplet'), sampling=(), people=(), train_speakers=(),
               out_dir=None):
        """
        Ablation table: one row per dropped module, then the full system; optional sampling-method rows for each
        per-epoch speaker count in `people`, and rows training on fewer speakers.

        :param drops: Subset of ``gan``, ``softmax``, ``triplet``.
        :param sampling: Subset of ``random``, ``semi_hard``.
        :param people: Per-epoch speaker counts for the sampling rows, capped at the training speakers available.
        :param train_speakers: Training-speaker counts for the speaker-count rows.
        :return: List of AttrDict rows with condition, eer, acc and convergence (best epoch or None).
        """

        unknown = sorted(set(drops) - set(ABLATIONS))
        if unknown:
            raise ConfigError('Unknown Ablation: %s' % ', '.join(unknown))

        rows = []
        for name in drops:
            label, overrides = ABLATIONS[name]
            rows.append(self._run(features, label, self.config.replace(**overrides), out_dir))

        rows.append(self._run(features, 'MTGAN', self.config, out_dir))

        n_train = len(features.speaker_index) - self.config.holdout
        for mode in sampling:
            for n in people or [self.config.plan_speakers or n_train]:
                label = '%s (#%d)' % ('Semi-hard' if mode == 'semi_hard' else 'Random', n)
                config = self.config.replace(sampling=mode, plan_speakers=min(n, n_train))
                rows.append(self._run(features, label, config, out_dir))

        for count in train_speakers:
            rows.append(self._run(features, '%d people' % count, self.config, out_dir, count))

        return rows
