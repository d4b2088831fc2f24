__author__ = 'frank'

from mtgan.MtganClient import Mtgan
from mtgan.TrainConfig import TrainConfig

if __name__ == '__main__':

    out_dir = 'example_run'

    ##################
    # Configuration  #
    ##################
    # Downscaled networks on 64x64 inputs keep a CPU run to a few minutes
    config = TrainConfig(
        input_size=64,
        embed_dim=128,
        noise_dim=64,
        epochs=6,
        holdout=5,
        eval_every=2,
        fake_dump_every=3,
    )
    client = Mtgan(config)

    # Or load a key = value file
    # client = Mtgan.from_config_file('config.txt', seed=1)

    ############
    # Features #
    ############
    # Synthetic corpus: 20 speakers x 10 utterances
    features = client.synthesize(20, 10, out='corpus.mtgf')

    # Real audio: <root>/<speaker>/<utterance>.wav, 16-bit PCM mono
    # features = client.extract('wavs/', out='corpus.mtgf', workers=4)

    ############
    # Training #
    ############
    result = client.train(features, out_dir)
    print('trained %d steps, held out %s' % (result.state.step, ', '.join(result.state.holdout)))

    # Continue for more epochs from the last checkpoint
    client = Mtgan(config.replace(epochs=8))
    result = client.train(features, out_dir, result.checkpoint)

    #####################
    # Enroll and Score  #
    #####################
    models = client.enroll_speakers(result.checkpoint, features, 'models.json')
    scored = client.score(result.checkpoint, features, 'trials.csv', 'models.json')
    print('EER=%.2f%%, ACC=%.2f%%' % (100 * scored.eer, 100 * scored.acc))

    # DET curve as far,frr CSV plus a gnuplot script
    client.det(scored.trials, 'det.csv')

    ###############
    # Experiments #
    ###############
    for row in client.ablate(features, drops=['gan', 'softmax', 'triplet'], sampling=['random', 'semi_hard'],
                             people=[5, 15]):
        print('%-20s EER=%.2f%% ACC=%.2f%%' % (row.condition, 100 * row.eer, 100 * row.acc))

    for row in client.sweep_embedding_dims(features, [64, 128, 256, 512]):
        print('dim %4d EER=%.2f%%' % (row.dim, 100 * row.eer))
