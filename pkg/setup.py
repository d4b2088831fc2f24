from setuptools import setup

install_requires = [
    'attrdict3==2.0.2',
    'numpy>=1.22',
    'soundfile>=0.12',
    'torch>=2.0',
    'torchaudio>=2.0'
]

tests_requires = [
    'mock>=4.0'
]

setup(
    name='mtgan_speaker_verification',
    packages=['mtgan'],
    version='1.0.0',
    description='Speaker verification with a triplet-loss encoder trained jointly with a conditional GAN and a '
                'speaker-ID classifier.',
    author='frank',
    keywords=['speaker', 'verification', 'triplet', 'gan', 'wgan-gp', 'embedding', 'eer', 'det', 'mel'],
    license='BSD',
    install_requires=install_requires,
    tests_requires=tests_requires,
    entry_points={
        'console_scripts': ['mtgan=mtgan.Cli:main'],
    },
)
