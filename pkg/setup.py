try:
    from setuptools import setup, find_packages
except ImportError:
    import distribute_setup
    distribute_setup.use_setuptools()
    from setuptools import setup, find_packages

setup(
    name='chorus',
    version='0.1',
    packages=find_packages(exclude=['test', 'examples', 'examples.*']),
    description='Multi-modal gaze target detection: audio-driven speaker identification feeding a gaze candidate detector.',
    test_suite='test',
    install_requires=[
        'numpy>=1.20',
        'scipy>=1.6',
        'Pillow>=8.0',
    ],
    tests_require=[
        'mock>=3.0',
        'hypothesis>=5.0',
    ],
    entry_points={
        'console_scripts': [
            'chorus = chorus.cli:main',
        ],
    },
    classifiers=[
        'Intended Audience :: Science/Research',
        'Development Status :: 3 - Alpha',
    ],
    keywords="gaze following active speaker detection audio visual region proposal"
)
