# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

from setuptools import setup, find_packages
from pathlib import Path

# read version
version_file = Path(__file__).parent / 'snnconv/_version.py'
dd = {}
with open(version_file.absolute(), 'r') as fp:
    exec(fp.read(), dd)
__version__ = dd['__version__']

# read long_description
long_description = (Path(__file__).parent / "README.md").read_text()

setup(
    name='snnconv',
    version=__version__,
    description="ANN to SNN conversion with local threshold balancing and delayed evaluation",
    long_description=long_description,
    long_description_content_type='text/markdown',
    license='Apache 2.0',
    packages=find_packages(exclude=['tests', 'examples*']),
    include_package_data=True,
    classifiers=[
        "Development Status :: 4 - Beta",
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        ],
    install_requires=[
        'numpy<2.0',
        'scipy',
        'h5py',
        'tqdm',
        ],
    entry_points={
        'console_scripts': ['snnconv = snnconv.cli:main'],
        },
    tests_require=['pytest'],
    )
