from setuptools import setup, find_packages  # Always prefer setuptools over distutils
from codecs import open  # To use a consistent encoding
from os import path

here = path.abspath(path.dirname(__file__))

# Get the long description from the relevant file
with open(path.join(here, 'README.rst'), encoding='utf-8') as f:
    long_description = f.read()

with open(path.join(here, 'requirements.txt'), encoding='utf-8') as f:
    install_requires = [line.strip() for line in f
                        if line.strip() and not line.startswith('#')]

setup(
    name='''claf''',

    # Versions should comply with PEP440.
    version='1.0.0',

    description='''Supervised contrastive learning with adversarial positives''',
    long_description=long_description,

    license='MIT',

    # See https://pypi.python.org/pypi?%3Aaction=list_classifiers
    classifiers=[
        'Development Status :: 4 - Beta',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'Operating System :: OS Independent',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ],

    keywords='''contrastive learning adversarial robustness CIFAR-10''',

    packages=find_packages(exclude=['contrib', 'docs', 'tests*']),
    python_requires='>=3.8',
    install_requires=install_requires,

    include_package_data=True,

    # To provide executable scripts, use entry points in preference to the
    # "scripts" keyword.
    entry_points='''
        [console_scripts]
        claf = claf.cli:main
    ''',
)
