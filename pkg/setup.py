from setuptools import find_packages, setup

setup(
    name='weakrank',
    package_dir={'': 'src'},
    packages=find_packages(where='src'),
    version='1.0.0',
    description='weakly-supervised instance retrieval with pseudo-attributes',
    license='MIT',
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.24.3',
        'scipy>=1.10.1',
        'pandas>=2.0',
        'matplotlib>=3.7.3',
        'pyyaml>=6.0',
        'torch>=1.13.1',
        'tqdm>=4.66.2',
        'joblib>=1.2.0',
    ],
    extras_require={'test': ['pytest>=7.4']},
    entry_points={'console_scripts': ['weakrank=weakrank.cli:main']},
)
