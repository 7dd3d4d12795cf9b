from setuptools import setup, find_packages

setup(
    name="mvfilter",
    version="0.1.0",
    description="Multiscale McKean-Vlasov toolkit: fast-slow simulation, ergodic averages, averaging rates and particle filtering experiments.",
    packages=find_packages(exclude=['tests', 'tests.*', 'tools', 'samples']),
    install_requires=[
        'numpy>=1.22',
        'scipy>=1.9',
        'python-dotenv>=0.21',
    ],
    extras_require={
        'test': ['pytest>=7'],
    },
    entry_points={
        'console_scripts': ['mvfilter=mvfilter.cli:main'],
    },
    python_requires='>=3.8',
    classifiers=[
        'Programming Language :: Python :: 3',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
    ],
)
