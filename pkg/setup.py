from setuptools import setup

setup(
    name="src",
    packages=["src"],
    version="0.1",
    description="Partially relevant video retrieval with selective state space "
                "blocks and bidirectional temporal fusion",
    license='BSD-3',
    python_requires=">=3.8",
    entry_points={
        "console_scripts": ["mamfusion = src.cli:main"],
    },
)
