"""
Setup script for panther_toy.
"""
from setuptools import setup, find_packages

setup(
    name="panther_toy",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),

    # Metadata
    author="Panther Toy Project",
    author_email="example@example.com",
    description="Instruction-prompted vision encoder, multi-turn visual token pruning and "
                "interleaved multi-turn training at toy scale",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],

    # Requirements
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.20",
        "tqdm>=4.60",
    ],
    extras_require={
        "test": ["hypothesis>=6.0"],
    },

    # Entry points
    entry_points={
        "console_scripts": [
            "panther=panther_toy.__main__:main",
        ],
    },
)
