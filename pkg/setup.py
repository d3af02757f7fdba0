#!/usr/bin/env python3
"""
Setup script for the kitsim package
"""

from setuptools import setup, find_packages

setup(
    name="kitsim",
    version="0.1.0",
    description="Kinetic traffic simulator with MPC-derived feedback controls",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.24.0",
        "scipy>=1.10.0",
        "pydantic>=2.0.0",
        "rich>=13.0.0",
        "tqdm>=4.65.0",
        "psutil>=5.9.0",
    ],
    extras_require={
        "test": ["pytest>=7.0.0"],
    },
    entry_points={
        "console_scripts": [
            "kitsim=kitsim.__main__:main",
        ],
    },
)
