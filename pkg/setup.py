"""Setup script for Creator Feedback Lab."""
from setuptools import setup

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [
        line.strip() for line in fh
        if line.strip() and not line.startswith("#") and not line.startswith("pytest")
    ]

setup(
    name="creator-feedback-lab",
    version="1.0.0",
    author="Creator Feedback Lab Team",
    description="Simulated content ecosystem for ranking toward creator feedback and measuring the effect on content creation",
    long_description=long_description,
    long_description_content_type="text/markdown",
    py_modules=[
        "artifacts", "check_setup", "config", "datagen", "ecosystem", "errors", "experiments", "logger",
        "main", "metrics", "models", "ranking", "reporting", "sensitivity", "simulation", "trees",
    ],
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Information Analysis",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.12",
    ],
    python_requires=">=3.10",
    install_requires=requirements,
    extras_require={"dev": ["pytest==8.2.2"]},
    entry_points={
        "console_scripts": [
            "feedlab=main:main",
        ],
    },
)
