from setuptools import setup, find_packages

setup(
    name="survoptim",
    version="0.1",
    packages=find_packages(exclude=["tests", "examples", "examples.*"]),
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.10",
        "pandas>=1.5",
        "joblib>=1.2",
    ],
    extras_require={
        "test": ["pytest"],
    },
    entry_points={
        'console_scripts': [
            'survoptim=survoptim.main:main',
        ],
    },
)
