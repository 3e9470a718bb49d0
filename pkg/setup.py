from setuptools import setup, find_packages

setup(
    name='eksim',
    version="0.1.0",
    packages=find_packages(exclude=["test", "test.*"]),
    include_package_data=True,
    python_requires=">=3.7",
    install_requires=[
        'click',
        'numpy>=1.17',
        'scipy',
        'tabulate',
    ],
    entry_points='''
        [console_scripts]
        eksim=eksim.cli:main
    ''',
)
