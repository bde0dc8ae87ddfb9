import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name='basketdemand',
    version='0.1',
    description='Consideration-set constrained linear demand: equilibria, co-purchase proxies and estimation',
    long_description=long_description,
    long_description_content_type='text/markdown',
    packages=setuptools.find_packages(exclude=['tests']),
    python_requires='>=3.9',
    install_requires=['numpy>=1.22', 'scipy>=1.8', 'pandas>=2.0', 'linearmodels>=4.27', 'ruamel.yaml>=0.17'],
    extras_require={'test': ['pytest>=7']},
    entry_points={'console_scripts': ['basketdemand=basketdemand.cli:main']},
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: GNU General Public License v3 (GPLv3)",
        "Operating System :: OS Independent",
    ]
)
