# -------------------------------------------------------------
# setup.py - setuptools for packaging boundseg
# -------------------------------------------------------------

import setuptools

with open('docs/README.md', 'r') as f:
    long_description = f.read()

with open('requirements.txt', 'r') as f:
    requirements = f.read()
    requirements = requirements.split()


setuptools.setup(
    name='boundseg',
    version='0.1dev1',
    packages=setuptools.find_packages(exclude=['examples', 'examples.*']),
    description='Boundary-aware semi-supervised nuclei instance segmentation '
                'on synthetic pathology scenes.',
    long_description=long_description,
    long_description_content_type="text/markdown",
    keywords='nuclei instance segmentation semi-supervised contrastive '
             'pseudo-label',
    package_data={
        '': ['*.txt', '.coveragerc'],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "Development Status :: 3 - Alpha",
        "Topic :: Scientific/Engineering :: Image Recognition",
        "License :: OSI Approved :: MIT License",
    ],
    python_requires='>=3.8',
    entry_points={
        'console_scripts': [
            'boundseg=boundseg.__main__:main',
            'boundseg_test=boundseg.test:main'
        ]
    },
    install_requires=requirements
)
