# -*- coding: utf-8 -*-
import os

from setuptools import find_packages, setup


# Include __about__.py.
__dir__ = os.path.dirname(__file__)
about = {}
with open(os.path.join(__dir__, 'surveypost', '__about__.py')) as f:
    exec(f.read(), about)


setup(
    name='surveypost',
    version=about['__version__'],
    license=about['__license__'],
    author=about['__author__'],
    maintainer=about['__maintainer__'],
    maintainer_email=about['__maintainer_email__'],
    description='Sandwich adjusted pseudo-posteriors for survey data',
    platforms='any',
    packages=find_packages(exclude=['examples', 'examples.*']),
    package_data={'surveypost': ['data/*.csv']},
    zip_safe=False,
    python_requires='>=3.8',
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Developers',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Operating System :: OS Independent',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: Implementation :: CPython',
        'Topic :: Scientific/Engineering :: Mathematics',
        'Topic :: Software Development :: Libraries :: Python Modules',
    ],
    install_requires=['bidict', 'numpy>=1.17', 'pandas>=1.0', 'scipy>=1.4'],
    tests_require=['pytest'],
    entry_points={'console_scripts': ['surveypost = surveypost.cli:main']},
)
