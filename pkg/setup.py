# Fix for older setuptools
import os

from setuptools import setup, find_packages


def read(fname):
    return open(os.path.join(os.path.dirname(__file__), fname)).read()


def desc():
    info = read('README.rst')
    try:
        return info + '\n\n' + read('doc/changelog.rst')
    except IOError:
        return info

setup(
    name='weave-lab',
    version='0.1.0',
    license='BSD',
    description='Thread density estimation for plain-weave canvases from radiographs.',
    long_description=desc(),
    packages=find_packages(),
    include_package_data=True,
    zip_safe=False,
    platforms='any',
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.21',
        'scipy>=1.7',
        'Pillow>=8.0',
        'matplotlib>=3.4',
        'Flask>=2.0',
        'Werkzeug>=2.0',
        'WTForms>=3.0',
        'click>=8.0',
    ],
    extras_require={
        'test': ['pytest>=7.0'],
        'doc': ['Sphinx'],
    },
    entry_points={
        'console_scripts': ['weave-lab = weave_lab.cli:main'],
    },
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Image Recognition',
    ],
)
