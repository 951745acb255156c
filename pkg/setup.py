from setuptools import setup
import re

# single source of the version: pycredible/_version.py
VERSIONFILE = "pycredible/_version.py"
with open(VERSIONFILE, "rt") as f:
    verstrline = f.read()
VSRE = r"^__version__ = ['\"]([^'\"]*)['\"]"
mo = re.search(VSRE, verstrline, re.M)
if mo:
    version_str = mo.group(1)
else:
    raise RuntimeError(f"Unable to find version string in {VERSIONFILE}")


setup(
    name='pycredible',
    version=version_str,
    packages=['pycredible'],
    package_data={'pycredible': ['fixtures/*.json']},
    include_package_data=True,
    url='',
    license='',
    description='Credible autocoding of linear controllers: C code with ellipsoid invariants '
                'and an independent checker',
    classifiers=['Programming Language :: Python :: 3'],
    python_requires='>=3.9',
    install_requires=['numpy', 'pandas'],
    entry_points={'console_scripts': ['pycredible = pycredible.Cli:main']},
)
