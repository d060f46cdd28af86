from pathlib import Path

import setuptools

from primflow_cli.get_version import git_revision, git_tag, version

HERE = Path(__file__).parent


def read_requirements(name: str) -> list:
    lines = (HERE / name).read_text().splitlines()
    return [line for line in lines if line and not line.startswith("#")]


def read_extras(name: str) -> dict:
    # "#/<extra>" starts a group, every following requirement line belongs to it
    extras = {}
    group = None
    for line in (HERE / name).read_text().splitlines():
        if line.startswith("#/"):
            group = extras.setdefault(line[2:].strip(), [])
        elif line and not line.startswith("#") and group is not None:
            group.append(line)
    extras["all"] = sorted({dep for deps in extras.values() for dep in deps})
    return extras


readme = HERE / "README.md"
long_desc = readme.read_text() if readme.exists() else ""

(HERE / "primflow_cli" / "version.py").write_text(
    "# Generated in setup.py\n\n"
    f"git_tag = {git_tag!r}\n"
    f"git_revision = {git_revision!r}\n"
    f"version = {version!r}\n"
)

setuptools.setup(
    name="primflow",
    version=version,
    description="Compositional trajectory generation with learned motion primitives "
    "and flow matching over placements.",
    long_description=long_desc,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["tests", "tests.*"]),
    install_requires=read_requirements("requirements.txt"),
    extras_require=read_extras("optional-requirements.txt"),
    python_requires="~=3.9",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "License :: OSI Approved :: Mozilla Public License 2.0 (MPL 2.0)",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Programming Language :: Python :: 3",
    ],
    package_data={"primflow_cli": ["example-config.yaml"]},
    entry_points={"console_scripts": ["primflow=primflow_cli.__main__:main"]},
)
