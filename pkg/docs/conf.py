# Configuration file for the Sphinx documentation builder.

# -- Project information
import re

project = "aimcsim"
author = "aimcsim contributors"

# The version lives in the package; read it without importing the package so docs
# build without its runtime dependencies.
pattern = r'^__version__\s*=\s*"([^"]+)"'
with open("../src/aimcsim/__init__.py", "r") as file:
    text = file.read()

version = re.search(pattern, text, re.MULTILINE).group(1)
release = version
copyright = "2026, aimcsim contributors"

# -- General configuration

extensions = [
    "myst_parser",
    "sphinx_copybutton",
    "sphinx.ext.duration",
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.intersphinx",
    "sphinx_rtd_theme",
]

intersphinx_mapping = {
    "python": ("https://docs.python.org/3/", None),
}
intersphinx_disabled_domains = ["std"]

templates_path = ["_templates"]

# -- Options for HTML output

html_theme = "sphinx_rtd_theme"

# -- Options for EPUB output
epub_show_urls = "footnote"
