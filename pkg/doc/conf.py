# -*- coding: utf-8 -*-
#
# weave-lab documentation build configuration file.

import sys, os

# If extensions (or modules to document with autodoc) are in another directory,
# add these directories to sys.path here.
sys.path.insert(0, os.path.abspath('..'))

# -- General configuration -----------------------------------------------------

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.intersphinx', 'sphinx.ext.viewcode']

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'weave-lab'
copyright = '2026, weave-lab developers'

version = '0.1'
release = '0.1.0'

exclude_patterns = ['_build']
pygments_style = 'sphinx'

# Heavy numerical dependencies are not needed to render the API pages.
autodoc_mock_imports = ['scipy', 'matplotlib']

# -- Options for HTML output ---------------------------------------------------

html_theme = 'alabaster'
html_static_path = []
htmlhelp_basename = 'weave-lab'

# -- Options for manual page output --------------------------------------------

man_pages = [
    ('index', 'weave-lab', 'weave-lab documentation',
     ['weave-lab developers'], 1)
]

intersphinx_mapping = {'python': ('https://docs.python.org/3', None),
                       'numpy': ('https://numpy.org/doc/stable/', None)}
