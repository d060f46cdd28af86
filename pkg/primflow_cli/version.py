# Generated in setup.py

git_tag = None
git_revision = 'unknown'
version = '0.1.0+dev.unknown'
