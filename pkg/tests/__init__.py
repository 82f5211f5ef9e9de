# Enables unittest discovery to recurse into this directory.
