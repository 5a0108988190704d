# Init file for src package
