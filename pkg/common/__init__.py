# Makes common a package.
