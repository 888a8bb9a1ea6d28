# Makes channel a package.
