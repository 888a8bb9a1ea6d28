# Makes mapping a package.
