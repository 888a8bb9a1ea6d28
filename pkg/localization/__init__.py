# Makes localization a package.
