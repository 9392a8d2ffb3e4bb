# File format parsers
