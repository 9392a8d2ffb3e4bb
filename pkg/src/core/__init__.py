# Core structure package
